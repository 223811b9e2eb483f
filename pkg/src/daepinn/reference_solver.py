"""Holds the fixed-step Newton implicit Runge-Kutta solver that produces reference trajectories"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from daepinn.dae_model import SemiExplicitDAE, consistent_z, jacobians
from daepinn.errors import NumericalFailure, StepFailure
from daepinn.tableau import ButcherTableau, gauss_legendre_tableau
from daepinn.trajectory import Trajectory
from daepinn.validators import validate_positive

logger = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    """Settings of the reference solver.

    Attributes
    ----------
    tableau: ButcherTableau
        The scheme, Gauss-Legendre with 3 stages by default.
    h_ref: float = 1e-3
        The step size.
    newton_tol: float = 1e-12
        Max-norm tolerance of the stage-system residual.
    newton_max_iter: int = 50
        Iteration cap of one step.
    """

    tableau: ButcherTableau = field(default_factory=lambda: gauss_legendre_tableau(3))
    h_ref: float = 1e-3
    newton_tol: float = 1e-12
    newton_max_iter: int = 50

    def __post_init__(self):
        validate_positive("h_ref", self.h_ref)
        validate_positive("newton_tol", self.newton_tol)
        if isinstance(self.newton_max_iter, bool) or not isinstance(self.newton_max_iter, int):
            raise ValueError(f"`newton_max_iter` must be an integer, found: {self.newton_max_iter!r}")
        if self.newton_max_iter < 1:
            raise ValueError(f"`newton_max_iter` must be positive, found: {self.newton_max_iter}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scheme": str(self.tableau.scheme),
            "nu": self.tableau.nu,
            "h_ref": self.h_ref,
            "newton_tol": self.newton_tol,
            "newton_max_iter": self.newton_max_iter,
        }


@dataclass
class StepResult:
    """Outcome of one implicit Runge-Kutta step"""

    y: np.ndarray
    z: np.ndarray
    Y_stages: np.ndarray
    Z_stages: np.ndarray
    iterations: int
    residual: float
    index1_margin: float


def _stage_residual(
    dae: SemiExplicitDAE, t: ButcherTableau, h: float, y_n: np.ndarray, Xi: np.ndarray, Zeta: np.ndarray
) -> np.ndarray:
    F = dae.eval_f(Xi, Zeta)
    G = dae.eval_g(Xi, Zeta)
    R_y = Xi - y_n[None, :] - h * (t.a @ F)
    return np.concatenate([R_y.reshape(-1), G.reshape(-1)])


def _stage_jacobian(
    dae: SemiExplicitDAE, t: ButcherTableau, h: float, Xi: np.ndarray, Zeta: np.ndarray
) -> Tuple[np.ndarray, float]:
    """Dense Jacobian of the stage system; unknowns ordered as all `xi` (stage-major) then all `zeta`"""
    nu, n, m = t.nu, dae.n, dae.m
    fy, fz, gy, gz = jacobians(dae, Xi, Zeta)
    J = np.zeros((nu * (n + m), nu * (n + m)))
    zo = nu * n
    for j in range(nu):
        rj, rz = slice(j * n, (j + 1) * n), slice(zo + j * m, zo + (j + 1) * m)
        for i in range(nu):
            ci, cz = slice(i * n, (i + 1) * n), slice(zo + i * m, zo + (i + 1) * m)
            J[rj, ci] = -h * t.a[j, i] * fy[i]
            J[rj, cz] = -h * t.a[j, i] * fz[i]
        J[rj, rj] += np.eye(n)
        J[rz, rj] = gy[j]
        J[rz, rz] = gz[j]
    margin = float(np.min(np.linalg.svd(gz, compute_uv=False)))
    return J, margin


def irk_step(
    dae: SemiExplicitDAE,
    y_n: np.ndarray,
    z_n: np.ndarray,
    cfg: SolverConfig,
    h: Optional[float] = None,
    time: float = 0.0,
) -> StepResult:
    """Advances a consistent point `(y_n, z_n)` by one implicit Runge-Kutta step.

    The coupled stage system `xi_j = y_n + h sum_i a_ji f(xi_i, zeta_i)`, `0 = g(xi_j, zeta_j)` is solved by Newton's
    method from the constant predictor `(y_n, z_n)`. The Jacobian comes from the autodiff engine and is refreshed
    whenever an iteration fails to halve the residual. The step end is `y_n + h sum_j b_j f(xi_j, zeta_j)` and the
    algebraic state is made consistent with it.

    Parameters
    ----------
    h: Optional[float] = None
        Step size, `cfg.h_ref` when unset.
    time: float = 0.0
        Start time of the step, reported on failure.

    Raises
    ------
    StepFailure
        When Newton does not reach `newton_tol` in `newton_max_iter` iterations or the stage Jacobian is singular.
    """
    t = cfg.tableau
    h = cfg.h_ref if h is None else h
    nu, n, m = t.nu, dae.n, dae.m
    y_n = np.asarray(y_n, dtype=np.float64).reshape(n)
    z_n = np.asarray(z_n, dtype=np.float64).reshape(m)
    Xi = np.tile(y_n, (nu, 1))
    Zeta = np.tile(z_n, (nu, 1))

    def fail(reason: str, residual: Optional[float]) -> StepFailure:
        return StepFailure(f"{reason} at t={time:.17g}; consider halving h_ref (currently {h:.3g})", time, residual)

    try:
        R = _stage_residual(dae, t, h, y_n, Xi, Zeta)
        res = float(np.max(np.abs(R)))
        J, margin = _stage_jacobian(dae, t, h, Xi, Zeta)
        it = 0
        while res > cfg.newton_tol:
            if it >= cfg.newton_max_iter:
                # roundoff floor of large right-hand sides
                if res <= 10.0 * cfg.newton_tol:
                    break
                raise fail(f"Newton did not converge in {cfg.newton_max_iter} iterations", res)
            try:
                dx = np.linalg.solve(J, -R)
            except np.linalg.LinAlgError:
                raise fail("Singular stage Jacobian", res) from None
            Xi = Xi + dx[: nu * n].reshape(nu, n)
            Zeta = Zeta + dx[nu * n :].reshape(nu, m)
            R = _stage_residual(dae, t, h, y_n, Xi, Zeta)
            new_res = float(np.max(np.abs(R)))
            if not math.isfinite(new_res):
                raise fail("Newton iterate left the domain", res)
            if new_res > 0.5 * res:
                J, margin = _stage_jacobian(dae, t, h, Xi, Zeta)
            res = new_res
            it += 1
    except ZeroDivisionError as e:
        raise fail(f"Evaluation failed ({e})", None) from e

    y_next = y_n + h * (t.b @ dae.eval_f(Xi, Zeta))
    try:
        z_next = consistent_z(dae, y_next, Zeta[-1], tol=cfg.newton_tol)
    except NumericalFailure as e:
        raise fail(f"Algebraic state at the step end could not be made consistent ({e})", e.residual) from e
    logger.debug("Step at t=%.6g converged in %d Newton iterations, residual %.3e", time, it, res)
    return StepResult(
        y=y_next, z=z_next, Y_stages=Xi, Z_stages=Zeta, iterations=it, residual=res, index1_margin=margin
    )


def solve(
    dae: SemiExplicitDAE,
    y0: Sequence[float],
    z_guess: Sequence[float],
    t_end: float,
    cfg: Optional[SolverConfig] = None,
    t0: float = 0.0,
) -> Trajectory:
    """Integrates from a consistent initialization of `(y0, z_guess)` up to `t0 + t_end` with fixed steps.

    When `t_end` is not a multiple of `h_ref` the last step is shortened, with a warning. Where several algebraic
    branches exist the trajectory follows the one selected by `z_guess`, recorded in `meta`.

    Raises
    ------
    StepFailure
        With the failing time attached.
    """
    cfg = cfg or SolverConfig()
    validate_positive("t_end", t_end)
    h = cfg.h_ref
    steps = max(1, math.ceil(t_end / h - 1e-9))
    h_last = t_end - (steps - 1) * h
    if abs(h_last - h) > 1e-9 * h:
        warnings.warn(
            f"t_end={t_end} is not a multiple of h_ref={h}; the last step is shortened to {h_last:.6g}",
            stacklevel=2,
        )

    y = np.asarray(y0, dtype=np.float64).reshape(dae.n)
    z = consistent_z(dae, y, z_guess, tol=cfg.newton_tol)
    times = np.empty(steps + 1)
    Y = np.empty((steps + 1, dae.n))
    Z = np.empty((steps + 1, dae.m))
    times[0], Y[0], Z[0] = t0, y, z
    min_margin = math.inf
    for k in range(steps):
        tk = t0 + k * h
        step = irk_step(dae, y, z, cfg, h=h if k < steps - 1 else h_last, time=tk)
        y, z = step.y, step.z
        min_margin = min(min_margin, step.index1_margin)
        times[k + 1], Y[k + 1], Z[k + 1] = (t0 + t_end if k == steps - 1 else tk + h), y, z

    logger.info("Solved `%s` over %d steps, min index-1 margin %.3e", dae.name, steps, min_margin)
    return Trajectory(
        times=times,
        Y=Y,
        Z=Z,
        y_labels=dae.y_labels,
        z_labels=dae.z_labels,
        meta={
            "model": dae.name,
            "solver": cfg.to_dict(),
            "z_guess": [float(v) for v in np.ravel(z_guess)],
            "z0": Z[0].tolist(),
            "steps": steps,
            "min_index1_margin": min_margin,
        },
        dydt=dae.eval_f(Y, Z),
        strict=True,
    )


def dense_eval(traj: Trajectory, t: Union[float, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Interpolates a trajectory: cubic Hermite in `y` using the stored `dydt`, linear in `z`.

    Stored nodes are reproduced exactly. Times within `1e-9 max(1, |t|)` outside the span are clamped onto it.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray]
        `(y, z)` for a scalar `t`, or stacked rows for an array of times.

    Raises
    ------
    ValueError
        When `t` lies outside the span of the trajectory or `dydt` is missing.
    """
    if traj.dydt is None:
        raise ValueError("Dense evaluation needs the `dydt` samples of the trajectory")
    ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
    lo, hi = traj.times[0], traj.times[-1]
    slack = 1e-9 * np.maximum(1.0, np.abs(ts))
    if np.any(ts < lo - slack) or np.any(ts > hi + slack):
        raise ValueError(f"Time {ts.min():.17g}..{ts.max():.17g} is outside the trajectory span [{lo}, {hi}]")
    ts = np.clip(ts, lo, hi)

    Y = np.empty((ts.shape[0], traj.Y.shape[1]))
    Z = np.empty((ts.shape[0], traj.Z.shape[1]))
    for idx, tq in enumerate(ts):
        k = int(np.searchsorted(traj.times, tq, side="left"))
        if k < len(traj) and traj.times[k] == tq:
            Y[idx], Z[idx] = traj.Y[k], traj.Z[k]
            continue
        k0, k1 = k - 1, k
        dt = traj.times[k1] - traj.times[k0]
        s = (tq - traj.times[k0]) / dt
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        Y[idx] = h00 * traj.Y[k0] + h10 * dt * traj.dydt[k0] + h01 * traj.Y[k1] + h11 * dt * traj.dydt[k1]
        Z[idx] = (1 - s) * traj.Z[k0] + s * traj.Z[k1]
    if np.ndim(t) == 0:
        return Y[0], Z[0]
    return Y, Z
