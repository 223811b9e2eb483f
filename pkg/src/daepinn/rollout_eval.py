"""Holds long-horizon simulation by recurrent stage prediction and the evaluation metrics against reference solves"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from daepinn.autodiff import Tensor
from daepinn.dae_model import SemiExplicitDAE, consistent_z
from daepinn.errors import DegenerateDenominatorError, NumericalFailure, RolloutDivergence
from daepinn.global_config import GlobalConfig
from daepinn.reference_solver import SolverConfig, dense_eval, irk_step, solve
from daepinn.tableau import ButcherTableau
from daepinn.trajectory import Trajectory

logger = logging.getLogger(__name__)


class StagePredictor(Protocol):
    """Anything that maps a batch `y_n` to stage predictions of one step of size `h`"""

    tableau: ButcherTableau
    h: float

    def predict_stages(self, params: Any, y_n: np.ndarray) -> Tuple[Any, Any]:
        ...


class IRKStagePredictor:
    """A stage predictor that solves the implicit Runge-Kutta step exactly with the reference solver.

    Rolling it out reproduces the reference solver's step sequence, which isolates the rollout bookkeeping from
    learning quality. Each call warm-starts the algebraic solve from the previous step end; `reset` returns to
    `z_guess`, and `simulate` resets before every rollout.
    """

    def __init__(
        self,
        dae: SemiExplicitDAE,
        tableau: ButcherTableau,
        h: float,
        newton_tol: float = 1e-12,
        z_guess: Optional[Sequence[float]] = None,
    ):
        self.dae = dae
        self.tableau = tableau
        self.h = h
        self.z_guess = np.asarray(dae.z_guess if z_guess is None else z_guess, dtype=np.float64).reshape(dae.m)
        self._cfg = SolverConfig(tableau=tableau, h_ref=h, newton_tol=newton_tol)
        self._z_hint = self.z_guess.copy()

    def reset(self, z_guess: Optional[Sequence[float]] = None) -> None:
        """Drops the warm start, continuing from `z_guess` or the constructor's guess"""
        hint = self.z_guess if z_guess is None else z_guess
        self._z_hint = np.asarray(hint, dtype=np.float64).reshape(self.dae.m).copy()

    def predict_stages(self, params: Any, y_n: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        y_n = np.atleast_2d(np.asarray(y_n.value if isinstance(y_n, Tensor) else y_n, dtype=np.float64))
        Ys, Zs = [], []
        for y in y_n:
            z = consistent_z(self.dae, y, self._z_hint, tol=self._cfg.newton_tol)
            step = irk_step(self.dae, y, z, self._cfg)
            self._z_hint = step.z
            Ys.append(np.vstack([step.Y_stages, step.y[None, :]]))
            Zs.append(np.vstack([step.Z_stages, step.z[None, :]]))
        return np.stack(Ys), np.stack(Zs)


@dataclass
class RolloutResult:
    """Output of a rollout.

    Attributes
    ----------
    trajectory: Trajectory
        Predictions on the stage-time grid, `nu + 1` samples per step.
    N: int
        Steps taken.
    drift: np.ndarray
        `||g||_inf` over the `nu + 1` predicted points of every step, empty when no DAE was given.
    errors: Optional[Dict[str, float]] = None
        Relative L2 errors per state against a reference, when one was given.
    """

    trajectory: Trajectory
    N: int
    drift: np.ndarray
    errors: Optional[Dict[str, float]] = None


def _values(x: Union[Tensor, np.ndarray]) -> np.ndarray:
    return np.asarray(x.value if isinstance(x, Tensor) else x, dtype=np.float64)


def simulate(
    assembly: StagePredictor,
    params: Any,
    y0: Sequence[float],
    N: int,
    dae: Optional[SemiExplicitDAE] = None,
    t0: float = 0.0,
) -> RolloutResult:
    """Rolls a stage predictor out for `N` steps, feeding each predicted step end back as the next input.

    The algebraic states are taken from the predictor as they are; their distance from the constraint manifold is
    reported as drift when `dae` is given but never corrected. A predictor with a `reset()` method is reset first, so
    a rollout does not depend on earlier calls.

    Raises
    ------
    ValueError
        When `N < 1`.
    RolloutDivergence
        When a prediction holds a non-finite value, reporting the step.
    """
    if isinstance(N, bool) or not isinstance(N, int) or N < 1:
        raise ValueError(f"`N` must be a positive integer, found: {N!r}")
    t, h = assembly.tableau, assembly.h
    y = np.asarray(y0, dtype=np.float64).reshape(1, -1)
    if not np.all(np.isfinite(y)):
        raise ValueError("Rollout initial condition must be finite")
    times: List[np.ndarray] = []
    Ys: List[np.ndarray] = []
    Zs: List[np.ndarray] = []
    drift: List[float] = []
    reset = getattr(assembly, "reset", None)
    if callable(reset):
        reset()
    for k in range(N):
        Y, Z = assembly.predict_stages(params, y)
        Y, Z = _values(Y)[0], _values(Z)[0]
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(Z))):
            raise RolloutDivergence(f"Non-finite prediction at step {k + 1}", step=k + 1)
        tk = t0 + k * h
        times.append(np.append(tk + t.c * h, tk + h))
        Ys.append(Y)
        Zs.append(Z)
        if dae is not None:
            drift.append(float(np.max(np.abs(dae.eval_g(Y, Z)))))
        y = Y[-1][None, :]

    labels: Dict[str, Any] = {}
    if dae is not None:
        labels = {"y_labels": dae.y_labels, "z_labels": dae.z_labels}
    traj = Trajectory(
        times=np.concatenate(times),
        Y=np.vstack(Ys),
        Z=np.vstack(Zs),
        meta={"steps": N, "h": h, "nu": t.nu, "scheme": str(t.scheme)},
        **labels,
    )
    return RolloutResult(trajectory=traj, N=N, drift=np.array(drift))


def l2_relative_error(pred: Trajectory, truth: Trajectory) -> Dict[str, float]:
    """Relative L2 error per state over the prediction's time grid, the reference interpolated by `dense_eval`.

    Raises
    ------
    DegenerateDenominatorError
        When the reference of a state has zero norm on the grid.
    """
    Yt, Zt = dense_eval(truth, pred.times)
    true_states = np.hstack([np.atleast_2d(Yt), np.atleast_2d(Zt)])
    diff = pred.states - true_states
    labels = list(truth.labels)
    errors: Dict[str, float] = {}
    for s, label in enumerate(labels):
        denom = float(np.linalg.norm(true_states[:, s]))
        if denom == 0.0:
            raise DegenerateDenominatorError(label)
        errors[label] = float(np.linalg.norm(diff[:, s])) / denom
    return errors


@dataclass
class EnsembleReport:
    """Per-state error statistics over a set of initial conditions.

    Failed members are listed in `failures` and excluded from `mean` and `std` (population standard deviation).
    """

    labels: List[str]
    errors: List[Dict[str, float]] = field(default_factory=list)
    drift_max: List[float] = field(default_factory=list)
    failures: List[Tuple[int, str]] = field(default_factory=list)
    indices: List[int] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.errors)

    def _matrix(self) -> np.ndarray:
        return np.array([[e[label] for label in self.labels] for e in self.errors]).reshape(-1, len(self.labels))

    def _reduce(self, fn) -> Dict[str, float]:
        if not self.count:
            return {label: float("nan") for label in self.labels}
        m = self._matrix()
        return {label: float(fn(m[:, s])) for s, label in enumerate(self.labels)}

    @property
    def mean(self) -> Dict[str, float]:
        return self._reduce(np.mean)

    @property
    def std(self) -> Dict[str, float]:
        return self._reduce(np.std)

    def write_summary_csv(self, path: Union[str, Path]) -> Path:
        """Writes one `mean` and one `std` row with a column per state"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["statistic"] + self.labels + ["count", "failures"])
            for name, stats in (("mean", self.mean), ("std", self.std)):
                row = [GlobalConfig.fmt(stats[label]) for label in self.labels]
                writer.writerow([name] + row + [self.count, len(self.failures)])
        return path

    def write_members_csv(self, path: Union[str, Path]) -> Path:
        """Writes the errors of every successful member and one row per failure"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["ic"] + self.labels + ["drift_max", "failure"])
            for i, e, d in zip(self.indices, self.errors, self.drift_max):
                row = [GlobalConfig.fmt(e[label]) for label in self.labels]
                writer.writerow([i] + row + [GlobalConfig.fmt(d), ""])
            for i, reason in self.failures:
                writer.writerow([i] + [""] * len(self.labels) + ["", reason])
        return path


def evaluate_ensemble(
    assembly: StagePredictor,
    params: Any,
    dae: SemiExplicitDAE,
    ic_set: np.ndarray,
    N: int,
    oracle: Optional[SolverConfig] = None,
    z_guess: Optional[Sequence[float]] = None,
) -> EnsembleReport:
    """Rolls out every initial condition, solves its reference and collects the relative errors.

    Numerical failures of a member are recorded, not raised.
    """
    ic_set = np.atleast_2d(np.asarray(ic_set, dtype=np.float64))
    if ic_set.shape[0] == 0:
        raise ValueError("Ensemble evaluation needs at least one initial condition")
    oracle = oracle or SolverConfig()
    z_guess = dae.z_guess if z_guess is None else z_guess
    report = EnsembleReport(labels=list(dae.labels))
    for i, ic in enumerate(ic_set):
        try:
            rollout = simulate(assembly, params, ic, N, dae=dae)
            truth = solve(dae, ic, z_guess, N * assembly.h, oracle)
            errors = l2_relative_error(rollout.trajectory, truth)
        except (NumericalFailure, ZeroDivisionError) as e:
            logger.warning("Ensemble member %d failed: %s", i, e)
            report.failures.append((i, str(e)))
            continue
        report.indices.append(i)
        report.errors.append(errors)
        report.drift_max.append(float(np.max(rollout.drift)))
    logger.info("Ensemble of %d: %d succeeded, %d failed", ic_set.shape[0], report.count, len(report.failures))
    return report


@dataclass
class SchemeCurves:
    """Relative errors of one trained predictor after `N' = 1..N` steps, one row per `N'`"""

    name: str
    labels: List[str]
    errors: np.ndarray

    @property
    def steps(self) -> np.ndarray:
        return np.arange(1, self.errors.shape[0] + 1)


def compare_schemes(
    predictors: Mapping[str, Tuple[StagePredictor, Any]],
    dae: SemiExplicitDAE,
    ic: Sequence[float],
    N: int,
    oracle: Optional[SolverConfig] = None,
    z_guess: Optional[Sequence[float]] = None,
) -> List[SchemeCurves]:
    """Computes error-versus-steps curves of several trained predictors on one initial condition.

    Raises
    ------
    ValueError
        When the predictors do not share the same step size, or none is given.
    """
    if not predictors:
        raise ValueError("At least one predictor is needed for a comparison")
    steps = {name: p.h for name, (p, _) in predictors.items()}
    if len(set(steps.values())) != 1:
        raise ValueError(f"Predictors must share the step size, found {steps}")
    h = next(iter(steps.values()))
    oracle = oracle or SolverConfig()
    truth = solve(dae, ic, dae.z_guess if z_guess is None else z_guess, N * h, oracle)
    curves: List[SchemeCurves] = []
    for name, (predictor, params) in predictors.items():
        rollout = simulate(predictor, params, ic, N, dae=dae)
        per_step = predictor.tableau.nu + 1
        rows = [
            list(l2_relative_error(rollout.trajectory.truncate(k * per_step), truth).values())
            for k in range(1, N + 1)
        ]
        curves.append(SchemeCurves(name=name, labels=list(dae.labels), errors=np.array(rows)))
    return curves


def write_curves_csv(curves: Sequence[SchemeCurves], path: Union[str, Path]) -> Path:
    """Writes `scheme,steps,<labels>` rows for every curve"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        labels = curves[0].labels if curves else []
        writer.writerow(["scheme", "steps"] + labels)
        for c in curves:
            for k, row in zip(c.steps, c.errors):
                writer.writerow([c.name, int(k)] + [GlobalConfig.fmt(v) for v in row])
    return path


def write_errors_csv(errors: Mapping[str, float], path: Union[str, Path]) -> Path:
    """Writes `state,l2rel` rows"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "l2rel"])
        for label, value in errors.items():
            writer.writerow([label, GlobalConfig.fmt(value)])
    return path


def write_drift_csv(drift: np.ndarray, path: Union[str, Path]) -> Path:
    """Writes `step,ginf` rows, steps counted from 1"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "ginf"])
        for k, value in enumerate(drift, start=1):
            writer.writerow([k, GlobalConfig.fmt(value)])
    return path
