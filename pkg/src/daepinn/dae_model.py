"""Holds the semi-explicit index-1 DAE contract, the three-bus power network and the descriptor-form reduction"""
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from daepinn import autodiff as ad
from daepinn.autodiff import Tape, Tensor
from daepinn.errors import AmbiguousRankError, IndexViolation, NotADAEError, NumericalFailure

logger = logging.getLogger(__name__)

# maps `(y, z)` batches of shapes (B, n) and (B, m) to a (B, n) or (B, m) batch
RightHandSide = Callable[[Tensor, Tensor], Tensor]

INDEX1_MARGIN = 1e-8

Jacobians = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


@dataclass(frozen=True)
class SemiExplicitDAE:
    """A semi-explicit DAE `y' = f(y, z)`, `0 = g(y, z)` with `n` dynamic and `m` algebraic states.

    `f` and `g` are built from autodiff primitives, so the same code serves training gradients and Newton Jacobians.
    Both act row-wise on batches: row `b` of the output depends only on row `b` of the inputs.

    Attributes
    ----------
    n: int
        Dimension of the dynamic state `y`.
    m: int
        Dimension of the algebraic state `z`.
    f: RightHandSide
        The dynamic right-hand side.
    g: RightHandSide
        The algebraic constraint.
    name: str
        Identifier used in configs and manifests.
    y_labels: Tuple[str, ...]
        Column names of `y` in file formats.
    z_labels: Tuple[str, ...]
        Column names of `z` in file formats.
    z_guess: Tuple[float, ...]
        Default starting point of the consistent initialization.
    ic_ranges: Tuple[Tuple[float, float], ...]
        Default sampling bounds of each component of `y`.
    """

    n: int
    m: int
    f: RightHandSide
    g: RightHandSide
    name: str
    y_labels: Tuple[str, ...] = ()
    z_labels: Tuple[str, ...] = ()
    z_guess: Tuple[float, ...] = ()
    ic_ranges: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError(f"A semi-explicit DAE needs n >= 1 and m >= 1, found n={self.n}, m={self.m}")
        if not self.y_labels:
            object.__setattr__(self, "y_labels", tuple(f"y{i + 1}" for i in range(self.n)))
        if not self.z_labels:
            object.__setattr__(self, "z_labels", tuple(f"z{i + 1}" for i in range(self.m)))
        if not self.z_guess:
            object.__setattr__(self, "z_guess", (1.0,) * self.m)
        if not self.ic_ranges:
            object.__setattr__(self, "ic_ranges", ((-1.0, 1.0),) * self.n)
        if len(self.y_labels) != self.n or len(self.z_labels) != self.m:
            raise ValueError("State labels must match the state dimensions")

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(self.y_labels) + tuple(self.z_labels)

    def eval_f(self, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Evaluates `f` on plain arrays, a single point or a batch"""
        return _eval(self.f, y, z)

    def eval_g(self, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Evaluates `g` on plain arrays, a single point or a batch"""
        return _eval(self.g, y, z)


def _eval(fn: RightHandSide, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    y, z = np.asarray(y, dtype=np.float64), np.asarray(z, dtype=np.float64)
    single = y.ndim == 1
    out = fn(Tensor(np.atleast_2d(y)), Tensor(np.atleast_2d(z))).value
    return out[0] if single else out


@dataclass(frozen=True)
class ThreeBusParams:
    """Parameters of the three-bus network: a slack machine, a generator bus and a load bus (per-unit)"""

    M1: float = 0.52
    M2: float = 0.0531
    D: float = 0.05
    Dl: float = 0.005
    V1: float = 1.02
    V2: float = 0.05
    B12: float = 10.0
    B13: float = 10.0
    B23: float = 10.0
    Pg: float = -2.0
    Pl: float = 3.0
    Ql: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
                raise ValueError(f"`{f.name}` must be a finite number, found: {value!r}")
        for name in ("M1", "M2", "D", "Dl"):
            if getattr(self, name) == 0:
                raise ValueError(f"`{name}` must be nonzero")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, overrides: Optional[Mapping[str, Any]] = None) -> "ThreeBusParams":
        """Builds parameters from defaults updated with `overrides`, rejecting unknown names"""
        overrides = dict(overrides or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise KeyError(f"Unknown three-bus parameters {unknown}, expected a subset of {sorted(known)}")
        return cls(**{k: float(v) for k, v in overrides.items()})


def three_bus(params: Optional[ThreeBusParams] = None) -> SemiExplicitDAE:
    """Builds the three-bus power network DAE with states `(w1, w2, d2, d3 | V3)`.

    The dynamic equations are the swing equations of the two machines plus the load angle, and the algebraic equation
    is the reactive power balance at the load bus divided by `V3`.

    Raises
    ------
    ZeroDivisionError
        When `g` is evaluated at `V3 = 0`.
    """
    p = params or ThreeBusParams()

    def split(y: Tensor, z: Tensor):
        return y[:, 0:1], y[:, 1:2], y[:, 2:3], y[:, 3:4], z[:, 0:1]

    def f(y: Tensor, z: Tensor) -> Tensor:
        w1, w2, d2, d3, v3 = split(y, z)
        f1 = p.B12 * p.V1 * p.V2 * ad.sin(d2) + p.B23 * p.V2 * v3 * ad.sin(d2 - d3) + p.Pg
        f2 = p.B13 * p.V1 * v3 * ad.sin(d3) + p.B23 * p.V2 * v3 * ad.sin(d3 - d2) + p.Pl
        return ad.concat(
            [
                -(p.D * w1 - f1 - f2) / p.M1,
                -(p.D * w2 + f1) / p.M2,
                w2 - w1,
                -(w1 - f2 / p.Dl),
            ],
            axis=1,
        )

    def g(y: Tensor, z: Tensor) -> Tensor:
        _, _, d2, d3, v3 = split(y, z)
        g1 = (
            (p.B13 + p.B23) * ad.square(v3)
            - p.B13 * p.V1 * v3 * ad.cos(d3)
            - p.B23 * p.V2 * v3 * ad.cos(d3 - d2)
            + p.Ql
        )
        return -g1 / v3

    return SemiExplicitDAE(
        n=4,
        m=1,
        f=f,
        g=g,
        name="three_bus",
        y_labels=("w1", "w2", "d2", "d3"),
        z_labels=("V3",),
        z_guess=(1.0,),
        ic_ranges=((-math.pi, math.pi), (-math.pi, math.pi), (-0.1, 0.1), (-0.1, 0.1)),
    )


def linear_test_dae() -> SemiExplicitDAE:
    """The linear index-1 test problem `y' = -y`, `0 = z - y`, exact solution `y = z = y0 e^-t`"""
    return SemiExplicitDAE(
        n=1,
        m=1,
        f=lambda y, z: -y,
        g=lambda y, z: z - y,
        name="linear",
        y_labels=("y",),
        z_labels=("z",),
        z_guess=(0.0,),
        ic_ranges=((0.5, 1.5),),
    )


ModelFactory = Callable[[Optional[Mapping[str, Any]]], SemiExplicitDAE]


def _no_params(name: str, build: Callable[[], SemiExplicitDAE]) -> ModelFactory:
    def factory(overrides: Optional[Mapping[str, Any]] = None) -> SemiExplicitDAE:
        if overrides:
            raise KeyError(f"Model `{name}` takes no parameters, found {sorted(overrides)}")
        return build()

    return factory


_MODELS: Dict[str, ModelFactory] = {
    "three_bus": lambda overrides: three_bus(ThreeBusParams.from_dict(overrides)),
    "linear": _no_params("linear", linear_test_dae),
}


def model_names() -> List[str]:
    return sorted(_MODELS)


def model_from_name(name: str, overrides: Optional[Mapping[str, Any]] = None) -> SemiExplicitDAE:
    """Builds a registered model, applying parameter overrides.

    Raises
    ------
    KeyError
        When the model or an override name is unknown.
    """
    if name not in _MODELS:
        raise KeyError(f"Unknown model `{name}`, available models: {model_names()}")
    return _MODELS[name](overrides)


def jacobians(dae: SemiExplicitDAE, y: np.ndarray, z: np.ndarray) -> Jacobians:
    """Returns `(df/dy, df/dz, dg/dy, dg/dz)` at a point or at every row of a batch.

    One reverse sweep is made per output component; rows of a batch are independent, so each sweep seeds the sum of
    that component over the batch.

    Returns
    -------
    Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
        Matrices of shapes `(n, n)`, `(n, m)`, `(m, n)`, `(m, m)`, with a leading batch axis for batched input.
    """
    y, z = np.asarray(y, dtype=np.float64), np.asarray(z, dtype=np.float64)
    single = y.ndim == 1
    y2, z2 = np.atleast_2d(y), np.atleast_2d(z)
    batch = y2.shape[0]
    n, m = dae.n, dae.m
    jac = np.zeros((batch, n + m, n + m))
    with Tape() as tape:
        yt = tape.variable(y2, name="y", requires_grad=False)
        zt = tape.variable(z2, name="z", requires_grad=False)
        out = ad.concat([dae.f(yt, zt), dae.g(yt, zt)], axis=1)
        for k in range(n + m):
            tape.backward(ad.reduce_sum(out[:, k]), wrt=[yt, zt])
            jac[:, k, :n] = yt.grad
            jac[:, k, n:] = zt.grad
    if single:
        jac = jac[0]
    return jac[..., :n, :n], jac[..., :n, n:], jac[..., n:, :n], jac[..., n:, n:]


def index1_margin(dae: SemiExplicitDAE, y: np.ndarray, z: np.ndarray) -> float:
    """Smallest singular value of `dg/dz`, minimized over the rows of a batch"""
    gz = jacobians(dae, y, z)[3]
    return float(np.min(np.linalg.svd(gz, compute_uv=False)))


def consistent_z(
    dae: SemiExplicitDAE,
    y: np.ndarray,
    z_guess: Sequence[float],
    tol: float = 1e-10,
    max_iter: int = 50,
    max_halvings: int = 20,
) -> np.ndarray:
    """Solves `g(y, z) = 0` for `z` by damped Newton from `z_guess`.

    The step is halved until the residual norm decreases. Where `g` has several roots the result is the one whose basin
    contains the guess.

    Raises
    ------
    IndexViolation
        When `dg/dz` is singular at an iterate.
    NumericalFailure
        When no root with `||g||_inf <= tol` is found in `max_iter` iterations or the line search stalls.
    """
    y = np.asarray(y, dtype=np.float64).reshape(dae.n)
    z = np.asarray(z_guess, dtype=np.float64).reshape(dae.m).copy()
    r = dae.eval_g(y, z)
    res = float(np.max(np.abs(r)))
    for it in range(max_iter):
        if res <= tol:
            return z
        gz = jacobians(dae, y, z)[3]
        sv = np.linalg.svd(gz, compute_uv=False)
        if sv[-1] <= 1e-14 * max(1.0, sv[0]):
            raise IndexViolation(f"dg/dz is singular at z={z.tolist()}", residual=res)
        dz = np.linalg.solve(gz, -r)
        lam = 1.0
        for _ in range(max_halvings + 1):
            trial = z + lam * dz
            try:
                r_trial = dae.eval_g(y, trial)
            except ZeroDivisionError:
                r_trial = None
            if r_trial is not None and np.all(np.isfinite(r_trial)):
                res_trial = float(np.max(np.abs(r_trial)))
                if res_trial < res:
                    break
            lam *= 0.5
        else:
            raise NumericalFailure(f"Damped Newton line search stalled after {it} iterations", residual=res)
        z, r, res = trial, r_trial, res_trial
    if res <= tol:
        return z
    raise NumericalFailure(f"Consistent initialization did not converge in {max_iter} iterations", residual=res)


@dataclass(frozen=True)
class DescriptorReduction:
    """Result of reducing `M u' = phi(u)` to semi-explicit form.

    `M = S diag(I_n, 0) T` and the semi-explicit state is `(y, z) = T u`.
    """

    dae: SemiExplicitDAE
    S: np.ndarray
    T: np.ndarray
    rank: int
    T_inv: np.ndarray = field(repr=False)

    def to_semi_explicit_state(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u) @ self.T.T

    def to_descriptor_state(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v) @ self.T_inv.T


def _full_pivot_lu(M: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]:
    """Gaussian elimination with total pivoting, `P M Q = L U`, stopping at the numerical rank"""
    N = M.shape[0]
    A = M.astype(np.float64).copy()
    rows, cols = np.arange(N), np.arange(N)
    L = np.eye(N)
    rank = N
    for k in range(N):
        block = np.abs(A[k:, k:])
        i, j = np.unravel_index(np.argmax(block), block.shape)
        pivot = block[i, j]
        if pivot <= tol:
            rank = k
            break
        if pivot <= 1e4 * tol:
            raise AmbiguousRankError(
                f"Pivot {pivot:.3e} at elimination step {k} is too close to the rank tolerance {tol:.3e}"
            )
        i, j = i + k, j + k
        A[[k, i], :] = A[[i, k], :]
        L[[k, i], :k] = L[[i, k], :k]
        rows[[k, i]] = rows[[i, k]]
        A[:, [k, j]] = A[:, [j, k]]
        cols[[k, j]] = cols[[j, k]]
        for r in range(k + 1, N):
            L[r, k] = A[r, k] / A[k, k]
            A[r, k:] -= L[r, k] * A[k, k:]
    A[rank:, :] = 0.0
    P = np.eye(N)[rows]
    Q = np.eye(N)[:, cols]
    return P, Q, L, A, rank


def descriptor_to_semi_explicit(
    M: np.ndarray, phi: Callable[[Tensor], Tensor], name: str = "descriptor"
) -> DescriptorReduction:
    """Reduces a descriptor-form system `M u' = phi(u)` to semi-explicit form.

    Total-pivoting elimination gives `P M Q = L U` with `U = [[U11, U12], [0, 0]]`, hence `M = S diag(I, 0) T` with
    `S = P^T L` and `T = [[U11, U12], [0, I]] Q^T`. With `v = T u = (y, z)` the system becomes
    `diag(I, 0) v' = S^-1 phi(T^-1 v)`, whose first `n` rows are `f` and remaining rows `g`.

    Parameters
    ----------
    M: np.ndarray
        The square mass matrix.
    phi: Callable[[Tensor], Tensor]
        Row-wise right-hand side on batches of shape `(B, n + m)`.
    name: str = "descriptor"
        Name of the resulting DAE.

    Raises
    ------
    NotADAEError
        When `M` has full rank, the system is an ODE and should be given to an ODE solver.
    AmbiguousRankError
        When a pivot falls within four orders of magnitude above the rank tolerance `1e-10 ||M||`.
    ValueError
        When `M` is not square or is numerically zero.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"Mass matrix must be square, found shape {M.shape}")
    N = M.shape[0]
    tol = 1e-10 * float(np.linalg.norm(M, ord=np.inf))
    if tol == 0.0:
        raise ValueError("Mass matrix is zero, the system has no dynamic states")
    P, Q, L, U, rank = _full_pivot_lu(M, tol)
    if rank == N:
        raise NotADAEError("Mass matrix has full rank: the system is an ODE, use an ODE solver instead")

    T0 = np.eye(N)
    T0[:rank, :] = U[:rank, :]
    T = T0 @ Q.T
    S = P.T @ L
    T_inv_t = np.linalg.inv(T).T
    S_inv_t = np.linalg.inv(S).T
    n, m = rank, N - rank

    def reduced(y: Tensor, z: Tensor) -> Tensor:
        u = ad.matmul(ad.concat([y, z], axis=1), T_inv_t)
        return ad.matmul(phi(u), S_inv_t)

    dae = SemiExplicitDAE(
        n=n,
        m=m,
        f=lambda y, z: reduced(y, z)[:, :n],
        g=lambda y, z: reduced(y, z)[:, n:],
        name=name,
    )
    logger.debug("Reduced descriptor system of size %d to n=%d, m=%d", N, n, m)
    return DescriptorReduction(dae=dae, S=S, T=T, rank=rank, T_inv=T_inv_t.T)
