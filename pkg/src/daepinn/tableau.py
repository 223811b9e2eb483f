"""Holds the Butcher tableaus of the implicit Runge-Kutta schemes used for training and reference solves"""
import functools
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple, Union

import mpmath
import numpy as np

from daepinn.errors import NumericalFailure
from daepinn.global_config import GlobalConfig
from daepinn.validators import validate_positive_int

MAX_STAGES = 100
ORDER_TOL = 1e-9

Row = Tuple[float, ...]

# working precision of the coefficient construction, in decimal digits
_DPS = 50


class Scheme(str, Enum):
    """Implicit Runge-Kutta families that can be generated"""

    GaussLegendre = "gauss"
    BackwardEuler = "backward_euler"

    def __str__(self):
        return str(self.value)


@dataclass(eq=False)
class ButcherTableau:
    """Coefficients `(a, b, c)` of an implicit Runge-Kutta scheme with `nu` stages.

    Attributes
    ----------
    nu: int
        Number of stages.
    a: np.ndarray
        The `nu x nu` coefficient matrix, `a[j, i]` weights stage `i` in the equation of stage `j`.
    b: np.ndarray
        The quadrature weights.
    c: np.ndarray
        The nodes, as fractions of the step.
    scheme: Scheme
        The family the tableau belongs to.
    order: int
        Classical order of accuracy.

    Raises
    ------
    ValueError
        When the shapes disagree with `nu`, the nodes are not strictly increasing in `(0, 1]`, or the row-sum and
        consistency conventions are violated beyond 1e-9.
    """

    nu: int
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    scheme: Scheme
    order: int
    source: Optional[str] = field(default=None)

    def __post_init__(self):
        validate_positive_int("nu", self.nu)
        validate_positive_int("order", self.order)
        self.scheme = Scheme(self.scheme)
        self.a = np.array(self.a, dtype=np.float64).reshape(self.nu, self.nu)
        self.b = np.array(self.b, dtype=np.float64).reshape(self.nu)
        self.c = np.array(self.c, dtype=np.float64).reshape(self.nu)
        for arr in (self.a, self.b, self.c):
            if not np.all(np.isfinite(arr)):
                raise ValueError("Tableau coefficients must be finite")
            arr.setflags(write=False)

        if np.any(self.c <= 0.0) or np.any(self.c > 1.0):
            raise ValueError(f"Tableau nodes must lie in (0, 1], found: {self.c.tolist()}")
        if np.any(np.diff(self.c) <= 0.0):
            raise ValueError("Tableau nodes must be strictly increasing")
        row_defect = np.max(np.abs(self.a.sum(axis=1) - self.c))
        if row_defect > ORDER_TOL:
            raise ValueError(f"Row sums of `a` differ from `c` by {row_defect:.3e}")
        if abs(self.b.sum() - 1.0) > ORDER_TOL:
            raise ValueError(f"Weights `b` sum to {self.b.sum()!r}, expected 1")
        if self.scheme == Scheme.GaussLegendre:
            if self.order != 2 * self.nu:
                raise ValueError(f"A Gauss-Legendre tableau with {self.nu} stages has order {2 * self.nu}")
            if np.max(np.abs(self.c + self.c[::-1] - 1.0)) > ORDER_TOL:
                raise ValueError("Gauss-Legendre nodes must be symmetric about 1/2")

    def stage_matrix(self) -> np.ndarray:
        """Returns the `(nu + 1) x nu` matrix stacking the rows of `a` over the weights `b`.

        Row `j < nu` produces the stage quadrature of stage `j`, the last row produces the step update.
        """
        return np.vstack([self.a, self.b[None, :]])

    def __repr__(self) -> str:
        return f"ButcherTableau(scheme={self.scheme}, nu={self.nu}, order={self.order})"


@dataclass
class OrderReport:
    """Residuals of the simplifying order conditions `B(k)` and `C(k)` for `k = 1..max_k`.

    Attributes
    ----------
    b_residuals: List[float]
        `|sum_j b_j c_j^(k-1) - 1/k|` at index `k - 1`.
    c_residuals: List[float]
        `max_j |sum_i a_ji c_i^(k-1) - c_j^k / k|` at index `k - 1`.
    tol: float
        The pass/fail tolerance.
    """

    b_residuals: List[float]
    c_residuals: List[float]
    tol: float = ORDER_TOL

    @property
    def b_passed(self) -> List[bool]:
        return [r <= self.tol for r in self.b_residuals]

    @property
    def c_passed(self) -> List[bool]:
        return [r <= self.tol for r in self.c_residuals]

    def passes(self, b_up_to: int, c_up_to: int) -> bool:
        """Whether `B(k)` holds for `k <= b_up_to` and `C(k)` holds for `k <= c_up_to`"""
        return all(self.b_passed[:b_up_to]) and all(self.c_passed[:c_up_to])

    @property
    def passed(self) -> bool:
        """Whether every reported condition holds"""
        return all(self.b_passed) and all(self.c_passed)


def verify_order_conditions(t: ButcherTableau, max_k: int, tol: float = ORDER_TOL) -> OrderReport:
    """Evaluates the quadrature conditions `B(k)` and the stage conditions `C(k)` for `k = 1..max_k`.

    This is a reporting operation: conditions beyond the order of the scheme are expected to fail and are reported,
    not raised.
    """
    validate_positive_int("max_k", max_k)
    b_res: List[float] = []
    c_res: List[float] = []
    for k in range(1, max_k + 1):
        powers = t.c ** (k - 1)
        b_res.append(abs(float(np.dot(t.b, powers)) - 1.0 / k))
        c_res.append(float(np.max(np.abs(t.a @ powers - t.c**k / k))))
    return OrderReport(b_residuals=b_res, c_residuals=c_res, tol=tol)


def _legendre_pair(n: int, x: mpmath.mpf) -> Tuple[mpmath.mpf, mpmath.mpf]:
    """Evaluates `(P_n(x), P_{n-1}(x))` with the three-term recurrence"""
    p_prev, p = mpmath.mpf(1), x
    for k in range(1, n):
        p_prev, p = p, ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
    return p, p_prev


def _legendre_root(n: int, i: int) -> Tuple[mpmath.mpf, mpmath.mpf]:
    """Newton iteration for the `i`-th largest root of `P_n` and its Gauss weight on [-1, 1]"""
    x = mpmath.cos(mpmath.pi * (i - mpmath.mpf(1) / 4) / (n + mpmath.mpf(1) / 2))
    tol = mpmath.mpf(10) ** (-(_DPS - 8))
    for _ in range(100):
        p, p_prev = _legendre_pair(n, x)
        dp = n * (x * p - p_prev) / (x * x - 1)
        dx = p / dp
        x -= dx
        if abs(dx) <= tol:
            p, p_prev = _legendre_pair(n, x)
            dp = n * (x * p - p_prev) / (x * x - 1)
            return x, 2 / ((1 - x * x) * dp * dp)
    raise NumericalFailure(f"Legendre node search did not converge for {n} stages (root {i})", residual=float(abs(dx)))


@functools.lru_cache(maxsize=None)
def _gauss_legendre_coefficients(nu: int) -> Tuple[Row, Row, Tuple[Row, ...]]:
    """Builds `(c, b, a)` in extended precision and rounds once to float64"""
    with mpmath.workdps(_DPS):
        c: List[mpmath.mpf] = [mpmath.mpf(0)] * nu
        b: List[mpmath.mpf] = [mpmath.mpf(0)] * nu
        half = nu // 2
        for i in range(1, half + 1):
            x, w = _legendre_root(nu, i)
            # roots come largest first, shifted nodes smallest first; mirror for exact symmetry
            c[i - 1] = (1 - x) / 2
            c[nu - i] = (1 + x) / 2
            b[i - 1] = b[nu - i] = w / 2
        if nu % 2 == 1:
            _, p_prev = _legendre_pair(nu, mpmath.mpf(0))
            dp = nu * (-p_prev) / mpmath.mpf(-1)
            c[half] = mpmath.mpf(1) / 2
            b[half] = 1 / (dp * dp)

        # barycentric weights of the Lagrange basis on the nodes
        lam = []
        for i in range(nu):
            prod = mpmath.mpf(1)
            for k in range(nu):
                if k != i:
                    prod *= c[i] - c[k]
            lam.append(1 / prod)

        # a[j][i] = integral of l_i over [0, c_j], exact via the nu-point Gauss rule rescaled to [0, c_j]
        a = [[mpmath.mpf(0)] * nu for _ in range(nu)]
        for j in range(nu):
            row = a[j]
            for q in range(nu):
                x = c[j] * c[q]
                hit = next((i for i in range(nu) if c[i] == x), None)
                if hit is not None:
                    row[hit] += b[q]
                    continue
                ell = mpmath.mpf(1)
                for k in range(nu):
                    ell *= x - c[k]
                scale = b[q] * ell
                for i in range(nu):
                    row[i] += scale * lam[i] / (x - c[i])
            a[j] = [c[j] * v for v in row]

        return (
            tuple(float(v) for v in c),
            tuple(float(v) for v in b),
            tuple(tuple(float(v) for v in r) for r in a),
        )


def gauss_legendre_tableau(nu: int) -> ButcherTableau:
    """Generates the Gauss-Legendre collocation tableau with `nu` stages (order `2 nu`).

    Nodes are the roots of the shifted Legendre polynomial, found by Newton iteration on the three-term recurrence
    in 50-digit arithmetic; `a` integrates the Lagrange basis exactly in the same precision.

    Parameters
    ----------
    nu: int
        Number of stages, `1 <= nu <= 100`.

    Raises
    ------
    ValueError
        When `nu` is out of range.
    NumericalFailure
        When the node search does not converge.
    """
    if isinstance(nu, bool) or not isinstance(nu, int) or not 1 <= nu <= MAX_STAGES:
        raise ValueError(f"Gauss-Legendre stage count must be an integer in [1, {MAX_STAGES}], found: {nu!r}")
    c, b, a = _gauss_legendre_coefficients(nu)
    return ButcherTableau(
        nu=nu, a=np.array(a), b=np.array(b), c=np.array(c), scheme=Scheme.GaussLegendre, order=2 * nu
    )


def backward_euler_tableau() -> ButcherTableau:
    """The one-stage Backward-Euler scheme, `c = b = a = 1`"""
    return ButcherTableau(
        nu=1, a=np.array([[1.0]]), b=np.array([1.0]), c=np.array([1.0]), scheme=Scheme.BackwardEuler, order=1
    )


def tableau_for(scheme: Union[Scheme, str], nu: int = 1) -> ButcherTableau:
    """Returns the tableau of the given family; `nu` is ignored for Backward-Euler"""
    scheme = Scheme(scheme)
    if scheme == Scheme.BackwardEuler:
        return backward_euler_tableau()
    return gauss_legendre_tableau(nu)


def write_tableau(t: ButcherTableau, path: Union[str, Path]) -> Path:
    """Writes the plain-text interchange format.

    Line 1 holds `nu order`, line 2 the nodes `c`, line 3 the weights `b`, followed by `nu` rows of `a`, all values
    space-separated with 17 significant digits.
    """
    fmt = GlobalConfig.fmt
    lines = [f"{t.nu} {t.order}", " ".join(fmt(v) for v in t.c), " ".join(fmt(v) for v in t.b)]
    lines += [" ".join(fmt(v) for v in row) for row in t.a]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_tableau(path: Union[str, Path], scheme: Optional[Union[Scheme, str]] = None) -> ButcherTableau:
    """Reads a tableau written by `write_tableau`.

    The family is not part of the file; unless given, a one-stage tableau with `c = 1` is read as Backward-Euler and
    anything else as Gauss-Legendre.

    Raises
    ------
    ValueError
        When the file does not follow the interchange format.
    """
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    if len(rows) < 3 or len(rows[0]) != 2:
        raise ValueError(f"{path}: expected a `nu order` header followed by c, b and the rows of a")
    nu, order = int(rows[0][0]), int(rows[0][1])
    if len(rows) != 3 + nu:
        raise ValueError(f"{path}: expected {3 + nu} lines for {nu} stages, found {len(rows)}")
    c = np.array([float(v) for v in rows[1]])
    b = np.array([float(v) for v in rows[2]])
    a = np.array([[float(v) for v in row] for row in rows[3:]])
    if a.shape != (nu, nu) or c.shape != (nu,) or b.shape != (nu,):
        raise ValueError(f"{path}: coefficient shapes do not match {nu} stages")
    if scheme is None:
        scheme = Scheme.BackwardEuler if nu == 1 and c[0] == 1.0 else Scheme.GaussLegendre
    return ButcherTableau(nu=nu, a=a, b=b, c=c, scheme=Scheme(scheme), order=order, source=str(path))
