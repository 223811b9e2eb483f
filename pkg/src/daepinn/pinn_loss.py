"""Holds the physics-informed loss of a stage predictor: implicit Runge-Kutta residuals plus algebraic constraints"""
import csv
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Tuple, Union

import numpy as np

from daepinn import autodiff as ad
from daepinn.autodiff import Tape, Tensor
from daepinn.dae_model import RightHandSide, SemiExplicitDAE
from daepinn.global_config import GlobalConfig
from daepinn.network import NetworkParams, ParamLike, PinnAssembly
from daepinn.tableau import ButcherTableau

Number = Union[float, Tensor]


@dataclass
class LossBreakdown:
    """The two loss terms, their weights and `total = w_f L_f + w_g L_g`"""

    L_f: float
    L_g: float
    total: float
    w_f: float
    w_g: float


def _as_tensor(x: Union[Tensor, np.ndarray]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_batch(t: Tensor) -> int:
    if t.ndim < 1 or t.shape[0] == 0:
        raise ValueError("Loss terms need a nonempty batch")
    return t.shape[0]


def dynamic_residual_targets(
    y_n: Union[Tensor, np.ndarray],
    Y_stages: Union[Tensor, np.ndarray],
    Z_stages: Union[Tensor, np.ndarray],
    tableau: ButcherTableau,
    h: float,
    f: RightHandSide,
) -> Tensor:
    """Returns the implicit Runge-Kutta targets of shape `(B, nu + 1, n)`.

    Slot `j < nu` holds `xi_j - h sum_i a_ji f(xi_i, zeta_i)`, slot `nu` holds `y_end - h sum_j b_j f(xi_j, zeta_j)`.
    `f` is evaluated once per stage and batch element.
    """
    y_n, Y, Z = _as_tensor(y_n), _as_tensor(Y_stages), _as_tensor(Z_stages)
    B, slots, n = Y.shape
    nu = tableau.nu
    if slots != nu + 1 or Z.shape[:2] != (B, slots):
        raise ValueError(f"Stage predictions {Y.shape} and {Z.shape} do not match a {nu}-stage tableau")
    if y_n.shape != (B, n):
        raise ValueError(f"Inputs of shape {y_n.shape} do not match stage predictions {Y.shape}")
    m = Z.shape[2]
    F = f(ad.reshape(Y[:, :nu, :], (B * nu, n)), ad.reshape(Z[:, :nu, :], (B * nu, m)))
    quadrature = ad.matmul(tableau.stage_matrix(), ad.reshape(F, (B, nu, n)))
    return Y - h * quadrature


def loss_f(y_n: Union[Tensor, np.ndarray], targets: Tensor) -> Tensor:
    """`L_f = 1 / (B (nu + 1)) sum_b sum_j ||y_n - target_j||^2`"""
    y_n, targets = _as_tensor(y_n), _as_tensor(targets)
    B = _check_batch(targets)
    slots = targets.shape[1]
    diff = targets - ad.reshape(y_n, (B, 1, targets.shape[2]))
    return ad.reduce_sum(ad.square(diff)) / float(B * slots)


def loss_g(Y_stages: Union[Tensor, np.ndarray], Z_stages: Union[Tensor, np.ndarray], g: RightHandSide) -> Tensor:
    """`L_g = 1 / (B (nu + 1)) sum_b sum_j ||g(xi_j, zeta_j)||^2`, the step end counted as slot `nu`"""
    Y, Z = _as_tensor(Y_stages), _as_tensor(Z_stages)
    B = _check_batch(Y)
    _, slots, n = Y.shape
    m = Z.shape[2]
    G = g(ad.reshape(Y, (B * slots, n)), ad.reshape(Z, (B * slots, m)))
    return ad.reduce_sum(ad.square(G)) / float(B * slots)


def total_loss(L_f: Number, L_g: Number, w_f: float, w_g: float) -> LossBreakdown:
    """Combines the terms into a `LossBreakdown`.

    Raises
    ------
    ValueError
        When a weight is not positive.
    """
    _check_weights(w_f, w_g)
    lf = L_f.item() if isinstance(L_f, Tensor) else float(L_f)
    lg = L_g.item() if isinstance(L_g, Tensor) else float(L_g)
    return LossBreakdown(L_f=lf, L_g=lg, total=w_f * lf + w_g * lg, w_f=w_f, w_g=w_g)


def _check_weights(w_f: float, w_g: float) -> None:
    if not (w_f > 0 and w_g > 0):
        raise ValueError(f"Penalty weights must be positive, found w_f={w_f}, w_g={w_g}")


class PinnProblem:
    """Binds an assembly to a DAE so the trainer can evaluate losses and gradients of a parameter set.

    Parameters
    ----------
    assembly: PinnAssembly
        The stage predictor.
    dae: SemiExplicitDAE
        The system whose residuals define the loss.
    """

    def __init__(self, assembly: PinnAssembly, dae: SemiExplicitDAE):
        if (assembly.n, assembly.m) != (dae.n, dae.m):
            raise ValueError(
                f"Assembly dimensions (n={assembly.n}, m={assembly.m}) do not match `{dae.name}` "
                f"(n={dae.n}, m={dae.m})"
            )
        self.assembly = assembly
        self.dae = dae

    def _terms(self, params: ParamLike, dataset: np.ndarray) -> Tuple[Tensor, Tensor]:
        y_n = Tensor(np.asarray(dataset, dtype=np.float64))
        _check_batch(y_n)
        Y, Z = self.assembly.predict_stages(params, y_n)
        targets = dynamic_residual_targets(y_n, Y, Z, self.assembly.tableau, self.assembly.h, self.dae.f)
        return loss_f(y_n, targets), loss_g(Y, Z, self.dae.g)

    def loss(self, params: NetworkParams, dataset: np.ndarray, w_f: float, w_g: float) -> LossBreakdown:
        """Evaluates the loss without recording a tape"""
        lf, lg = self._terms(params, dataset)
        return total_loss(lf, lg, w_f, w_g)

    def loss_and_grad(
        self, params: NetworkParams, dataset: np.ndarray, w_f: float, w_g: float
    ) -> Tuple[LossBreakdown, Dict[str, np.ndarray]]:
        """Evaluates the full-batch loss and its gradient with respect to every parameter"""
        _check_weights(w_f, w_g)
        with Tape() as tape:
            leaves = {name: tape.variable(value, name=name) for name, value in params.items()}
            lf, lg = self._terms(leaves, dataset)
            total = w_f * lf + w_g * lg
            grads = tape.backward(total)
        return total_loss(lf, lg, w_f, w_g), grads

    def loss_fn(self, dataset: np.ndarray, w_f: float, w_g: float) -> Callable[[Dict[str, Tensor]], Tensor]:
        """The weighted loss as a function of named parameter tensors, as `grad_check` expects"""

        def fn(params: Dict[str, Tensor]) -> Tensor:
            lf, lg = self._terms(params, dataset)
            return w_f * lf + w_g * lg

        return fn


@dataclass
class EpochRecord:
    """One row of the training log"""

    epoch: int
    outer_iter: int
    w_f: float
    w_g: float
    L_f: float
    L_g: float
    total: float
    learning_rate: float


def training_log_header() -> List[str]:
    return [f.name for f in fields(EpochRecord)]


def write_training_log(records: Iterable[EpochRecord], path: Union[str, Path]) -> Path:
    """Writes the training log as comma-separated text with a header row"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(training_log_header())
        for rec in records:
            writer.writerow([v if isinstance(v, int) else GlobalConfig.fmt(v) for v in astuple(rec)])
    return path


def read_training_log(path: Union[str, Path]) -> List[EpochRecord]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        EpochRecord(
            epoch=int(r["epoch"]),
            outer_iter=int(r["outer_iter"]),
            **{k: float(r[k]) for k in ("w_f", "w_g", "L_f", "L_g", "total", "learning_rate")},
        )
        for r in rows
    ]
