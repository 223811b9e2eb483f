"""Holds the penalty-method training loop: full-batch Adam with plateau learning-rate decay"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from daepinn.errors import TrainingDivergence
from daepinn.network import NetworkParams
from daepinn.pinn_loss import EpochRecord, LossBreakdown

logger = logging.getLogger(__name__)


class TrainingProblem(Protocol):
    """Anything the training loop can optimize, `PinnProblem` in particular"""

    def loss(self, params: NetworkParams, dataset: np.ndarray, w_f: float, w_g: float) -> LossBreakdown:
        ...

    def loss_and_grad(
        self, params: NetworkParams, dataset: np.ndarray, w_f: float, w_g: float
    ) -> Tuple[LossBreakdown, Dict[str, np.ndarray]]:
        ...


@dataclass
class PlateauConfig:
    """Learning-rate decay on loss plateaus.

    Once `window` epochs have passed since the last reduction, the rate is multiplied by `factor` (clamped at
    `min_lr`) whenever the loss at the end of the last `window` epochs is not at least `threshold` below the loss at
    its start, unless the loss fell at every epoch of that window.
    """

    window: int = 2000
    factor: float = 0.5
    min_lr: float = 1e-5
    threshold: float = 0.01

    def __post_init__(self):
        if isinstance(self.window, bool) or not isinstance(self.window, int) or self.window < 1:
            raise ValueError(f"`window` must be a positive integer, found: {self.window!r}")
        if not 0.0 < self.factor < 1.0:
            raise ValueError(f"`factor` must lie in (0, 1), found: {self.factor}")
        if not self.min_lr > 0.0:
            raise ValueError(f"`min_lr` must be positive, found: {self.min_lr}")
        if not 0.0 <= self.threshold < 1.0:
            raise ValueError(f"`threshold` must lie in [0, 1), found: {self.threshold}")


@dataclass
class TrainConfig:
    """Settings of one penalty-method training run.

    Attributes
    ----------
    epochs_per_outer: int = 50000
        Epoch cap of every inner solve.
    K: int = 5
        Number of outer iterations after the initial solve.
    w_f0: float = 1.0
        Initial weight of the dynamic residual loss.
    w_g0: float = 1.0
        Initial weight of the algebraic residual loss.
    beta: float = 2.0
        Factor applied to both weights at every outer iteration, must exceed 1.
    convergence_tol: float = 1e-5
        Inner solves stop once the weighted loss is at most this value.
    lr0: float = 1e-3
        Initial Adam learning rate of every inner solve.
    plateau: PlateauConfig
        Learning-rate decay settings.
    seed: int = 0
        Parameter initialization seed.
    data_seed: int = 1
        Seed of the training and test initial conditions.
    train_size: int = 2000
        Number of training initial conditions.
    test_size: int = 1500
        Number of held-out initial conditions.
    eval_every: int = 1000
        Test-loss evaluation period in epochs.
    ic_ranges: Optional[List[Tuple[float, float]]] = None
        Uniform sampling bounds per dynamic state, the model defaults when unset.
    """

    epochs_per_outer: int = 50000
    K: int = 5
    w_f0: float = 1.0
    w_g0: float = 1.0
    beta: float = 2.0
    convergence_tol: float = 1e-5
    lr0: float = 1e-3
    plateau: PlateauConfig = field(default_factory=PlateauConfig)
    seed: int = 0
    data_seed: int = 1
    train_size: int = 2000
    test_size: int = 1500
    eval_every: int = 1000
    ic_ranges: Optional[List[Tuple[float, float]]] = None

    def __post_init__(self):
        if isinstance(self.plateau, dict):
            self.plateau = PlateauConfig(**self.plateau)
        for name in ("epochs_per_outer", "train_size", "test_size", "eval_every"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValueError(f"`{name}` must be a positive integer, found: {value!r}")
        if isinstance(self.K, bool) or not isinstance(self.K, int) or self.K < 0:
            raise ValueError(f"`K` must be a non-negative integer, found: {self.K!r}")
        if not self.beta > 1.0:
            raise ValueError(f"`beta` must exceed 1, found: {self.beta}")
        for name in ("w_f0", "w_g0", "convergence_tol", "lr0"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"`{name}` must be a finite positive number, found: {value}")
        if self.ic_ranges is not None:
            self.ic_ranges = [(float(lo), float(hi)) for lo, hi in self.ic_ranges]

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.ic_ranges is not None:
            d["ic_ranges"] = [list(r) for r in self.ic_ranges]
        return d

    def weights(self, k: int) -> Tuple[float, float]:
        """Penalty weights of outer iteration `k`, `beta^k` times the initial weights"""
        factor = self.beta**k
        return self.w_f0 * factor, self.w_g0 * factor


def sample_initial_conditions(count: int, ic_ranges: Sequence[Sequence[float]], seed) -> np.ndarray:
    """Draws `count` points uniformly from the box `ic_ranges`, deterministic for a fixed seed"""
    if isinstance(count, bool) or not isinstance(count, int) or count < 1:
        raise ValueError(f"`count` must be a positive integer, found: {count!r}")
    bounds = np.asarray(ic_ranges, dtype=np.float64).reshape(-1, 2)
    if np.any(bounds[:, 0] > bounds[:, 1]):
        raise ValueError(f"Sampling bounds must satisfy lo <= hi, found: {bounds.tolist()}")
    rng = np.random.default_rng(seed)
    return rng.uniform(bounds[:, 0], bounds[:, 1], size=(count, bounds.shape[0]))


def make_datasets(
    train_size: int, test_size: int, ic_ranges: Sequence[Sequence[float]], data_seed: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Draws the training and test sets from two independent children of `data_seed`.

    Raises
    ------
    ValueError
        When a test point coincides with a training point.
    """
    train_seed, test_seed = np.random.SeedSequence(data_seed).spawn(2)
    train = sample_initial_conditions(train_size, ic_ranges, train_seed)
    test = sample_initial_conditions(test_size, ic_ranges, test_seed)
    seen = {row.tobytes() for row in train}
    if any(row.tobytes() in seen for row in test):
        raise ValueError("Training and test initial conditions overlap")
    return train, test


@dataclass
class AdamState:
    """First and second moment accumulators per parameter and the step counter"""

    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "AdamState":
        zeros = {k: np.zeros_like(p) for k, p in params.items()}
        return cls(m=zeros, v={k: z.copy() for k, z in zeros.items()})


def adam_step(
    params: NetworkParams, grads: Dict[str, np.ndarray], state: AdamState, lr: float, epoch: Optional[int] = None
) -> Tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update. Returns new parameter arrays; `state` is updated in place.

    Raises
    ------
    TrainingDivergence
        When a gradient holds a non-finite entry.
    """
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"Non-finite gradient of `{k}`", epoch=epoch)
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    updated: NetworkParams = {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"Gradient of `{k}` has shape {g.shape}, parameter has {p.shape}")
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        updated[k] = p - lr * (state.m[k] / bc1) / (np.sqrt(state.v[k] / bc2) + state.eps)
    return updated, state


def reduce_lr_on_plateau(history: Sequence[float], plateau: PlateauConfig, lr: float) -> float:
    """Returns the decayed learning rate when the loss history has plateaued, `lr` otherwise.

    `history` holds the losses since the last reduction.
    """
    w = plateau.window
    if len(history) < w:
        return lr
    recent = np.asarray(history[-w:], dtype=np.float64)
    # a loss still falling at every epoch is not on a plateau, however slowly it falls
    if w > 1 and bool(np.all(np.diff(recent) < 0.0)):
        return lr
    if float(recent[-1]) > (1.0 - plateau.threshold) * float(recent[0]):
        return max(lr * plateau.factor, plateau.min_lr)
    return lr


@dataclass
class InnerResult:
    """Outcome of one inner solve; `params` are the best parameters met, including the starting point"""

    params: NetworkParams
    converged: bool
    epochs: int
    history: List[float]
    best: LossBreakdown
    lr: float
    test_history: List[Tuple[int, float]] = field(default_factory=list)
    records: List[EpochRecord] = field(default_factory=list)


def train_inner(
    problem: TrainingProblem,
    dataset: np.ndarray,
    w_f: float,
    w_g: float,
    cfg: TrainConfig,
    warm_start_params: NetworkParams,
    outer_iter: int = 0,
    test_set: Optional[np.ndarray] = None,
) -> InnerResult:
    """Minimizes `w_f L_f + w_g L_g` by full-batch Adam until the loss is at most `convergence_tol`.

    Hitting the epoch cap is not an error: the best parameters are returned flagged as not converged.
    `history[i]` is the loss at which step `i + 1` was taken.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in warm_start_params.items()}
    state = AdamState.zeros_like(params)
    lr = cfg.lr0
    history: List[float] = []
    test_history: List[Tuple[int, float]] = []
    records: List[EpochRecord] = []
    since_reduction = 0
    best_params, best = params, None
    epochs = 0
    while True:
        breakdown, grads = problem.loss_and_grad(params, dataset, w_f, w_g)
        if not math.isfinite(breakdown.total):
            raise TrainingDivergence(f"Non-finite loss in outer iteration {outer_iter}", epoch=epochs)
        if best is None or breakdown.total < best.total:
            best_params, best = params, breakdown
        if breakdown.total <= cfg.convergence_tol or epochs >= cfg.epochs_per_outer:
            break
        params, state = adam_step(params, grads, state, lr, epoch=epochs)
        epochs += 1
        history.append(breakdown.total)
        records.append(EpochRecord(epochs, outer_iter, w_f, w_g, breakdown.L_f, breakdown.L_g, breakdown.total, lr))
        new_lr = reduce_lr_on_plateau(history[since_reduction:], cfg.plateau, lr)
        if new_lr != lr:
            logger.debug("Plateau at epoch %d, learning rate %.3g -> %.3g", epochs, lr, new_lr)
            lr, since_reduction = new_lr, len(history)
        if epochs % cfg.eval_every == 0:
            if test_set is not None:
                test_total = problem.loss(params, test_set, w_f, w_g).total
                test_history.append((epochs, test_total))
                logger.info(
                    "outer %d epoch %d: train loss %.6e, test loss %.6e, lr %.3g",
                    outer_iter,
                    epochs,
                    breakdown.total,
                    test_total,
                    lr,
                )
            else:
                logger.info("outer %d epoch %d: train loss %.6e, lr %.3g", outer_iter, epochs, breakdown.total, lr)

    assert best is not None
    converged = best.total <= cfg.convergence_tol
    if not converged:
        logger.warning(
            "Outer iteration %d hit the %d-epoch cap with loss %.6e above %.1e",
            outer_iter,
            cfg.epochs_per_outer,
            best.total,
            cfg.convergence_tol,
        )
    return InnerResult(
        params=best_params,
        converged=converged,
        epochs=epochs,
        history=history,
        best=best,
        lr=lr,
        test_history=test_history,
        records=records,
    )


@dataclass
class OuterRecord:
    """Summary of one outer penalty iteration"""

    k: int
    w_f: float
    w_g: float
    epochs: int
    converged: bool
    L_f: float
    L_g: float
    total: float
    test_total: Optional[float] = None


@dataclass
class PenaltyTrainState:
    """Progress of the penalty method.

    Attributes
    ----------
    k: int
        The last completed outer iteration.
    w_f: float
        Current dynamic weight, `beta^k w_f0`.
    w_g: float
        Current algebraic weight, `beta^k w_g0`.
    best_params: NetworkParams
        Parameters returned by the last inner solve.
    history: List[float]
        Loss per epoch over all outer iterations.
    outer: List[OuterRecord]
        One summary per outer iteration.
    records: List[EpochRecord]
        The training log rows.
    """

    k: int = 0
    w_f: float = 1.0
    w_g: float = 1.0
    best_params: NetworkParams = field(default_factory=dict)
    history: List[float] = field(default_factory=list)
    outer: List[OuterRecord] = field(default_factory=list)
    records: List[EpochRecord] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return bool(self.outer) and self.outer[-1].converged


def penalty_train(
    problem: TrainingProblem,
    dataset: np.ndarray,
    cfg: TrainConfig,
    init_params: NetworkParams,
    test_set: Optional[np.ndarray] = None,
) -> Tuple[NetworkParams, PenaltyTrainState]:
    """Runs the penalty method: an initial solve with `(w_f0, w_g0)`, then `K` solves with both weights multiplied by
    `beta` each time, every solve warm-started from the previous one with fresh Adam moments.
    """
    state = PenaltyTrainState()
    params = init_params
    for k in range(cfg.K + 1):
        w_f, w_g = cfg.weights(k)
        logger.info("Outer iteration %d/%d with weights w_f=%g, w_g=%g", k, cfg.K, w_f, w_g)
        result = train_inner(problem, dataset, w_f, w_g, cfg, params, outer_iter=k, test_set=test_set)
        params = result.params
        test_total = problem.loss(params, test_set, w_f, w_g).total if test_set is not None else None
        state.k, state.w_f, state.w_g = k, w_f, w_g
        state.best_params = params
        state.history.extend(result.history)
        state.records.extend(result.records)
        state.outer.append(
            OuterRecord(
                k=k,
                w_f=w_f,
                w_g=w_g,
                epochs=result.epochs,
                converged=result.converged,
                L_f=result.best.L_f,
                L_g=result.best.L_g,
                total=result.best.total,
                test_total=test_total,
            )
        )
        logger.info(
            "Outer iteration %d finished after %d epochs: L_f=%.6e, L_g=%.6e, converged=%s",
            k,
            result.epochs,
            result.best.L_f,
            result.best.L_g,
            result.converged,
        )
    return params, state
