"""Holds the gated fully-connected network and its assembly into a stage predictor.

A network maps `x` to `U = phi(x W1 + b1)`, `V = phi(x W2 + b2)` and then, starting from `H = x`, applies `depth`
gates `Z = phi(H Wz_k + bz_k)`, `H = (1 - Z) U + Z V`, finishing with the affine map `H W + b`. Algebraic networks
pass their output through softplus so predicted algebraic states are strictly positive.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from daepinn import autodiff as ad
from daepinn.autodiff import Tensor
from daepinn.tableau import ButcherTableau
from daepinn.validators import validate_positive, validate_positive_int, validate_range

# a flat mapping of namespaced parameter names, e.g. `y.W1`, to arrays (or tensors during training)
NetworkParams = Dict[str, np.ndarray]
ParamLike = Mapping[str, Union[np.ndarray, Tensor]]
SeedLike = Union[int, np.random.SeedSequence]

STACKED_WIDTH = 25
STACKED_DEPTH = 4


class Activation(str, Enum):
    """Pointwise activations of the hidden layers"""

    Sin = "sin"

    def __str__(self):
        return str(self.value)


class OutputFeature(str, Enum):
    """Transform applied to the final affine layer"""

    Identity = "identity"
    Softplus = "softplus"

    def __str__(self):
        return str(self.value)


class AssemblyMode(str, Enum):
    """`unstacked` uses one network per state group, `stacked` one network per scalar state"""

    Unstacked = "unstacked"
    Stacked = "stacked"

    def __str__(self):
        return str(self.value)


@dataclass
class NetworkConfig:
    """Shape and feature description of one gated network.

    Attributes
    ----------
    in_dim: int
        Input dimension.
    out_dim: int
        Output dimension, the number of predicted components times `nu + 1`.
    width: int
        Width of every hidden layer.
    depth: int
        Number of gate layers.
    activation: Activation = Activation.Sin
        Hidden activation.
    output_feature: OutputFeature = OutputFeature.Identity
        Final transform.
    """

    in_dim: int
    out_dim: int
    width: int
    depth: int
    activation: Activation = Activation.Sin
    output_feature: OutputFeature = OutputFeature.Identity

    def __post_init__(self):
        for name in ("in_dim", "out_dim", "width", "depth"):
            validate_positive_int(name, getattr(self, name))
        self.activation = Activation(self.activation)
        self.output_feature = OutputFeature(self.output_feature)

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Returns the parameter shapes in initialization order"""
        w = self.width
        shapes: Dict[str, Tuple[int, ...]] = {
            "W1": (self.in_dim, w),
            "b1": (w,),
            "W2": (self.in_dim, w),
            "b2": (w,),
        }
        for k in range(1, self.depth + 1):
            shapes[f"Wz{k}"] = (self.in_dim if k == 1 else w, w)
            shapes[f"bz{k}"] = (w,)
        shapes["W"] = (w, self.out_dim)
        shapes["b"] = (self.out_dim,)
        return shapes


def init_glorot_normal(cfg: NetworkConfig, seed: SeedLike) -> NetworkParams:
    """Draws weights from a normal distribution with standard deviation `sqrt(2 / (fan_in + fan_out))`.

    Biases start at zero. The result is deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    params: NetworkParams = {}
    for name, shape in cfg.param_shapes().items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            fan_in, fan_out = shape
            params[name] = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shape)
    return params


def _activate(cfg: NetworkConfig, x: Tensor) -> Tensor:
    if cfg.activation == Activation.Sin:
        return ad.sin(x)
    raise ValueError(f"Unsupported activation `{cfg.activation}`")  # pragma: no cover


def forward(cfg: NetworkConfig, params: ParamLike, X: Union[Tensor, np.ndarray]) -> Tensor:
    """Evaluates the gated network on a batch of shape `(B, in_dim)`, returning `(B, out_dim)`.

    Raises
    ------
    ValueError
        When the input does not have `in_dim` columns or a parameter has the wrong shape.
    """
    X = X if isinstance(X, Tensor) else Tensor(X)
    if X.ndim != 2 or X.shape[1] != cfg.in_dim:
        raise ValueError(f"Network input must have shape (batch, {cfg.in_dim}), found {X.shape}")
    for name, shape in cfg.param_shapes().items():
        actual = tuple(np.shape(params[name].value if isinstance(params[name], Tensor) else params[name]))
        if actual != shape:
            raise ValueError(f"Parameter `{name}` must have shape {shape}, found {actual}")

    U = _activate(cfg, ad.affine(X, params["W1"], params["b1"]))
    V = _activate(cfg, ad.affine(X, params["W2"], params["b2"]))
    H = X
    for k in range(1, cfg.depth + 1):
        Z = _activate(cfg, ad.affine(H, params[f"Wz{k}"], params[f"bz{k}"]))
        H = (1.0 - Z) * U + Z * V
    out = ad.affine(H, params["W"], params["b"])
    if cfg.output_feature == OutputFeature.Softplus:
        out = ad.softplus(out)
    return out


@dataclass
class InputScaler:
    """Affine map of every input coordinate from its sampling range onto [-1, 1].

    Degenerate ranges (`lo == hi`) keep a unit scale so the map stays invertible.
    """

    center: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(-1)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(-1)
        if self.center.shape != self.scale.shape:
            raise ValueError("Scaler center and scale must have the same length")
        if np.any(self.scale <= 0.0):
            raise ValueError("Scaler scales must be positive")

    @classmethod
    def from_ranges(cls, ranges: Sequence[Sequence[float]]) -> "InputScaler":
        bounds = np.array([validate_range(f"ic_ranges[{i}]", r) for i, r in enumerate(ranges)])
        center = 0.5 * (bounds[:, 0] + bounds[:, 1])
        scale = 0.5 * (bounds[:, 1] - bounds[:, 0])
        scale[scale == 0.0] = 1.0
        return cls(center=center, scale=scale)

    @classmethod
    def identity(cls, dim: int) -> "InputScaler":
        return cls(center=np.zeros(dim), scale=np.ones(dim))

    def __call__(self, x: Union[Tensor, np.ndarray]) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        return (x - self.center) / self.scale

    def to_dict(self) -> Dict[str, List[float]]:
        return {"center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Sequence[float]]) -> "InputScaler":
        return cls(center=np.array(d["center"]), scale=np.array(d["scale"]))


@dataclass
class PinnAssembly:
    """The surrogate of one implicit Runge-Kutta step.

    Given `y_n`, the assembly predicts the `nu` stage values and the step end for the dynamic states (identity output)
    and the algebraic states (softplus output). Slot `j < nu` of a prediction holds stage `j`, slot `nu` holds the
    step end.

    Attributes
    ----------
    mode: AssemblyMode
        Unstacked: one `y` network predicting all `n` dynamic states, one `z` network for all `m` algebraic states.
        Stacked: one network per scalar state.
    networks: Dict[str, NetworkConfig]
        Network configs keyed by the parameter namespace (`y`, `z` or `y0`, `y1`, ..., `z0`, ...).
    tableau: ButcherTableau
        The scheme the assembly is trained for.
    h: float
        The step size.
    n: int
        Number of dynamic states.
    m: int
        Number of algebraic states.
    scaler: InputScaler
        Normalization of the network inputs.
    """

    mode: AssemblyMode
    networks: Dict[str, NetworkConfig]
    tableau: ButcherTableau
    h: float
    n: int
    m: int
    scaler: InputScaler = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.mode = AssemblyMode(self.mode)
        validate_positive("h", self.h)
        if self.scaler is None:
            self.scaler = InputScaler.identity(self.n)
        if self.scaler.center.shape != (self.n,):
            raise ValueError(f"Input scaler must cover {self.n} coordinates, found {self.scaler.center.shape[0]}")
        slots = self.tableau.nu + 1
        for name in self.y_names + self.z_names:
            if name not in self.networks:
                raise ValueError(f"Assembly is missing network `{name}`")
        for name, cfg in self.networks.items():
            dynamic = name.startswith("y")
            expected_feature = OutputFeature.Identity if dynamic else OutputFeature.Softplus
            if cfg.output_feature != expected_feature:
                raise ValueError(f"Network `{name}` must use the `{expected_feature}` output feature")
            if cfg.in_dim != self.n:
                raise ValueError(f"Network `{name}` must take {self.n} inputs, found {cfg.in_dim}")
            target = (self.n if dynamic else self.m) if self.mode == AssemblyMode.Unstacked else 1
            if cfg.out_dim != target * slots:
                raise ValueError(f"Network `{name}` must have {target * slots} outputs, found {cfg.out_dim}")

    @property
    def y_names(self) -> List[str]:
        return ["y"] if self.mode == AssemblyMode.Unstacked else [f"y{i}" for i in range(self.n)]

    @property
    def z_names(self) -> List[str]:
        return ["z"] if self.mode == AssemblyMode.Unstacked else [f"z{i}" for i in range(self.m)]

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Shapes of the flat namespaced parameter mapping"""
        return {
            f"{net}.{key}": shape
            for net in self.y_names + self.z_names
            for key, shape in self.networks[net].param_shapes().items()
        }

    def init_params(self, seed: int) -> NetworkParams:
        """Glorot-normal initialization of every network, each from its own child of `seed`"""
        names = self.y_names + self.z_names
        children = np.random.SeedSequence(seed).spawn(len(names))
        params: NetworkParams = {}
        for net, child in zip(names, children):
            for key, value in init_glorot_normal(self.networks[net], child).items():
                params[f"{net}.{key}"] = value
        return params

    def _run(self, params: ParamLike, net: str, X: Tensor) -> Tensor:
        sub = {key: params[f"{net}.{key}"] for key in self.networks[net].param_shapes()}
        return forward(self.networks[net], sub, X)

    def _predict_group(self, params: ParamLike, names: List[str], dim: int, X: Tensor) -> Tensor:
        slots = self.tableau.nu + 1
        if self.mode == AssemblyMode.Unstacked:
            return ad.reshape(self._run(params, names[0], X), (X.shape[0], slots, dim))
        return ad.stack([self._run(params, net, X) for net in names], axis=2)

    def predict_stages(self, params: ParamLike, y_n: Union[Tensor, np.ndarray]) -> Tuple[Tensor, Tensor]:
        """Maps a batch `y_n` of shape `(B, n)` to stage predictions of shapes `(B, nu + 1, n)` and `(B, nu + 1, m)`"""
        y_n = y_n if isinstance(y_n, Tensor) else Tensor(np.atleast_2d(y_n))
        if y_n.ndim != 2 or y_n.shape[1] != self.n:
            raise ValueError(f"Input batch must have shape (batch, {self.n}), found {y_n.shape}")
        X = self.scaler(y_n)
        return (
            self._predict_group(params, self.y_names, self.n, X),
            self._predict_group(params, self.z_names, self.m, X),
        )


def _default(value: Optional[int], fallback: int) -> int:
    return fallback if value is None else value


def build_assembly(
    n: int,
    m: int,
    tableau: ButcherTableau,
    h: float,
    mode: Union[AssemblyMode, str] = AssemblyMode.Unstacked,
    y_width: Optional[int] = None,
    y_depth: Optional[int] = None,
    z_width: Optional[int] = None,
    z_depth: Optional[int] = None,
    ic_ranges: Optional[Sequence[Sequence[float]]] = None,
) -> PinnAssembly:
    """Builds the network configs of a stacked or unstacked assembly.

    In stacked mode every scalar network has width 25 and depth 4 unless widths and depths are given explicitly.
    Unstacked defaults are a 100 x 4 `y` network and a 40 x 4 `z` network.
    """
    mode = AssemblyMode(mode)
    stacked = mode == AssemblyMode.Stacked
    y_width = _default(y_width, STACKED_WIDTH if stacked else 100)
    y_depth = _default(y_depth, STACKED_DEPTH if stacked else 4)
    z_width = _default(z_width, STACKED_WIDTH if stacked else 40)
    z_depth = _default(z_depth, STACKED_DEPTH if stacked else 4)
    slots = tableau.nu + 1
    networks: Dict[str, NetworkConfig] = {}
    if mode == AssemblyMode.Unstacked:
        networks["y"] = NetworkConfig(n, n * slots, y_width, y_depth, output_feature=OutputFeature.Identity)
        networks["z"] = NetworkConfig(n, m * slots, z_width, z_depth, output_feature=OutputFeature.Softplus)
    else:
        for i in range(n):
            networks[f"y{i}"] = NetworkConfig(n, slots, y_width, y_depth, output_feature=OutputFeature.Identity)
        for i in range(m):
            networks[f"z{i}"] = NetworkConfig(n, slots, z_width, z_depth, output_feature=OutputFeature.Softplus)
    scaler = InputScaler.from_ranges(ic_ranges) if ic_ranges is not None else InputScaler.identity(n)
    return PinnAssembly(mode=mode, networks=networks, tableau=tableau, h=h, n=n, m=m, scaler=scaler)


Layout = List[Tuple[str, Tuple[int, ...]]]


def flatten_params(params: Mapping[str, np.ndarray]) -> Tuple[np.ndarray, Layout]:
    """Concatenates all parameters into one vector, returning it with the layout needed to undo it"""
    layout: Layout = [(name, tuple(np.shape(value))) for name, value in params.items()]
    if not layout:
        return np.zeros(0), layout
    return np.concatenate([np.ravel(params[name]) for name, _ in layout]), layout


def unflatten_params(vector: np.ndarray, layout: Layout) -> NetworkParams:
    """Inverse of `flatten_params`"""
    sizes = [int(np.prod(shape)) for _, shape in layout]
    if len(vector) != sum(sizes):
        raise ValueError(f"Parameter vector has {len(vector)} entries, layout expects {sum(sizes)}")
    params: NetworkParams = {}
    offset = 0
    for (name, shape), size in zip(layout, sizes):
        params[name] = np.array(vector[offset : offset + size]).reshape(shape)
        offset += size
    return params
