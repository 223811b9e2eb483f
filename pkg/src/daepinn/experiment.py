"""Holds file-based experiment configs, run manifests and the runners behind the command-line subcommands"""
import csv
import itertools
import logging
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union, get_type_hints

import matplotlib
import mpmath
import numpy as np
import pytz
import yaml

from daepinn._version import version
from daepinn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from daepinn.dae_model import SemiExplicitDAE, model_from_name
from daepinn.errors import ConfigError
from daepinn.global_config import GlobalConfig
from daepinn.network import STACKED_DEPTH, STACKED_WIDTH, AssemblyMode, build_assembly
from daepinn.pinn_loss import PinnProblem, write_training_log
from daepinn.plotting import plot_curves, plot_states
from daepinn.reference_solver import SolverConfig, solve
from daepinn.rollout_eval import (
    EnsembleReport,
    RolloutResult,
    SchemeCurves,
    compare_schemes,
    evaluate_ensemble,
    l2_relative_error,
    simulate,
    write_curves_csv,
    write_drift_csv,
    write_errors_csv,
)
from daepinn.tableau import ButcherTableau, Scheme, read_tableau, tableau_for
from daepinn.trainer import PenaltyTrainState, TrainConfig, make_datasets, penalty_train

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class TruthSource(str, Enum):
    """Where the reference trajectory of a rollout comes from"""

    Oracle = "oracle"
    NoTruth = "none"

    def __str__(self):
        return str(self.value)


@dataclass
class ModelSection:
    """The DAE by registry name plus parameter overrides"""

    name: str = "three_bus"
    params: Dict[str, float] = field(default_factory=dict)


@dataclass
class TableauSection:
    """The IRK scheme, either generated from `(scheme, nu)` or read from `file`"""

    scheme: Scheme = Scheme.GaussLegendre
    nu: int = 100
    file: Optional[str] = None


@dataclass
class LayerSize:
    width: int
    depth: int

    def __post_init__(self):
        for name in ("width", "depth"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValueError(f"`{name}` must be a positive integer, found: {value!r}")


@dataclass
class NetworkSection:
    """Assembly mode and the size of the `y` and `z` networks.

    In stacked mode the sizes apply to each scalar network; a stacked section that leaves them out gets width 25 and
    depth 4.
    """

    mode: AssemblyMode = AssemblyMode.Unstacked
    y: LayerSize = field(default_factory=lambda: LayerSize(100, 4))
    z: LayerSize = field(default_factory=lambda: LayerSize(40, 4))


@dataclass
class SeedsSection:
    """The only two sources of randomness of a run"""

    data: int = 1
    init: int = 0


@dataclass
class OracleSection:
    scheme: Scheme = Scheme.GaussLegendre
    nu: int = 3
    h_ref: float = 1e-3
    newton_tol: float = 1e-12
    newton_max_iter: int = 50

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            tableau=tableau_for(self.scheme, self.nu),
            h_ref=self.h_ref,
            newton_tol=self.newton_tol,
            newton_max_iter=self.newton_max_iter,
        )


@dataclass
class EvaluationSection:
    """Rollout length, ensemble size and reference solver of the evaluation.

    Attributes
    ----------
    steps: int = 80
        Rollout steps `N`.
    ensemble: int = 100
        Number of held-out initial conditions evaluated, taken from the start of the test set.
    truth: TruthSource = TruthSource.Oracle
        Whether rollouts are compared against the reference solver.
    oracle: OracleSection
        Settings of the reference solver.
    z_guess: Optional[List[float]] = None
        Initial guess selecting the algebraic branch, the model default when unset.
    plots: bool = True
        Whether `simulate` also writes SVG plots.
    """

    steps: int = 80
    ensemble: int = 100
    truth: TruthSource = TruthSource.Oracle
    oracle: OracleSection = field(default_factory=OracleSection)
    z_guess: Optional[List[float]] = None
    plots: bool = True

    def __post_init__(self):
        for name in ("steps", "ensemble"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValueError(f"`{name}` must be a positive integer, found: {value!r}")


GRID_AXES = ("width", "z_width", "depth", "y_depth", "z_depth", "train_size", "mode")


@dataclass
class GridSection:
    """Axes of an experiment grid; every combination of the listed values is one run.

    Axis names are `width` (y network), `z_width`, `depth` (both networks), `y_depth`, `z_depth`, `train_size` and
    `mode`.
    """

    axes: Dict[str, List[Any]] = field(default_factory=dict)
    max_points: int = 64
    workers: int = 1

    def __post_init__(self):
        for name in self.axes:
            if name not in GRID_AXES:
                raise ValueError(f"Unknown grid axis `{name}`, expected one of {', '.join(GRID_AXES)}")
        for name in ("max_points", "workers"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValueError(f"`{name}` must be a positive integer, found: {value!r}")

    def points(self) -> List[Dict[str, Any]]:
        if not self.axes or any(not values for values in self.axes.values()):
            return []
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]


def _join(path: str, key: Any) -> str:
    return f"{path}.{key}" if path else str(key)


def _coerce(hint: Any, value: Any, path: str) -> Any:
    """Converts a raw YAML value to the declared field type where YAML is ambiguous"""
    if value is None:
        return None
    if is_dataclass(hint):
        return _build(hint, value, path)
    if isinstance(hint, type) and issubclass(hint, Enum):
        try:
            return hint(value)
        except ValueError:
            allowed = ", ".join(str(m.value) for m in hint)
            raise ConfigError(f"unknown value {value!r}, expected one of {allowed}", path) from None
    if hint is float and not isinstance(value, bool):
        # PyYAML reads `1e-3` as a string
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected a number, found {value!r}", path) from None
    if hint is int and isinstance(value, (str, float)) and not isinstance(value, bool):
        try:
            number = float(value)
        except ValueError:
            raise ConfigError(f"expected an integer, found {value!r}", path) from None
        if not number.is_integer():
            raise ConfigError(f"expected an integer, found {value!r}", path)
        return int(number)
    return value


def _build(cls: Any, raw: Any, path: str, exclude: Sequence[str] = ()) -> Any:
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ConfigError(f"expected a mapping, found {type(raw).__name__}", path or None)
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls) if f.name not in exclude}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError("unknown key", _join(path, key))
        kwargs[key] = _coerce(hints[key], value, _join(path, key))
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e), path or None) from e


def _plain(value: Any) -> Any:
    """Converts enums, tuples and numpy scalars into types YAML writes natively"""
    if isinstance(value, Enum):
        return str(value)
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


_TRAIN_SEED_FIELDS = ("seed", "data_seed")


@dataclass
class ExperimentConfig:
    """A complete, reproducible run description.

    Every default reproduces the full-scale best model: three-bus system, Gauss-Legendre with 100
    stages, `h = 0.1`, unstacked networks of width 100 (`y`) and 40 (`z`) with 4 gated layers, 2000 training and
    1500 test initial conditions, unit initial penalty weights and `beta = 2`.

    Attributes
    ----------
    model: ModelSection
    tableau: TableauSection
    h: float = 0.1
        Step size of the trained predictor.
    network: NetworkSection
    train: TrainConfig
        Optimization settings; its seeds are taken from `seeds`.
    seeds: SeedsSection
    evaluation: EvaluationSection
    grid: Optional[GridSection] = None
        Axes of an experiment grid, only read by `run_grid`.
    output_dir: Optional[str] = None
        Where artifacts go, `<GlobalConfig.output_root>/experiment` when unset.
    """

    model: ModelSection = field(default_factory=ModelSection)
    tableau: TableauSection = field(default_factory=TableauSection)
    h: float = 0.1
    network: NetworkSection = field(default_factory=NetworkSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: SeedsSection = field(default_factory=SeedsSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    grid: Optional[GridSection] = None
    output_dir: Optional[str] = None

    def __post_init__(self):
        if not (isinstance(self.h, float) and self.h > 0.0 and np.isfinite(self.h)):
            raise ConfigError(f"must be a finite positive number, found: {self.h!r}", "h")

    @classmethod
    def from_dict(cls, d: Optional[Mapping[str, Any]]) -> "ExperimentConfig":
        """Builds a config from a parsed document; a `manifest` section is accepted and ignored.

        Raises
        ------
        ConfigError
            On unknown keys, ill-typed values or failed validation, with the dotted path of the field.
        """
        d = dict(d or {})
        d.pop("manifest", None)
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError("unknown key", key)
        network = d.get("network") or {}
        if isinstance(network, Mapping) and str(network.get("mode")) == str(AssemblyMode.Stacked):
            network = dict(network)
            network.setdefault("y", {"width": STACKED_WIDTH, "depth": STACKED_DEPTH})
            network.setdefault("z", {"width": STACKED_WIDTH, "depth": STACKED_DEPTH})
        h = _coerce(float, d["h"], "h") if "h" in d else 0.1
        cfg = cls(
            model=_build(ModelSection, d.get("model"), "model"),
            tableau=_build(TableauSection, d.get("tableau"), "tableau"),
            h=h,
            network=_build(NetworkSection, network, "network"),
            train=_build(TrainConfig, d.get("train"), "train", exclude=_TRAIN_SEED_FIELDS),
            seeds=_build(SeedsSection, d.get("seeds"), "seeds"),
            evaluation=_build(EvaluationSection, d.get("evaluation"), "evaluation"),
            grid=_build(GridSection, d["grid"], "grid") if d.get("grid") is not None else None,
            output_dir=None if d.get("output_dir") is None else str(d["output_dir"]),
        )
        try:
            cfg.build_dae()
        except KeyError as e:
            raise ConfigError(str(e.args[0]), "model") from e
        except ValueError as e:
            raise ConfigError(str(e), "model.params") from e
        if cfg.tableau.file is not None and not Path(cfg.tableau.file).is_file():
            raise ConfigError(f"file not found: {cfg.tableau.file}", "tableau.file")
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        train = self.train.to_dict()
        for name in _TRAIN_SEED_FIELDS:
            train.pop(name)
        d = {
            "model": asdict(self.model),
            "tableau": asdict(self.tableau),
            "h": self.h,
            "network": asdict(self.network),
            "train": train,
            "seeds": asdict(self.seeds),
            "evaluation": asdict(self.evaluation),
            "output_dir": self.output_dir,
        }
        if self.grid is not None:
            d["grid"] = asdict(self.grid)
        return _plain(d)

    @classmethod
    def load(cls, path: PathLike) -> "ExperimentConfig":
        """Reads a YAML config or manifest.

        Raises
        ------
        ConfigError
            On YAML syntax errors, reporting line and column, and on every error `from_dict` raises.
        """
        try:
            with Path(path).open() as fh:
                doc = yaml.safe_load(fh)
        except yaml.MarkedYAMLError as e:
            mark = e.problem_mark
            where = f"line {mark.line + 1}, column {mark.column + 1}" if mark is not None else "unknown position"
            raise ConfigError(f"{path}: invalid YAML at {where}: {e.problem}") from e
        if doc is not None and not isinstance(doc, Mapping):
            raise ConfigError(f"{path}: expected a mapping at the top level")
        return cls.from_dict(doc)

    def dump(self, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path

    def resolve_output_dir(self, override: Optional[PathLike] = None) -> Path:
        if override is not None:
            return Path(override)
        if self.output_dir is not None:
            return Path(self.output_dir)
        return Path(GlobalConfig.output_root) / "experiment"

    def build_dae(self) -> SemiExplicitDAE:
        return model_from_name(self.model.name, self.model.params)

    def build_tableau(self) -> ButcherTableau:
        if self.tableau.file is not None:
            return read_tableau(self.tableau.file)
        return tableau_for(self.tableau.scheme, self.tableau.nu)

    def train_config(self) -> TrainConfig:
        """The training settings with the seeds of the `seeds` section"""
        return replace(self.train, seed=self.seeds.init, data_seed=self.seeds.data)

    def ic_ranges(self, dae: Optional[SemiExplicitDAE] = None) -> List[Tuple[float, float]]:
        if self.train.ic_ranges is not None:
            return list(self.train.ic_ranges)
        return [(float(lo), float(hi)) for lo, hi in (dae or self.build_dae()).ic_ranges]

    def datasets(
        self, dae: Optional[SemiExplicitDAE] = None, data_seed: Optional[int] = None
    ) -> Tuple[np.ndarray, np.ndarray]:
        seed = self.seeds.data if data_seed is None else data_seed
        return make_datasets(self.train.train_size, self.train.test_size, self.ic_ranges(dae), seed)

    def z_guess(self, dae: SemiExplicitDAE) -> Sequence[float]:
        return dae.z_guess if self.evaluation.z_guess is None else self.evaluation.z_guess


def package_versions() -> Dict[str, str]:
    return {
        "daepinn": version,
        "numpy": np.__version__,
        "mpmath": mpmath.__version__,
        "matplotlib": matplotlib.__version__,
        "pyyaml": yaml.__version__,
        "python": platform.python_version(),
    }


def write_manifest(
    cfg: ExperimentConfig,
    out_dir: PathLike,
    command: str,
    outputs: Optional[Mapping[str, Any]] = None,
    name: str = "manifest.yaml",
) -> Path:
    """Writes the manifest `name` beside the outputs of a run.

    The manifest is the resolved config plus a `manifest` section holding the command, both seeds, package versions
    and a UTC timestamp. `ExperimentConfig.load` accepts it back as a config.
    """
    out_dir = Path(out_dir)
    doc = replace(cfg, output_dir=str(out_dir)).to_dict()
    doc["manifest"] = {
        "command": command,
        "seeds": asdict(cfg.seeds),
        "versions": package_versions(),
        "timestamp": datetime.now(pytz.utc).isoformat(),
        "outputs": _plain(dict(outputs or {})),
    }
    path = out_dir / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


def write_initial_conditions(ics: np.ndarray, labels: Sequence[str], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(labels))
        for row in ics:
            writer.writerow([GlobalConfig.fmt(v) for v in row])
    return path


def run_datagen(cfg: ExperimentConfig, out_dir: Optional[PathLike] = None) -> Tuple[Path, Path]:
    """Writes the training and test initial conditions of a config as CSV files"""
    out = cfg.resolve_output_dir(out_dir)
    dae = cfg.build_dae()
    train, test = cfg.datasets(dae)
    train_path = write_initial_conditions(train, dae.y_labels, out / "train_ics.csv")
    test_path = write_initial_conditions(test, dae.y_labels, out / "test_ics.csv")
    write_manifest(cfg, out, "datagen", {"train": train_path.name, "test": test_path.name})
    logger.info("Wrote %d training and %d test initial conditions to %s", len(train), len(test), out)
    return train_path, test_path


@dataclass
class TrainingOutcome:
    checkpoint: Path
    log: Path
    state: PenaltyTrainState
    summary: Dict[str, Any]


def _outer_summary(state: PenaltyTrainState) -> Dict[str, Any]:
    last = state.outer[-1]
    return _plain(
        {
            "converged": state.converged,
            "epochs": sum(o.epochs for o in state.outer),
            "w_f": state.w_f,
            "w_g": state.w_g,
            "L_f": last.L_f,
            "L_g": last.L_g,
            "train_total": last.total,
            "test_total": last.test_total,
            "outer": [asdict(o) for o in state.outer],
        }
    )


def run_training(cfg: ExperimentConfig, out_dir: Optional[PathLike] = None) -> TrainingOutcome:
    """Trains an assembly as configured and writes `training_log.csv`, `checkpoint.yaml` and `manifest.yaml`"""
    out = cfg.resolve_output_dir(out_dir)
    dae = cfg.build_dae()
    tableau = cfg.build_tableau()
    tc = cfg.train_config()
    ic_ranges = cfg.ic_ranges(dae)
    assembly = build_assembly(
        dae.n,
        dae.m,
        tableau,
        cfg.h,
        mode=cfg.network.mode,
        y_width=cfg.network.y.width,
        y_depth=cfg.network.y.depth,
        z_width=cfg.network.z.width,
        z_depth=cfg.network.z.depth,
        ic_ranges=ic_ranges,
    )
    train, test = cfg.datasets(dae)
    logger.info(
        "Training %s assembly on `%s` with %s, h=%g, %d training points",
        cfg.network.mode,
        dae.name,
        tableau,
        cfg.h,
        len(train),
    )
    params, state = penalty_train(PinnProblem(assembly, dae), train, tc, assembly.init_params(tc.seed), test_set=test)
    summary = _outer_summary(state)

    log_path = write_training_log(state.records, out / "training_log.csv")
    ckpt = Checkpoint(
        assembly=assembly,
        params=params,
        model=cfg.model.name,
        model_params=dict(cfg.model.params),
        seeds=asdict(cfg.seeds),
        tableau_file=cfg.tableau.file,
        meta=summary,
    )
    ckpt_path = save_checkpoint(ckpt, out / "checkpoint.yaml")
    write_manifest(cfg, out, "train", {"checkpoint": ckpt_path.name, "log": log_path.name})
    return TrainingOutcome(checkpoint=ckpt_path, log=log_path, state=state, summary=summary)


def run_evaluation(
    cfg: ExperimentConfig,
    ckpt: Checkpoint,
    out_dir: Optional[PathLike] = None,
    ensemble: Optional[int] = None,
    steps: Optional[int] = None,
) -> EnsembleReport:
    """Rolls a checkpoint out from the first `ensemble` held-out initial conditions and writes the error tables.

    Writes `ensemble_summary.csv` (mean and std per state) and `ensemble_members.csv` (one row per member).
    """
    out = cfg.resolve_output_dir(out_dir)
    ensemble = cfg.evaluation.ensemble if ensemble is None else ensemble
    steps = cfg.evaluation.steps if steps is None else steps
    if ensemble > cfg.train.test_size:
        raise ConfigError(
            f"ensemble of {ensemble} exceeds the {cfg.train.test_size} held-out initial conditions",
            "evaluation.ensemble",
        )
    dae = ckpt.dae()
    _, test = cfg.datasets(dae, data_seed=ckpt.seeds.get("data"))
    report = evaluate_ensemble(
        ckpt.assembly,
        ckpt.params,
        dae,
        test[:ensemble],
        steps,
        oracle=cfg.evaluation.oracle.solver_config(),
        z_guess=cfg.z_guess(dae),
    )
    report.write_summary_csv(out / "ensemble_summary.csv")
    report.write_members_csv(out / "ensemble_members.csv")
    write_manifest(
        replace(cfg, evaluation=replace(cfg.evaluation, ensemble=ensemble, steps=steps)),
        out,
        "evaluate",
        {"summary": "ensemble_summary.csv", "members": "ensemble_members.csv", "failures": len(report.failures)},
    )
    return report


def run_simulation(
    ckpt: Checkpoint,
    ic: Sequence[float],
    steps: int,
    out_dir: PathLike,
    truth: Union[TruthSource, str] = TruthSource.Oracle,
    oracle: Optional[SolverConfig] = None,
    z_guess: Optional[Sequence[float]] = None,
    plots: bool = True,
) -> RolloutResult:
    """Rolls a checkpoint out from one initial condition.

    Writes `trajectory.csv` and `drift.csv`; with an oracle truth also `truth.csv`, `errors.csv` and, when `plots`
    is set, one SVG per state.
    """
    out = Path(out_dir)
    dae = ckpt.dae()
    result = simulate(ckpt.assembly, ckpt.params, ic, steps, dae=dae)
    result.trajectory.write_csv(out / "trajectory.csv")
    write_drift_csv(result.drift, out / "drift.csv")
    if TruthSource(truth) == TruthSource.Oracle:
        reference = solve(
            dae, ic, dae.z_guess if z_guess is None else z_guess, steps * ckpt.assembly.h, oracle or SolverConfig()
        )
        reference.write_csv(out / "truth.csv")
        result.errors = l2_relative_error(result.trajectory, reference)
        write_errors_csv(result.errors, out / "errors.csv")
        if plots:
            plot_states(result.trajectory, reference, out)
    logger.info("Rolled out %d steps from %s into %s", steps, list(ic), out)
    return result


def run_compare(
    checkpoints: Mapping[str, Checkpoint],
    ic: Sequence[float],
    steps: int,
    out_dir: PathLike,
    oracle: Optional[SolverConfig] = None,
    z_guess: Optional[Sequence[float]] = None,
    plots: bool = True,
) -> List[SchemeCurves]:
    """Writes `curves.csv` with the error-versus-steps curve of every checkpoint, plus SVG plots"""
    if not checkpoints:
        raise ValueError("At least one checkpoint is needed for a comparison")
    models = {c.model for c in checkpoints.values()}
    if len(models) != 1:
        raise ValueError(f"Checkpoints were trained on different models: {sorted(models)}")
    dae = next(iter(checkpoints.values())).dae()
    predictors = {name: (c.assembly, c.params) for name, c in checkpoints.items()}
    curves = compare_schemes(predictors, dae, ic, steps, oracle=oracle, z_guess=z_guess)
    out = Path(out_dir)
    write_curves_csv(curves, out / "curves.csv")
    if plots:
        plot_curves(curves, out)
    return curves


def load_checkpoints(entries: Sequence[str]) -> Dict[str, Checkpoint]:
    """Parses `name=path` pairs, a bare path being named after its parent directory"""
    loaded: Dict[str, Checkpoint] = {}
    for entry in entries:
        name, sep, path = entry.partition("=")
        if not sep:
            path, name = entry, Path(entry).parent.name or Path(entry).stem
        if name in loaded:
            raise ValueError(f"Duplicate checkpoint name `{name}`")
        loaded[name] = load_checkpoint(path)
    return loaded


def apply_grid_point(cfg: ExperimentConfig, point: Mapping[str, Any]) -> ExperimentConfig:
    """Returns a copy of `cfg` with the values of one grid point applied"""
    d = cfg.to_dict()
    d.pop("grid", None)
    net = d["network"]
    if "mode" in point:
        net["mode"] = str(point["mode"])
        if str(point["mode"]) == str(AssemblyMode.Stacked):
            net["y"] = {"width": STACKED_WIDTH, "depth": STACKED_DEPTH}
            net["z"] = {"width": STACKED_WIDTH, "depth": STACKED_DEPTH}
    if "width" in point:
        net["y"]["width"] = point["width"]
    if "z_width" in point:
        net["z"]["width"] = point["z_width"]
    if "depth" in point:
        net["y"]["depth"] = net["z"]["depth"] = point["depth"]
    if "y_depth" in point:
        net["y"]["depth"] = point["y_depth"]
    if "z_depth" in point:
        net["z"]["depth"] = point["z_depth"]
    if "train_size" in point:
        d["train"]["train_size"] = point["train_size"]
    return ExperimentConfig.from_dict(d)


def _run_grid_point(args: Tuple[int, Dict[str, Any], Dict[str, Any], str]) -> Dict[str, Any]:
    index, cfg_dict, point, out = args
    row: Dict[str, Any] = {"point": index, **point}
    try:
        cfg = apply_grid_point(ExperimentConfig.from_dict(cfg_dict), point)
        outcome = run_training(cfg, out)
    except Exception as e:
        logger.warning("Grid point %d %s failed: %s", index, point, e)
        row.update(status="failed", error=str(e))
        return row
    s = outcome.summary
    row.update(
        status="ok",
        epochs=s["epochs"],
        converged=s["converged"],
        L_f=s["L_f"],
        L_g=s["L_g"],
        train_total=s["train_total"],
        test_total=s["test_total"],
        error="",
    )
    return row


GRID_SUMMARY_FIELDS = ["status", "epochs", "converged", "L_f", "L_g", "train_total", "test_total", "error"]


def run_grid(cfg: ExperimentConfig, out_dir: Optional[PathLike] = None) -> List[Dict[str, Any]]:
    """Trains one run per grid point, each under `point_<index>/`, and writes `grid_summary.csv`.

    A failing point is recorded in the summary and the grid continues.

    Raises
    ------
    ConfigError
        When the config has no grid, the grid is empty or it has more points than `max_points`.
    """
    if cfg.grid is None:
        raise ConfigError("the config has no grid section", "grid")
    points = cfg.grid.points()
    if not points:
        raise ConfigError("the grid has no points", "grid.axes")
    if len(points) > cfg.grid.max_points:
        raise ConfigError(f"{len(points)} points exceed the cap of {cfg.grid.max_points}", "grid.max_points")
    out = cfg.resolve_output_dir(out_dir)
    base = cfg.to_dict()
    base.pop("grid")
    jobs = [(i, base, p, str(out / f"point_{i:03d}")) for i, p in enumerate(points)]
    logger.info("Running a grid of %d points with %d worker(s)", len(jobs), cfg.grid.workers)
    if cfg.grid.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.grid.workers) as pool:
            rows = list(pool.map(_run_grid_point, jobs))
    else:
        rows = [_run_grid_point(job) for job in jobs]

    out.mkdir(parents=True, exist_ok=True)
    axes = list(cfg.grid.axes)
    with (out / "grid_summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point"] + axes + GRID_SUMMARY_FIELDS)
        for row in rows:
            values = [row.get(name, "") for name in GRID_SUMMARY_FIELDS]
            writer.writerow(
                [row["point"]]
                + [row[a] for a in axes]
                + [GlobalConfig.fmt(v) if isinstance(v, float) else v for v in values]
            )
    write_manifest(cfg, out, "grid", {"summary": "grid_summary.csv", "points": len(rows)})
    return rows
