"""Holds the `daepinn` command-line entry point.

Exit status is 0 on success, 2 for configuration and usage errors, 1 for numerical and other runtime failures.
"""
import argparse
import logging
import sys
from dataclasses import replace
from typing import Dict, List, Optional, Sequence

import yaml

from daepinn._version import version
from daepinn.checkpoint import load_checkpoint
from daepinn.errors import AmbiguousRankError, ConfigError, NotADAEError, NumericalFailure
from daepinn.experiment import (
    ExperimentConfig,
    ModelSection,
    OracleSection,
    TableauSection,
    TruthSource,
    load_checkpoints,
    run_compare,
    run_datagen,
    run_evaluation,
    run_grid,
    run_simulation,
    run_training,
    write_manifest,
)
from daepinn.global_config import GlobalConfig
from daepinn.reference_solver import solve
from daepinn.tableau import MAX_STAGES, Scheme, tableau_for, verify_order_conditions, write_tableau

logger = logging.getLogger("daepinn.cli")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def parse_floats(text: str, what: str) -> List[float]:
    """Parses a comma-separated list of numbers such as `"0.1,0,0.02,0"`"""
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, found {text!r}", what) from None


def parse_params(pairs: Sequence[str]) -> Dict[str, float]:
    params: Dict[str, float] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"expected NAME=VALUE, found {pair!r}", "--param")
        try:
            params[key.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"expected a number for `{key}`, found {value!r}", "--param") from None
    return params


def _load_config(path: Optional[str]) -> ExperimentConfig:
    return ExperimentConfig.load(path) if path else ExperimentConfig()


def _config_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    """Applies the optional flags shared by the config-driven subcommands"""
    d = cfg.to_dict()
    for flag, (section, key) in {
        "stages": ("tableau", "nu"),
        "epochs": ("train", "epochs_per_outer"),
        "outer": ("train", "K"),
        "train_size": ("train", "train_size"),
        "data_seed": ("seeds", "data"),
        "init_seed": ("seeds", "init"),
        "ensemble": ("evaluation", "ensemble"),
        "steps": ("evaluation", "steps"),
    }.items():
        value = getattr(args, flag, None)
        if value is not None:
            d[section][key] = value
    if getattr(args, "h", None) is not None:
        d["h"] = args.h
    return ExperimentConfig.from_dict(d)


def cmd_tableau(args: argparse.Namespace) -> int:
    t = tableau_for(args.scheme, args.stages)
    report = verify_order_conditions(t, max_k=min(2 * t.nu, 12))
    if not report.passes(b_up_to=min(t.order, 12), c_up_to=min(t.nu, 12)):
        logger.error("Order conditions failed: B %s, C %s", report.b_residuals, report.c_residuals)
        return EXIT_RUNTIME
    path = write_tableau(t, args.out)
    cfg = ExperimentConfig(tableau=TableauSection(scheme=t.scheme, nu=t.nu, file=str(path)))
    write_manifest(cfg, path.parent, "tableau", {"tableau": path.name}, name=f"{path.stem}.manifest.yaml")
    logger.info("Wrote %s to %s", t, path)
    return EXIT_OK


def cmd_datagen(args: argparse.Namespace) -> int:
    cfg = _config_overrides(_load_config(args.config), args)
    run_datagen(cfg, args.out)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config_overrides(_load_config(args.config), args)
    outcome = run_training(cfg, args.out)
    logger.info(
        "Training finished: converged=%s, total=%.6e, checkpoint %s",
        outcome.summary["converged"],
        outcome.summary["train_total"],
        outcome.checkpoint,
    )
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    oracle = OracleSection(scheme=Scheme(args.scheme), nu=args.stages, h_ref=args.h_ref, newton_tol=args.newton_tol)
    cfg = ExperimentConfig(model=ModelSection(name=args.model, params=parse_params(args.param)))
    cfg = replace(cfg, evaluation=replace(cfg.evaluation, oracle=oracle))
    dae = cfg.build_dae()
    ic = parse_floats(args.ic, "--ic")
    if len(ic) != dae.n:
        raise ConfigError(f"expected {dae.n} values ({','.join(dae.y_labels)}), found {len(ic)}", "--ic")
    z_guess = parse_floats(args.zguess, "--zguess") if args.zguess else list(dae.z_guess)
    if len(z_guess) != dae.m:
        raise ConfigError(f"expected {dae.m} values, found {len(z_guess)}", "--zguess")
    cfg = replace(cfg, evaluation=replace(cfg.evaluation, z_guess=z_guess))
    traj = solve(dae, ic, z_guess, args.tend, oracle.solver_config())
    out = traj.write_csv(args.out)
    write_manifest(cfg, out.parent, "oracle", {"trajectory": out.name, "ic": ic}, name=f"{out.stem}.manifest.yaml")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    cfg = _load_config(args.config)
    cfg = replace(cfg, model=ModelSection(name=ckpt.model, params=dict(ckpt.model_params)))
    dae = ckpt.dae()
    ic = parse_floats(args.ic, "--ic")
    if len(ic) != dae.n:
        raise ConfigError(f"expected {dae.n} values ({','.join(dae.y_labels)}), found {len(ic)}", "--ic")
    steps = args.steps or cfg.evaluation.steps
    result = run_simulation(
        ckpt,
        ic,
        steps,
        args.out,
        truth=TruthSource(args.truth),
        oracle=cfg.evaluation.oracle.solver_config(),
        z_guess=cfg.z_guess(dae),
        plots=cfg.evaluation.plots and not args.no_plots,
    )
    write_manifest(cfg, args.out, "simulate", {"checkpoint": str(args.ckpt), "ic": ic, "steps": steps})
    if result.errors:
        for label, value in result.errors.items():
            logger.info("%s: relative L2 error %.4e", label, value)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    cfg = _config_overrides(_load_config(args.config), args)
    report = run_evaluation(cfg, ckpt, args.out)
    for label in report.labels:
        logger.info("%s: mean %.4e, std %.4e", label, report.mean[label], report.std[label])
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    checkpoints = load_checkpoints(args.ckpt)
    cfg = _load_config(args.config)
    first = next(iter(checkpoints.values()))
    cfg = replace(cfg, model=ModelSection(name=first.model, params=dict(first.model_params)))
    dae = first.dae()
    ic = parse_floats(args.ic, "--ic")
    if len(ic) != dae.n:
        raise ConfigError(f"expected {dae.n} values ({','.join(dae.y_labels)}), found {len(ic)}", "--ic")
    steps = args.steps or cfg.evaluation.steps
    run_compare(
        checkpoints,
        ic,
        steps,
        args.out,
        oracle=cfg.evaluation.oracle.solver_config(),
        z_guess=cfg.z_guess(dae),
        plots=cfg.evaluation.plots,
    )
    write_manifest(cfg, args.out, "compare", {"checkpoints": list(args.ckpt), "ic": ic, "steps": steps})
    return EXIT_OK


def cmd_grid(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    if args.workers is not None and cfg.grid is not None:
        cfg = replace(cfg, grid=replace(cfg.grid, workers=args.workers))
    rows = run_grid(cfg, args.out)
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        logger.warning("%d of %d grid points failed", len(failed), len(rows))
    return EXIT_OK


def _add_config_flags(p: argparse.ArgumentParser, training: bool = True) -> None:
    p.add_argument("--config", help="YAML experiment config or manifest; defaults reproduce the best model")
    p.add_argument("--out", help="output directory, `output_dir` of the config when omitted")
    p.add_argument("--data-seed", dest="data_seed", type=int, help="seed of the initial-condition sets")
    p.add_argument("--train-size", dest="train_size", type=int, help="number of training initial conditions")
    if training:
        p.add_argument("--init-seed", dest="init_seed", type=int, help="seed of the parameter initialization")
        p.add_argument("--stages", type=int, help="number of Gauss-Legendre stages")
        p.add_argument("--h", type=float, help="step size of the predictor")
        p.add_argument("--epochs", type=int, help="epoch cap of every inner solve")
        p.add_argument("--outer", type=int, help="number of outer penalty iterations K")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="daepinn", description="Physics-informed implicit Runge-Kutta surrogates for index-1 DAEs."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {version}")
    parser.add_argument(
        "--log-level",
        dest="log_level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help=f"logging verbosity, {GlobalConfig.log_level} by default",
    )
    parser.add_argument("--output-root", dest="output_root", help="default root of run directories")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("tableau", help="generate and verify a Butcher tableau file")
    p.add_argument("--scheme", choices=[str(s) for s in Scheme], default=str(Scheme.GaussLegendre))
    p.add_argument("--stages", type=int, default=1, help=f"number of stages, 1 to {MAX_STAGES}")
    p.add_argument("--out", required=True, help="tableau file to write")
    p.set_defaults(func=cmd_tableau)

    p = sub.add_parser("datagen", help="write the training and test initial conditions")
    _add_config_flags(p, training=False)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train an assembly with the penalty method")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("oracle", help="solve a reference trajectory")
    p.add_argument("--model", default="three_bus")
    p.add_argument("--param", action="append", default=[], metavar="NAME=VALUE", help="model parameter override")
    p.add_argument("--ic", required=True, help="comma-separated dynamic initial state")
    p.add_argument("--zguess", help="comma-separated guess selecting the algebraic branch")
    p.add_argument("--tend", type=float, required=True, help="integration horizon in seconds")
    p.add_argument("--scheme", choices=[str(s) for s in Scheme], default=str(Scheme.GaussLegendre))
    p.add_argument("--stages", type=int, default=3)
    p.add_argument("--h-ref", dest="h_ref", type=float, default=1e-3)
    p.add_argument("--newton-tol", dest="newton_tol", type=float, default=1e-12)
    p.add_argument("--out", required=True, help="trajectory CSV to write")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("simulate", help="roll a checkpoint out from one initial condition")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", help="config providing the oracle settings")
    p.add_argument("--ic", required=True, help="comma-separated dynamic initial state")
    p.add_argument("--steps", type=int, help="rollout steps N")
    p.add_argument("--truth", choices=[str(s) for s in TruthSource], default=str(TruthSource.Oracle))
    p.add_argument("--no-plots", dest="no_plots", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="ensemble errors of a checkpoint on held-out initial conditions")
    p.add_argument("--ckpt", required=True)
    _add_config_flags(p, training=False)
    p.add_argument("--ensemble", type=int, help="number of held-out initial conditions")
    p.add_argument("--steps", type=int, help="rollout steps N")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="error-versus-steps curves of several checkpoints")
    p.add_argument("--ckpt", required=True, action="append", metavar="[NAME=]PATH")
    p.add_argument("--config", help="config providing the oracle settings")
    p.add_argument("--ic", required=True, help="comma-separated dynamic initial state")
    p.add_argument("--steps", type=int, help="rollout steps N")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("grid", help="train one run per point of the config's grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.set_defaults(func=cmd_grid)
    return parser


def setup_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(level=level or GlobalConfig.log_level, format=GlobalConfig.log_format, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Runs one subcommand and returns the exit status"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG
    setup_logging(args.log_level)
    if args.output_root:
        GlobalConfig.output_root = args.output_root
    try:
        return args.func(args)
    except (ConfigError, yaml.YAMLError) as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except (NotADAEError, AmbiguousRankError) as e:
        # raised by the descriptor reduction mid-run
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_RUNTIME
    except (FileNotFoundError, KeyError, ValueError) as e:
        logger.error("Invalid input: %s", e)
        return EXIT_CONFIG
    except NumericalFailure as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_RUNTIME
    except Exception as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
