"""
Command-line entry point

    python -m app.main simulate  --config configs/default.json
    python -m app.main train     --config configs/default.json --data runs/sim/fl.csv
    python -m app.main sweep     --config configs/default.json --trials 3
    python -m app.main user-bias --config configs/user_bias.json
    python -m app.main report    --input runs/sweep --format json

Exit codes: 0 success, 1 some runs failed (see failures.json),
2 invalid configuration or input files.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError

from app import __version__
from app.config import Settings, settings as default_settings
from app.exceptions import ConfigurationError, DatasetParseError
from app.logging_config import configure_logging
from app.models.ann import bypass_prediction_diff, init_ann_params
from app.schemas import ExperimentSpec, RunRecord
from app.services.artifacts import ArtifactService
from app.services.experiment import USER_BIAS_R, ExperimentService
from app.services.reports import ReportService
from app.services.simulation import SimulationService
from app.services.training import TrainingService
from app.worker import Worker

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_CONFIG = 2


# ============================================================================
# Configuration
# ============================================================================

def _csv_list(raw: str, cast=str) -> List[Any]:
    return [cast(p.strip()) for p in raw.split(",") if p.strip()]


def load_spec(path: Optional[str], overrides: Optional[Dict[str, Any]] = None) -> ExperimentSpec:
    """Read an ExperimentSpec JSON file (or the defaults) and apply overrides"""
    raw: Dict[str, Any] = {}
    if path:
        try:
            raw = ArtifactService.read_json(path)
        except FileNotFoundError as exc:
            raise ConfigurationError(f"Config file not found: {path}") from exc
        except ValueError as exc:
            raise ConfigurationError(f"Config file {path} is not valid JSON: {exc}") from exc

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, field = key.rpartition(".")
        target = raw.setdefault(section, {}) if section else raw
        target[field] = value

    try:
        return ExperimentSpec.model_validate(raw)
    except ValidationError as exc:
        raise ConfigurationError(f"Invalid experiment config: {exc}") from exc


def _spec_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {
        "master_seed": args.seed,
        "trials": args.trials,
        "sim.r": args.r,
        "train.epochs": args.epochs,
        "output_dir": args.output_dir,
    }
    try:
        if args.lambdas:
            overrides["lambdas"] = _csv_list(args.lambdas, float)
    except ValueError as exc:
        raise ConfigurationError(f"Invalid --lambdas: {args.lambdas}") from exc
    if args.variants:
        overrides["variants"] = _csv_list(args.variants)
    return overrides


def _runtime_settings(args: argparse.Namespace) -> Settings:
    update = {}
    if getattr(args, "workers", None) is not None:
        if args.workers < 1:
            raise ConfigurationError("--workers must be at least 1")
        update["worker_concurrency"] = args.workers
    if getattr(args, "executor", None):
        update["worker_executor"] = args.executor
    if getattr(args, "log_level", None):
        update["log_level"] = args.log_level
    if not update:
        return default_settings
    try:
        return Settings(**{**default_settings.model_dump(), **update})
    except ValidationError as exc:
        raise ConfigurationError(f"Invalid runtime setting: {exc}") from exc


# ============================================================================
# Verbs
# ============================================================================

def cmd_simulate(args: argparse.Namespace, settings: Settings) -> int:
    spec = load_spec(args.config, {"sim.r": args.r, "sim.rng_seed": args.seed, "output_dir": args.output_dir})
    out_dir = Path(spec.output_dir or settings.output_dir)
    configure_logging(settings, run_dir=out_dir)
    ArtifactService.write_json(spec.sim.model_dump(mode="json"), out_dir / "resolved_config.json")

    output = SimulationService.run_feedback_loop(spec.sim)
    naive = SimulationService.naive_ctr_baseline(output)
    upper_bound = SimulationService.logistic_upper_bound(spec.sim, output.heldout)
    ArtifactService.export_simulation(output, out_dir, naive, upper_bound)
    logger.info(f"Naive CTR baseline: avg={naive[0]:.6f} mse={naive[1]:.6g}")
    logger.info(f"Logistic upper bound: AUC={upper_bound[0]:.4f} log loss={upper_bound[1]:.4f}")
    return EXIT_OK


def _position_ctrs(args: argparse.Namespace) -> tuple:
    """CLI flags first, else the simulation summary next to the FL file"""
    p1, p2 = args.position1_ctr, args.position2_ctr
    summary_path = Path(args.data).parent / "simulation_summary.json"
    if (p1 is None or p2 is None) and summary_path.exists():
        summary = ArtifactService.read_json(summary_path)
        p1 = summary["last_day_position1_ctr"] if p1 is None else p1
        p2 = summary["last_day_position2_ctr"] if p2 is None else p2
    return p1, p2


def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    overrides = {"train.lam": args.lam, "train.variant": args.variant, "train.epochs": args.epochs,
                 "train.rng_seed": args.seed, "output_dir": args.output_dir}
    spec = load_spec(args.config, overrides)
    cfg = spec.train
    out_dir = Path(spec.output_dir or settings.output_dir)
    configure_logging(settings, run_dir=out_dir)
    ArtifactService.write_json(cfg.model_dump(mode="json"), out_dir / "resolved_config.json")

    fl = ArtifactService.import_dataset(args.data)
    position1_ctr, position2_ctr = _position_ctrs(args)

    params = init_ann_params(fl.n_features, cfg)
    log = TrainingService.train(params, fl, cfg)
    TrainingService.probe_bias(params, fl, cfg)
    fl_report = TrainingService.evaluate(params, fl, tag="FL")

    record = RunRecord(
        lam=cfg.lam, variant=cfg.variant, trial=0, seed=cfg.rng_seed,
        fl_auc=fl_report.auc, fl_log_loss=fl_report.log_loss, fl_probe_mse=fl_report.bias_probe_mse,
    )
    payload: Dict[str, Any] = {"fl": fl_report.model_dump(mode="json"), "training": log.model_dump(mode="json")}

    if args.heldout:
        if position1_ctr is None:
            raise ConfigurationError("Evaluating on heldout data needs --position1-ctr")
        heldout = ArtifactService.import_dataset(args.heldout)
        rus_report = TrainingService.evaluate(params, heldout, tag="RUS", position1_ctr=position1_ctr)
        record.rus_auc = rus_report.auc
        record.rus_log_loss = rus_report.log_loss
        record.rus_probe_mse = rus_report.bias_probe_mse
        payload["rus"] = rus_report.model_dump(mode="json")
        if position2_ctr is not None:
            record.bypass_diff = bypass_prediction_diff(params, heldout.X, position1_ctr, position2_ctr)

    checkpoint = ArtifactService.save_checkpoint(params, out_dir / "model.json", cfg)
    record.checkpoint = checkpoint.name
    payload["record"] = record.model_dump(mode="json")
    ArtifactService.write_json(payload, out_dir / "metrics.json")
    logger.info(f"FL AUC={fl_report.auc:.4f} probe MSE={fl_report.bias_probe_mse:.6g}")
    return EXIT_OK


def _finish_sweep(result, out_dir: Path, fmt: str) -> int:
    ReportService.emit_report(result, out_dir, fmt)
    if ReportService.write_failures(result, out_dir):
        return EXIT_FAILURES
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, settings: Settings) -> int:
    spec = load_spec(args.config, _spec_overrides(args))
    out_dir = ExperimentService.output_dir(spec, settings)
    configure_logging(settings, run_dir=out_dir)
    worker = Worker(settings.worker_concurrency, settings.worker_executor)
    result = ExperimentService.run_experiment(spec, settings, worker)
    return _finish_sweep(result, out_dir, args.format)


def cmd_user_bias(args: argparse.Namespace, settings: Settings) -> int:
    r = USER_BIAS_R if args.r is None else args.r
    args.r = None
    spec = load_spec(args.config, _spec_overrides(args))
    out_dir = ExperimentService.output_dir(spec, settings)
    configure_logging(settings, run_dir=out_dir)
    worker = Worker(settings.worker_concurrency, settings.worker_executor)
    try:
        result = ExperimentService.run_user_bias_experiment(spec, r, settings, worker)
    except ValidationError as exc:
        raise ConfigurationError(f"Invalid r={r}: {exc}") from exc
    return _finish_sweep(result, out_dir, args.format)


def cmd_report(args: argparse.Namespace, settings: Settings) -> int:
    in_dir = Path(args.input)
    out_dir = Path(args.output_dir) if args.output_dir else in_dir
    configure_logging(settings)
    try:
        result = ReportService.load_result(in_dir / "sweep_result.json")
    except FileNotFoundError as exc:
        raise ConfigurationError(f"No sweep_result.json in {in_dir}") from exc
    except ValidationError as exc:
        raise ConfigurationError(f"Invalid sweep_result.json: {exc}") from exc

    if args.from_runs:
        result = ReportService.regenerate(result.spec, result.trials, in_dir / "runs.csv")
    return _finish_sweep(result, out_dir, args.format)


# ============================================================================
# Parser
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adn",
        description="Adversarial position-debiasing: feedback-loop simulation and lambda sweeps.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Override ADN_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    def _common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="Experiment config JSON (defaults if omitted)")
        p.add_argument("--output-dir", default=None, help="Where outputs are written")
        p.add_argument("--seed", type=int, default=None, help="Override the seed")

    p = sub.add_parser("simulate", help="Run one feedback-loop simulation and export its data")
    _common(p)
    p.add_argument("--r", type=float, default=None, help="Position-2 click loss probability")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("train", help="Train one ANN on an exported FL CSV")
    _common(p)
    p.add_argument("--data", required=True, help="FL dataset CSV")
    p.add_argument("--heldout", default=None, help="Heldout (RUS) dataset CSV")
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--variant", choices=["with_bypass", "no_bypass"], default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--position1-ctr", type=float, default=None, help="b fed to the bypass at inference")
    p.add_argument("--position2-ctr", type=float, default=None, help="Second b for the bypass diff")
    p.set_defaults(handler=cmd_train)

    for name, handler, help_text in (
        ("sweep", cmd_sweep, "Run the lambda x variant x trial sweep"),
        ("user-bias", cmd_user_bias, f"Sweep with position-2 click loss (default r={USER_BIAS_R})"),
    ):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--lambdas", default=None, help="Comma-separated lambda grid")
        p.add_argument("--variants", default=None, help="Comma-separated: with_bypass,no_bypass")
        p.add_argument("--r", type=float, default=None, help="Position-2 click loss probability")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--workers", type=int, default=None, help="Concurrent jobs")
        p.add_argument("--executor", choices=["process", "thread"], default=None)
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        p.set_defaults(handler=handler)

    p = sub.add_parser("report", help="Re-emit report files from a finished sweep")
    p.add_argument("--input", required=True, help="Sweep output directory")
    p.add_argument("--output-dir", default=None, help="Defaults to --input")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--from-runs", action="store_true", help="Re-aggregate from runs.csv")
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = _runtime_settings(args)
        return args.handler(args, settings)
    except (ConfigurationError, DatasetParseError) as exc:
        logger.error(str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
