"""
Report emission

Files written by emit_report (all under one output directory):

    sweep_result.json     the full SweepResult (source of the `report` verb)
    runs.csv              one row per (lambda, variant, trial) run
    csv format:
      panel_<metric>.csv  lambda, reverse_log_lambda, <variant>_mean/_std/_n
      gains.csv           AUC gain of every cell over the lambda=0 cell
      trials.csv          realised simulation statistics per trial
      summary.csv         mean / std of those statistics over trials
      trends.csv          rank correlations and sign tests per variant
    json format:
      report.json         the same tables as JSON
"""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union
import logging

import numpy as np
import pandas as pd

from app.exceptions import DatasetParseError
from app.schemas import ExperimentSpec, RunRecord, SweepResult, TrialSummary
from app.services.artifacts import FLOAT_FORMAT, ArtifactService
from app.services.experiment import RUN_METRICS, ExperimentService

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
ReportFormat = Literal["csv", "json"]

TRIAL_STATISTICS = (
    "prev_day_position1_ctr",
    "prev_day_position2_ctr",
    "last_day_position1_ctr",
    "last_day_position2_ctr",
    "all_days_position1_ctr",
    "all_days_position2_ctr",
    "naive_avg_ctr",
    "naive_mse",
    "upper_bound_auc",
    "upper_bound_log_loss",
)

GAIN_COLUMNS = ("fl_auc_rel_gain", "fl_auc_abs_diff", "rus_auc_rel_gain", "rus_auc_abs_diff")


def _to_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def _records(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    """Rows as dicts with NaN mapped to None"""
    return [
        {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in row.items()}
        for row in frame.to_dict(orient="records")
    ]


class ReportService:
    """Service class for report tables"""

    # ------------------------------------------------------------------ #
    #  Tables                                                              #
    # ------------------------------------------------------------------ #

    @staticmethod
    def panel(result: SweepResult, metric: str) -> pd.DataFrame:
        """One figure panel: metric mean / std per lambda, one column group per variant"""
        rows = []
        for lam in sorted({c.lam for c in result.cells}):
            row: Dict[str, Any] = {"lambda": lam}
            for cell in (c for c in result.cells if c.lam == lam):
                row["reverse_log_lambda"] = cell.reverse_log_lambda
                summary = cell.metrics[metric]
                row[f"{cell.variant.value}_mean"] = summary.mean
                row[f"{cell.variant.value}_std"] = summary.std
                row[f"{cell.variant.value}_n"] = summary.n
            rows.append(row)
        return pd.DataFrame(rows)

    @staticmethod
    def gains(result: SweepResult) -> pd.DataFrame:
        rows = [
            {
                "variant": c.variant.value,
                "lambda": c.lam,
                "reverse_log_lambda": c.reverse_log_lambda,
                **{name: getattr(c, name) for name in GAIN_COLUMNS},
                "n_failed": c.n_failed,
            }
            for c in result.cells
        ]
        return pd.DataFrame(rows).sort_values(["variant", "lambda"], kind="stable").reset_index(drop=True)

    @staticmethod
    def trials(result: SweepResult) -> pd.DataFrame:
        return pd.DataFrame([t.model_dump(mode="json") for t in result.trials])

    @staticmethod
    def summary(result: SweepResult) -> pd.DataFrame:
        """Mean / std over completed trials of every realised simulation statistic"""
        completed = [t for t in result.trials if t.status == "completed"]
        rows = []
        for name in TRIAL_STATISTICS:
            values = np.array(
                [getattr(t, name) for t in completed if getattr(t, name) is not None], dtype=np.float64
            )
            rows.append({
                "statistic": name,
                "mean": float(values.mean()) if values.size else None,
                "std": float(values.std(ddof=1)) if values.size > 1 else (0.0 if values.size else None),
                "n": int(values.size),
            })
        return pd.DataFrame(rows)

    @staticmethod
    def trends(result: SweepResult) -> pd.DataFrame:
        return pd.DataFrame([t.model_dump(mode="json") for t in result.trends])

    @staticmethod
    def runs(result: SweepResult) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump(mode="json") for r in result.runs], columns=list(RunRecord.model_fields))

    # ------------------------------------------------------------------ #
    #  Emit / load                                                         #
    # ------------------------------------------------------------------ #

    @staticmethod
    def emit_report(result: SweepResult, out_dir: PathLike, fmt: ReportFormat = "csv") -> List[Path]:
        """Write the report files for `result`; returns the paths written"""
        if fmt not in ("csv", "json"):
            raise ValueError(f"Unknown report format: {fmt}")
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        written = [
            ArtifactService.write_json(
                result.model_dump(mode="json", exclude={"spec": {"output_dir"}}),
                out_dir / "sweep_result.json",
            ),
            _to_csv(ReportService.runs(result), out_dir / "runs.csv"),
        ]

        tables = {f"panel_{metric}": ReportService.panel(result, metric) for metric in RUN_METRICS}
        tables["gains"] = ReportService.gains(result)
        tables["trials"] = ReportService.trials(result)
        tables["summary"] = ReportService.summary(result)
        tables["trends"] = ReportService.trends(result)

        if fmt == "csv":
            written.extend(_to_csv(frame, out_dir / f"{name}.csv") for name, frame in tables.items())
        else:
            written.append(ArtifactService.write_json(
                {name: _records(frame) for name, frame in tables.items()},
                out_dir / "report.json",
            ))
            logger.info(f"Wrote {written[-1]}")
        return written

    @staticmethod
    def write_failures(result: SweepResult, out_dir: PathLike) -> Optional[Path]:
        """failures.json listing every failed trial and cell; None when nothing failed"""
        if not result.has_failures:
            return None
        manifest = {
            "trials": [
                {"trial": t.trial, "seed": t.seed, "error": t.error}
                for t in result.trials if t.status == "failed"
            ],
            "cells": [
                {
                    "lambda": c.lam,
                    "variant": c.variant.value,
                    "n_trials": c.n_trials,
                    "n_failed": c.n_failed,
                    "errors": c.errors,
                }
                for c in result.cells if c.failed
            ],
        }
        path = ArtifactService.write_json(manifest, Path(out_dir) / "failures.json")
        logger.warning(f"Failure manifest written to {path}")
        return path

    @staticmethod
    def load_result(path: PathLike) -> SweepResult:
        return SweepResult.model_validate(ArtifactService.read_json(path))

    @staticmethod
    def load_runs_csv(path: PathLike) -> List[RunRecord]:
        """Per-run records from runs.csv; empty cells become None"""
        path = Path(path)
        frame = pd.read_csv(
            path,
            dtype={"error": str, "checkpoint": str, "variant": str, "status": str},
            float_precision="round_trip",
        )
        missing = set(RunRecord.model_fields) - set(frame.columns)
        if missing:
            raise DatasetParseError(f"runs.csv lacks columns {sorted(missing)}", line=1)
        return [RunRecord.model_validate(row) for row in _records(frame)]

    @staticmethod
    def regenerate(
        spec: ExperimentSpec,
        trials: List[TrialSummary],
        runs_csv: PathLike,
    ) -> SweepResult:
        """Re-aggregate a sweep from its persisted per-run records"""
        return ExperimentService.aggregate(spec, trials, ReportService.load_runs_csv(runs_csv))
