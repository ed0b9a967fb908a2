"""
Experiment orchestration: simulate every trial, train the
(lambda, variant, trial) grid on each trial's feedback-loop data and
aggregate the runs into a SweepResult.

Seeds: trial t simulates with trial_seed(master, t) and trains with
train_seed(master, t). Neither depends on lambda or variant, so every
cell of a trial trains on the same FL data from the same initialisation.
"""

from __future__ import annotations

import asyncio
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.background_tasks import clear_dataset_cache
from app.config import Settings, settings as default_settings
from app.metrics import absolute_auc_diff, relative_auc_gain, sign_test, spearman
from app.models.ann import Variant
from app.models.job_queue_model import JobStatus, JobType
from app.queue_manager import QueueManager
from app.schemas import (
    ExperimentSpec,
    MetricSummary,
    RunRecord,
    SweepCell,
    SweepResult,
    TrendSummary,
    TrialSummary,
)
from app.services.artifacts import ArtifactService
from app.worker import Worker

logger = logging.getLogger(__name__)

RUN_METRICS = (
    "fl_auc",
    "fl_log_loss",
    "fl_probe_mse",
    "rus_auc",
    "rus_log_loss",
    "rus_probe_mse",
    "bypass_diff",
)

USER_BIAS_R = 0.25


def reverse_log_lambda(lam: float) -> float:
    """x-axis position of lambda on a reverse-log scale: -log10(1 - lam)"""
    return -math.log10(max(1.0 - lam, 1e-12))


def trial_data_dir(trial: int) -> str:
    return f"trials/trial_{trial:03d}"


def run_dir(lam: float, variant: Variant, trial: int) -> str:
    return f"runs/{Variant(variant).value}/lam_{lam!r}/trial_{trial:03d}"


def _summarize(values: List[float]) -> MetricSummary:
    if not values:
        return MetricSummary()
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return MetricSummary(mean=float(arr.mean()), std=std, n=int(arr.size))


class ExperimentService:
    """Service class for lambda sweeps"""

    @staticmethod
    def trial_seed(master_seed: int, trial: int) -> int:
        return int(np.random.SeedSequence([master_seed, trial]).generate_state(1)[0])

    @staticmethod
    def train_seed(master_seed: int, trial: int) -> int:
        return int(np.random.SeedSequence([master_seed, trial, 1]).generate_state(1)[0])

    @staticmethod
    def output_dir(spec: ExperimentSpec, settings: Optional[Settings] = None) -> Path:
        settings = settings or default_settings
        return Path(spec.output_dir or settings.output_dir)

    # ------------------------------------------------------------------ #
    #  Entry points                                                        #
    # ------------------------------------------------------------------ #

    @staticmethod
    def run_experiment(
        spec: ExperimentSpec,
        settings: Optional[Settings] = None,
        worker: Optional[Worker] = None,
    ) -> SweepResult:
        """Run the whole sweep to completion; see run_experiment_async"""
        return asyncio.run(ExperimentService.run_experiment_async(spec, settings, worker))

    @staticmethod
    def run_user_bias_experiment(
        spec: ExperimentSpec,
        r: float = USER_BIAS_R,
        settings: Optional[Settings] = None,
        worker: Optional[Worker] = None,
    ) -> SweepResult:
        """The same sweep with position-2 clicks lost with probability r"""
        biased = spec.model_copy(update={"sim": spec.sim.model_copy(update={"r": r})})
        biased = ExperimentSpec.model_validate(biased.model_dump())
        return ExperimentService.run_experiment(biased, settings, worker)

    @staticmethod
    async def run_experiment_async(
        spec: ExperimentSpec,
        settings: Optional[Settings] = None,
        worker: Optional[Worker] = None,
    ) -> SweepResult:
        """
        Simulate every trial, then train every (lambda, variant, trial)
        cell. Failures are recorded per run and per cell; the sweep never
        aborts because of one.
        """
        settings = settings or default_settings
        worker = worker or Worker(settings.worker_concurrency, settings.worker_executor)
        out_dir = ExperimentService.output_dir(spec, settings)
        out_dir.mkdir(parents=True, exist_ok=True)
        ArtifactService.write_json(spec.model_dump(mode="json"), out_dir / "resolved_config.json")
        # this output directory may hold an earlier sweep's data files
        clear_dataset_cache()
        logger.info(
            f"Sweep: {len(spec.lambdas)} lambdas x {len(spec.variants)} variants x "
            f"{spec.trials} trials, r={spec.sim.r}, output={out_dir}"
        )

        # Stage 1: one simulation per trial
        queue = QueueManager()
        for trial in range(spec.trials):
            sim_cfg = spec.sim.model_copy(
                update={"rng_seed": ExperimentService.trial_seed(spec.master_seed, trial)}
            )
            queue.enqueue_simulate_trial(
                sim_cfg.model_dump(mode="json"), trial, str(out_dir), trial_data_dir(trial),
                max_retries=settings.job_max_retries,
            )
        await worker.run(queue)
        trials = ExperimentService._collect_trials(spec, queue)

        # Stage 2: the training grid, for trials whose data exists
        queue = QueueManager()
        failed_runs: List[RunRecord] = []
        for summary in trials:
            for variant in spec.variants:
                for lam in spec.lambdas:
                    seed = ExperimentService.train_seed(spec.master_seed, summary.trial)
                    if summary.status == "failed":
                        failed_runs.append(RunRecord(
                            lam=lam, variant=variant, trial=summary.trial, seed=seed,
                            status="failed", error=f"simulation failed: {summary.error}",
                        ))
                        continue
                    train_cfg = spec.train.model_copy(
                        update={"lam": lam, "variant": variant, "rng_seed": seed}
                    )
                    queue.enqueue_train_cell(
                        train_cfg.model_dump(mode="json"),
                        summary.trial,
                        str(out_dir),
                        summary.data_dir,
                        run_dir(lam, variant, summary.trial),
                        summary.last_day_position1_ctr,
                        summary.last_day_position2_ctr,
                        max_retries=settings.job_max_retries,
                    )
        await worker.run(queue)
        runs = ExperimentService._collect_runs(queue) + failed_runs

        result = ExperimentService.aggregate(spec, trials, runs)
        n_failed = sum(c.n_failed for c in result.cells)
        logger.info(f"Sweep finished: {len(result.runs)} runs, {n_failed} failed")
        return result

    # ------------------------------------------------------------------ #
    #  Collection                                                          #
    # ------------------------------------------------------------------ #

    @staticmethod
    def _collect_trials(spec: ExperimentSpec, queue: QueueManager) -> List[TrialSummary]:
        summaries = []
        for job in queue.jobs(JobType.SIMULATE_TRIAL):
            trial = job.payload["trial"]
            if job.status == JobStatus.COMPLETED:
                summaries.append(TrialSummary.model_validate(job.result))
            else:
                summaries.append(TrialSummary(
                    trial=trial,
                    seed=job.payload["sim_config"]["rng_seed"],
                    status="failed",
                    error=job.error_message,
                ))
        return sorted(summaries, key=lambda s: s.trial)

    @staticmethod
    def _collect_runs(queue: QueueManager) -> List[RunRecord]:
        records = []
        for job in queue.jobs(JobType.TRAIN_CELL):
            if job.status == JobStatus.COMPLETED:
                records.append(RunRecord.model_validate(job.result))
            else:
                cfg = job.payload["train_config"]
                records.append(RunRecord(
                    lam=cfg["lam"],
                    variant=cfg["variant"],
                    trial=job.payload["trial"],
                    seed=cfg["rng_seed"],
                    status="failed",
                    error=job.error_message,
                ))
        return records

    # ------------------------------------------------------------------ #
    #  Aggregation                                                         #
    # ------------------------------------------------------------------ #

    @staticmethod
    def aggregate(
        spec: ExperimentSpec,
        trials: List[TrialSummary],
        runs: List[RunRecord],
    ) -> SweepResult:
        """
        Mean/std per (lambda, variant) cell, gains against the lambda=0
        cell and trend statistics. Depends only on the records, not on
        the order jobs finished in.
        """
        variant_order = {v: i for i, v in enumerate(spec.variants)}
        runs = sorted(runs, key=lambda r: (variant_order.get(r.variant, len(variant_order)), r.lam, r.trial))

        by_cell: Dict[Tuple[Variant, float], List[RunRecord]] = {}
        for record in runs:
            by_cell.setdefault((record.variant, record.lam), []).append(record)

        cells: List[SweepCell] = []
        for variant in spec.variants:
            for lam in spec.lambdas:
                records = by_cell.get((variant, lam), [])
                completed = [r for r in records if r.status == "completed"]
                failed = [r for r in records if r.status == "failed"]
                metrics = {
                    name: _summarize([getattr(r, name) for r in completed if getattr(r, name) is not None])
                    for name in RUN_METRICS
                }
                cells.append(SweepCell(
                    lam=lam,
                    reverse_log_lambda=reverse_log_lambda(lam),
                    variant=variant,
                    n_trials=len(records),
                    n_failed=len(failed),
                    failed=bool(failed) or len(records) != spec.trials,
                    errors=sorted({r.error for r in failed if r.error}),
                    metrics=metrics,
                ))

        ExperimentService._attach_gains(cells)
        trends = [ExperimentService._trend(spec, variant, cells, runs) for variant in spec.variants]
        return SweepResult(spec=spec, trials=trials, runs=runs, cells=cells, trends=trends)

    @staticmethod
    def _attach_gains(cells: List[SweepCell]) -> None:
        for variant in {c.variant for c in cells}:
            reference = next((c for c in cells if c.variant == variant and c.lam == 0.0), None)
            if reference is None:
                continue
            for cell in (c for c in cells if c.variant == variant):
                for prefix in ("fl", "rus"):
                    ref_auc = reference.metrics[f"{prefix}_auc"].mean
                    cell_auc = cell.metrics[f"{prefix}_auc"].mean
                    if ref_auc is None or cell_auc is None or ref_auc == 0:
                        continue
                    setattr(cell, f"{prefix}_auc_rel_gain", relative_auc_gain(cell_auc, ref_auc))
                    setattr(cell, f"{prefix}_auc_abs_diff", absolute_auc_diff(cell_auc, ref_auc))

    @staticmethod
    def _trend(
        spec: ExperimentSpec,
        variant: Variant,
        cells: List[SweepCell],
        runs: List[RunRecord],
    ) -> TrendSummary:
        mine = [c for c in cells if c.variant == variant]
        lams = [c.lam for c in mine]

        def _means(name: str) -> List[float]:
            return [np.nan if c.metrics[name].mean is None else c.metrics[name].mean for c in mine]

        probe = _means("fl_probe_mse")
        trend = TrendSummary(
            variant=variant,
            spearman_fl_auc=spearman(lams, _means("fl_auc")),
            spearman_fl_probe_mse=spearman(lams, probe),
            spearman_bypass_diff_vs_probe_mse=spearman(_means("bypass_diff"), probe),
        )

        # Paired over trials: largest lambda against the smallest
        lam_lo, lam_hi = min(spec.lambdas), max(spec.lambdas)
        if lam_lo == lam_hi:
            return trend
        done = {
            (r.lam, r.trial): r for r in runs
            if r.variant == variant and r.status == "completed"
        }
        pairs = [
            (done[(lam_lo, t)], done[(lam_hi, t)]) for t in range(spec.trials)
            if (lam_lo, t) in done and (lam_hi, t) in done
        ]
        if pairs:
            trend.sign_test_fl_auc_p = sign_test([lo.fl_auc - hi.fl_auc for lo, hi in pairs])
            trend.sign_test_probe_mse_p = sign_test([hi.fl_probe_mse - lo.fl_probe_mse for lo, hi in pairs])
        return trend
