"""
Background Tasks
================
Job handlers executed by the worker, one per JobType:

  • simulate_trial  – run one feedback-loop simulation and export its data
  • train_cell      – train, probe and evaluate one ANN for a (lambda, variant, trial)

Handlers are plain synchronous functions taking JSON-like keyword
arguments and returning a result dict, so they can run in a worker
process. Retry logic lives in QueueManager.mark_failed(); tasks just raise.
"""

from __future__ import annotations

import logging
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict

from app.models.ann import bypass_prediction_diff, init_ann_params
from app.models.dataset import Dataset
from app.schemas import FeedbackSimConfig, RunRecord, TrainConfig, TrialSummary
from app.services.artifacts import ArtifactService
from app.services.simulation import SimulationService
from app.services.training import TrainingService

logger = logging.getLogger(__name__)


@lru_cache(maxsize=8)
def _read_dataset(path: str, mtime_ns: int, size: int) -> Dataset:
    return ArtifactService.import_dataset(path)


def _load_dataset(path: str) -> Dataset:
    """
    Datasets are read once per process and file version; training never
    mutates them. A rewritten file changes the key and is read again.
    """
    stat = Path(path).stat()
    return _read_dataset(path, stat.st_mtime_ns, stat.st_size)


def clear_dataset_cache() -> None:
    _read_dataset.cache_clear()


# ============================================================================
# Simulation
# ============================================================================

def simulate_trial(
    sim_config: Dict[str, Any],
    trial: int,
    output_dir: str,
    data_dir: str,
) -> Dict[str, Any]:
    """
    Simulate the feedback loop for one trial and write fl.csv, heldout.csv
    and simulation_summary.json under output_dir/data_dir.

    Returns a TrialSummary dict.
    """
    cfg = FeedbackSimConfig.model_validate(sim_config)
    output = SimulationService.run_feedback_loop(cfg)
    naive = SimulationService.naive_ctr_baseline(output)
    upper_bound = SimulationService.logistic_upper_bound(cfg, output.heldout)
    ArtifactService.export_simulation(output, Path(output_dir) / data_dir, naive, upper_bound)

    all_days = output.all_days_ctr()
    summary = TrialSummary(
        trial=trial,
        seed=cfg.rng_seed,
        prev_day_position1_ctr=output.b_table[(output.prev_day, 1)],
        prev_day_position2_ctr=output.b_table[(output.prev_day, 2)],
        last_day_position1_ctr=output.position1_ctr_last,
        last_day_position2_ctr=output.position2_ctr_last,
        all_days_position1_ctr=all_days[0],
        all_days_position2_ctr=all_days[1],
        naive_avg_ctr=naive[0],
        naive_mse=naive[1],
        upper_bound_auc=upper_bound[0],
        upper_bound_log_loss=upper_bound[1],
        fl_rows=len(output.topk_prev) + len(output.topk_last),
        data_dir=data_dir,
    )
    logger.info(
        f"Trial {trial}: pos1 CTR={summary.last_day_position1_ctr:.3f} "
        f"pos2 CTR={summary.last_day_position2_ctr:.3f} upper-bound AUC={upper_bound[0]:.3f}"
    )
    return summary.model_dump(mode="json")


# ============================================================================
# Training
# ============================================================================

def train_cell(
    train_config: Dict[str, Any],
    trial: int,
    output_dir: str,
    data_dir: str,
    run_dir: str,
    position1_ctr: float,
    position2_ctr: float,
) -> Dict[str, Any]:
    """
    Train one ANN on the trial's FL data, probe its Bias network, and
    evaluate on FL and on the RUS heldout set (b = last-day position-1 CTR).

    Writes model.json and metrics.json under output_dir/run_dir and
    returns a RunRecord dict.
    """
    cfg = TrainConfig.model_validate(train_config)
    root = Path(output_dir)
    fl = _load_dataset(str(root / data_dir / "fl.csv"))
    heldout = _load_dataset(str(root / data_dir / "heldout.csv"))

    params = init_ann_params(fl.n_features, cfg)
    TrainingService.train(params, fl, cfg)
    TrainingService.probe_bias(params, fl, cfg)

    fl_report = TrainingService.evaluate(params, fl, tag="FL")
    rus_report = TrainingService.evaluate(params, heldout, tag="RUS", position1_ctr=position1_ctr)
    diff = bypass_prediction_diff(params, heldout.X, position1_ctr, position2_ctr)

    checkpoint = ArtifactService.save_checkpoint(params, root / run_dir / "model.json", cfg)
    record = RunRecord(
        lam=cfg.lam,
        variant=cfg.variant,
        trial=trial,
        seed=cfg.rng_seed,
        fl_auc=fl_report.auc,
        fl_log_loss=fl_report.log_loss,
        fl_probe_mse=fl_report.bias_probe_mse,
        rus_auc=rus_report.auc,
        rus_log_loss=rus_report.log_loss,
        rus_probe_mse=rus_report.bias_probe_mse,
        bypass_diff=diff,
        checkpoint=checkpoint.relative_to(root).as_posix(),
    )
    ArtifactService.write_json(
        {
            "record": record.model_dump(mode="json"),
            "fl": fl_report.model_dump(mode="json"),
            "rus": rus_report.model_dump(mode="json"),
        },
        root / run_dir / "metrics.json",
    )
    return record.model_dump(mode="json")
