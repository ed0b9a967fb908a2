"""
Sweep job records

Every unit of sweep work (one simulation per trial, one train/evaluate
run per grid cell) is a SweepJob that moves through
PENDING -> RUNNING -> COMPLETED / FAILED, with retries.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, Optional


class JobStatus(str, enum.Enum):
    PENDING   = "pending"    # Waiting to be picked up
    RUNNING   = "running"    # Currently being processed by a worker
    COMPLETED = "completed"  # Finished successfully
    FAILED    = "failed"     # Failed after all retries


class JobType(str, enum.Enum):
    SIMULATE_TRIAL = "simulate_trial"
    TRAIN_CELL     = "train_cell"


_ids = itertools.count(1)


@dataclass
class SweepJob:
    """
    One queued unit of work.

    `payload` holds the keyword arguments of the task function and must be
    picklable, since jobs may run in a separate process.
    """
    job_type: JobType
    payload: Dict[str, Any]
    max_retries: int = 1
    id: int = field(default_factory=lambda: next(_ids))
    status: JobStatus = JobStatus.PENDING
    retry_count: int = 0
    result: Optional[Dict[str, Any]] = None
    error_message: Optional[str] = None
    created_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    started_at: Optional[datetime] = None
    completed_at: Optional[datetime] = None

    def __repr__(self):
        return f"<SweepJob(id={self.id}, type='{self.job_type.value}', status='{self.status.value}')>"
