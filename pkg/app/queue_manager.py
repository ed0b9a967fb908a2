"""
Queue Manager
Provides enqueue / claim / finalize primitives for sweep jobs.

The queue lives in memory for the lifetime of one experiment. Jobs are
claimed in FIFO order; a failed job goes back to the tail of the queue
until it has used up `max_retries` attempts.
"""

from __future__ import annotations

import logging
from collections import deque
from datetime import datetime, timezone
from typing import Any, Deque, Dict, List, Optional

from app.models.job_queue_model import JobStatus, JobType, SweepJob

logger = logging.getLogger(__name__)


class QueueManager:
    """
    FIFO queue of SweepJob records.
    Not thread-safe: only the worker's event loop touches it.
    """

    def __init__(self) -> None:
        self._jobs: Dict[int, SweepJob] = {}
        self._pending: Deque[int] = deque()

    # ------------------------------------------------------------------ #
    #  Enqueue                                                             #
    # ------------------------------------------------------------------ #

    def enqueue(
        self,
        job_type: JobType,
        payload: Dict[str, Any],
        *,
        max_retries: int = 1,
    ) -> SweepJob:
        """
        Add a new job to the queue.

        Args:
            job_type:    Which task to run.
            payload:     Keyword arguments forwarded to the task function.
            max_retries: Attempts allowed before the job is marked FAILED.

        Returns:
            The newly created SweepJob.
        """
        job = SweepJob(job_type=JobType(job_type), payload=payload, max_retries=max_retries)
        self._jobs[job.id] = job
        self._pending.append(job.id)
        logger.debug(f"Enqueued job {job.id} ({job.job_type.value})")
        return job

    # ------------------------------------------------------------------ #
    #  Claim (dequeue)                                                     #
    # ------------------------------------------------------------------ #

    def claim_next(self, batch_size: int = 1) -> List[SweepJob]:
        """Claim up to `batch_size` pending jobs and mark them RUNNING"""
        now = datetime.now(timezone.utc)
        jobs: List[SweepJob] = []
        while self._pending and len(jobs) < batch_size:
            job = self._jobs[self._pending.popleft()]
            job.status = JobStatus.RUNNING
            job.started_at = now
            jobs.append(job)
        return jobs

    # ------------------------------------------------------------------ #
    #  Finalize                                                            #
    # ------------------------------------------------------------------ #

    def mark_completed(self, job: SweepJob, result: Dict[str, Any]) -> None:
        """Mark a job as successfully completed and store its result."""
        job.status = JobStatus.COMPLETED
        job.completed_at = datetime.now(timezone.utc)
        job.result = result
        job.error_message = None

    def mark_failed(self, job: SweepJob, error: str) -> bool:
        """
        Mark a job as failed.
        If retries remain, requeue it with the same payload.

        Returns True when the job was requeued.
        """
        job.retry_count += 1

        if job.retry_count < job.max_retries:
            job.status = JobStatus.PENDING
            job.error_message = f"[attempt {job.retry_count}] {error}"
            self._pending.append(job.id)
            logger.warning(
                f"Job {job.id} ({job.job_type.value}) failed "
                f"(attempt {job.retry_count}/{job.max_retries}), retrying"
            )
            return True

        job.status = JobStatus.FAILED
        job.completed_at = datetime.now(timezone.utc)
        job.error_message = error
        logger.error(
            f"Job {job.id} ({job.job_type.value}) permanently failed "
            f"after {job.retry_count} attempts: {error}"
        )
        return False

    # ------------------------------------------------------------------ #
    #  Inspection                                                          #
    # ------------------------------------------------------------------ #

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    def jobs(self, job_type: Optional[JobType] = None) -> List[SweepJob]:
        """All jobs in enqueue order, optionally filtered by type"""
        return [j for j in self._jobs.values() if job_type is None or j.job_type == job_type]

    def is_drained(self) -> bool:
        return not self._pending and all(
            j.status in (JobStatus.COMPLETED, JobStatus.FAILED) for j in self._jobs.values()
        )

    # ------------------------------------------------------------------ #
    #  Convenience helpers                                                 #
    # ------------------------------------------------------------------ #

    def enqueue_simulate_trial(
        self,
        sim_config: Dict[str, Any],
        trial: int,
        output_dir: str,
        data_dir: str,
        *,
        max_retries: int = 1,
    ) -> SweepJob:
        return self.enqueue(
            JobType.SIMULATE_TRIAL,
            {"sim_config": sim_config, "trial": trial, "output_dir": output_dir, "data_dir": data_dir},
            max_retries=max_retries,
        )

    def enqueue_train_cell(
        self,
        train_config: Dict[str, Any],
        trial: int,
        output_dir: str,
        data_dir: str,
        run_dir: str,
        position1_ctr: float,
        position2_ctr: float,
        *,
        max_retries: int = 1,
    ) -> SweepJob:
        return self.enqueue(
            JobType.TRAIN_CELL,
            {
                "train_config": train_config,
                "trial": trial,
                "output_dir": output_dir,
                "data_dir": data_dir,
                "run_dir": run_dir,
                "position1_ctr": position1_ctr,
                "position2_ctr": position2_ctr,
            },
            max_retries=max_retries,
        )
