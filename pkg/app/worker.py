"""
Async Worker
============
Drains a QueueManager and dispatches each job to its background task.

- `concurrency` bounds how many jobs run at once (semaphore).
- Jobs are CPU-bound, so each one runs in a ProcessPoolExecutor
  (or a thread pool when `executor="thread"`, e.g. in tests).
- Failures are caught per job and handed to QueueManager.mark_failed(),
  which requeues until the job's retries are used up.
"""

from __future__ import annotations

import asyncio
import logging
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from typing import Any, Dict, Optional

from app.background_tasks import simulate_trial, train_cell
from app.config import settings
from app.models.job_queue_model import JobType, SweepJob
from app.queue_manager import QueueManager

logger = logging.getLogger(__name__)


# ============================================================================
# Dispatcher: JobType -> task function
# ============================================================================

_HANDLERS = {
    JobType.SIMULATE_TRIAL: simulate_trial,
    JobType.TRAIN_CELL: train_cell,
}


def execute_job(job_type: str, payload: Dict[str, Any]) -> Dict[str, Any]:
    """
    Call the correct task function for `job_type`.
    Module-level so it can be pickled into a worker process.
    """
    handler = _HANDLERS.get(JobType(job_type))
    if not handler:
        raise ValueError(f"Unknown job type: {job_type}")
    return handler(**payload)


# ============================================================================
# Worker loop
# ============================================================================

class Worker:
    """
    Async worker that processes queued jobs concurrently until the queue
    is drained.

    Usage:
        queue = QueueManager()
        queue.enqueue_simulate_trial(...)
        await Worker(concurrency=4).run(queue)
    """

    def __init__(
        self,
        concurrency: Optional[int] = None,
        executor: Optional[str] = None,
    ) -> None:
        self.concurrency = concurrency or settings.worker_concurrency
        self.executor_kind = executor or settings.worker_executor
        if self.executor_kind not in ("process", "thread"):
            raise ValueError(f"Unknown executor kind: {self.executor_kind}")
        self._semaphore: Optional[asyncio.Semaphore] = None

    def _make_executor(self) -> Executor:
        if self.executor_kind == "process":
            return ProcessPoolExecutor(max_workers=self.concurrency)
        return ThreadPoolExecutor(max_workers=self.concurrency)

    async def run(self, queue: QueueManager) -> None:
        logger.info(
            f"Worker started: concurrency={self.concurrency}, executor={self.executor_kind}, "
            f"pending={queue.pending_count}"
        )
        # One semaphore per event loop
        self._semaphore = asyncio.Semaphore(self.concurrency)
        tasks: set[asyncio.Task] = set()

        with self._make_executor() as executor:
            while True:
                available_slots = self.concurrency - len(tasks)
                for job in queue.claim_next(batch_size=max(available_slots, 0)):
                    tasks.add(asyncio.create_task(self._run_with_semaphore(queue, job, executor)))

                if not tasks:
                    break
                # Wake on any completion; a failure may have requeued a job
                done, tasks = await asyncio.wait(tasks, return_when=asyncio.FIRST_COMPLETED)

        logger.info("Worker stopped, queue drained")

    async def _run_with_semaphore(self, queue: QueueManager, job: SweepJob, executor: Executor) -> None:
        async with self._semaphore:
            await self._process_job(queue, job, executor)

    async def _process_job(self, queue: QueueManager, job: SweepJob, executor: Executor) -> None:
        loop = asyncio.get_running_loop()
        logger.debug(f"Job {job.id} ({job.job_type.value}) claimed")
        try:
            result = await loop.run_in_executor(executor, execute_job, job.job_type.value, job.payload)
        except Exception as exc:
            queue.mark_failed(job, f"{type(exc).__name__}: {exc}")
            return

        queue.mark_completed(job, result)
        logger.info(f"Job {job.id} ({job.job_type.value}) completed successfully")
