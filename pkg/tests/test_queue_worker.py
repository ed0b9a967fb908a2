"""In-memory job queue and the async worker that drains it"""

import threading
import time

import pytest

from app import worker as worker_module
from app.exceptions import SimulationError
from app.models.job_queue_model import JobStatus, JobType
from app.queue_manager import QueueManager
from app.worker import Worker, execute_job


class TestQueueManager:
    def test_fifo_claim(self):
        queue = QueueManager()
        jobs = [queue.enqueue(JobType.SIMULATE_TRIAL, {"trial": t}) for t in range(3)]
        claimed = queue.claim_next(batch_size=2)
        assert [j.id for j in claimed] == [jobs[0].id, jobs[1].id]
        assert all(j.status == JobStatus.RUNNING and j.started_at for j in claimed)
        assert queue.pending_count == 1

    def test_completion(self):
        queue = QueueManager()
        job = queue.enqueue(JobType.SIMULATE_TRIAL, {"trial": 0})
        queue.claim_next()
        queue.mark_completed(job, {"ok": True})
        assert job.status == JobStatus.COMPLETED
        assert job.result == {"ok": True}
        assert queue.is_drained()

    def test_failure_requeues_until_retries_used(self):
        queue = QueueManager()
        job = queue.enqueue(JobType.TRAIN_CELL, {"trial": 0}, max_retries=2)
        queue.claim_next()
        assert queue.mark_failed(job, "first") is True
        assert job.status == JobStatus.PENDING
        assert queue.pending_count == 1

        queue.claim_next()
        assert queue.mark_failed(job, "second") is False
        assert job.status == JobStatus.FAILED
        assert job.error_message == "second"
        assert queue.is_drained()

    def test_single_attempt_fails_immediately(self):
        queue = QueueManager()
        job = queue.enqueue(JobType.TRAIN_CELL, {"trial": 0})
        queue.claim_next()
        assert queue.mark_failed(job, "boom") is False
        assert job.status == JobStatus.FAILED

    def test_jobs_filtered_by_type(self):
        queue = QueueManager()
        queue.enqueue_simulate_trial({"rng_seed": 1}, 0, "/tmp/out", "trials/trial_000")
        queue.enqueue_train_cell({"lam": 0.0}, 0, "/tmp/out", "trials/trial_000", "runs/x", 0.4, 0.3)
        assert len(queue.jobs(JobType.SIMULATE_TRIAL)) == 1
        train = queue.jobs(JobType.TRAIN_CELL)
        assert len(train) == 1
        assert train[0].payload["position2_ctr"] == 0.3
        assert len(queue.jobs()) == 2
        assert not queue.is_drained()


class TestExecuteJob:
    def test_dispatches_by_type(self, monkeypatch):
        monkeypatch.setitem(worker_module._HANDLERS, JobType.SIMULATE_TRIAL, lambda **kw: {"got": kw})
        assert execute_job("simulate_trial", {"trial": 3}) == {"got": {"trial": 3}}

    def test_unknown_type(self):
        with pytest.raises(ValueError):
            execute_job("send_sms", {})


class TestWorker:
    def test_rejects_unknown_executor(self):
        with pytest.raises(ValueError):
            Worker(concurrency=1, executor="fiber")

    @pytest.mark.asyncio
    async def test_drains_queue(self, monkeypatch):
        monkeypatch.setitem(
            worker_module._HANDLERS, JobType.SIMULATE_TRIAL, lambda trial: {"trial": trial * 10}
        )
        queue = QueueManager()
        jobs = [queue.enqueue(JobType.SIMULATE_TRIAL, {"trial": t}) for t in range(5)]
        await Worker(concurrency=2, executor="thread").run(queue)
        assert queue.is_drained()
        assert [j.result for j in jobs] == [{"trial": t * 10} for t in range(5)]

    @pytest.mark.asyncio
    async def test_respects_concurrency(self, monkeypatch):
        lock = threading.Lock()
        state = {"running": 0, "peak": 0}

        def slow(trial):
            with lock:
                state["running"] += 1
                state["peak"] = max(state["peak"], state["running"])
            time.sleep(0.02)
            with lock:
                state["running"] -= 1
            return {}

        monkeypatch.setitem(worker_module._HANDLERS, JobType.SIMULATE_TRIAL, slow)
        queue = QueueManager()
        for t in range(6):
            queue.enqueue(JobType.SIMULATE_TRIAL, {"trial": t})
        await Worker(concurrency=2, executor="thread").run(queue)
        assert queue.is_drained()
        assert state["peak"] <= 2

    @pytest.mark.asyncio
    async def test_failure_is_recorded_with_type(self, monkeypatch):
        def failing(trial):
            raise SimulationError("no clicks", day=2)

        monkeypatch.setitem(worker_module._HANDLERS, JobType.SIMULATE_TRIAL, failing)
        queue = QueueManager()
        job = queue.enqueue(JobType.SIMULATE_TRIAL, {"trial": 0})
        await Worker(concurrency=1, executor="thread").run(queue)
        assert job.status == JobStatus.FAILED
        assert job.error_message.startswith("SimulationError: ")
        assert "day 2" in job.error_message

    @pytest.mark.asyncio
    async def test_retry_recovers_flaky_job(self, monkeypatch):
        calls = {"n": 0}

        def flaky(trial):
            calls["n"] += 1
            if calls["n"] == 1:
                raise RuntimeError("transient")
            return {"trial": trial}

        monkeypatch.setitem(worker_module._HANDLERS, JobType.SIMULATE_TRIAL, flaky)
        queue = QueueManager()
        job = queue.enqueue(JobType.SIMULATE_TRIAL, {"trial": 4}, max_retries=2)
        await Worker(concurrency=1, executor="thread").run(queue)
        assert job.status == JobStatus.COMPLETED
        assert job.retry_count == 1
        assert job.result == {"trial": 4}

    @pytest.mark.asyncio
    async def test_empty_queue_returns(self):
        queue = QueueManager()
        await Worker(concurrency=2, executor="thread").run(queue)
        assert queue.is_drained()
