"""Asynchronous generation jobs: bounded FIFO queue, fixed worker pool,
atomic monotone status transitions."""

from __future__ import annotations

import queue
import threading
import traceback
from dataclasses import dataclass, field, replace

from ..errors import JobError
from ..seeding import derive_seed

QUEUED = "queued"
RUNNING = "running"
DONE = "done"
FAILED = "failed"
_ORDER = {QUEUED: 0, RUNNING: 1, DONE: 2, FAILED: 2}


@dataclass(frozen=True)
class GenerationJob:
    job_id: str
    kind: str
    scenario: dict
    status: str = QUEUED
    progress: float = 0.0
    result_image_ids: tuple[str, ...] = ()
    error: str | None = None
    extras: dict = field(default_factory=dict)


class JobRegistry:
    """All job state behind one lock; workers pull strictly FIFO.

    ``submit`` refuses work once the backlog reaches ``queue_size`` (the
    service maps that to 503).  Each job gets an rng seed derived from
    (global_seed, job_id) for any auxiliary randomness; generation itself is
    seeded by the scenario so results do not depend on scheduling.
    """

    def __init__(self, workers: int = 2, queue_size: int = 16, global_seed: int = 0):
        if workers < 1:
            raise JobError("worker pool needs at least one worker")
        self.global_seed = global_seed
        self.queue_size = queue_size
        self._jobs: dict[str, GenerationJob] = {}
        self._work: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._counter = 0
        self._closed = False
        self._threads = [
            threading.Thread(target=self._worker, name=f"job-worker-{i}", daemon=True)
            for i in range(workers)
        ]
        for thread in self._threads:
            thread.start()

    # ---- public API ---------------------------------------------------------

    def submit(self, kind: str, scenario: dict, fn) -> str:
        """Queue fn(job_id, scenario, set_progress, job_seed) -> result dict."""
        with self._lock:
            if self._closed:
                raise JobError("registry is shut down")
            backlog = sum(1 for j in self._jobs.values() if j.status == QUEUED)
            if backlog >= self.queue_size:
                raise JobError(f"job queue full ({self.queue_size} queued)")
            self._counter += 1
            job_id = f"job-{self._counter:05d}"
            self._jobs[job_id] = GenerationJob(job_id=job_id, kind=kind, scenario=scenario)
        self._work.put((job_id, fn))
        return job_id

    def get(self, job_id: str) -> GenerationJob:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise JobError(f"unknown job id {job_id!r}")
            return job

    def wait(self, job_id: str, timeout: float = 60.0, poll: float = 0.01) -> GenerationJob:
        """Testing convenience: block until the job leaves the active states."""
        import time

        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            job = self.get(job_id)
            if job.status in (DONE, FAILED):
                return job
            time.sleep(poll)
        raise JobError(f"timed out waiting for {job_id}")

    def shutdown(self) -> None:
        with self._lock:
            self._closed = True
        for _ in self._threads:
            self._work.put(None)
        for thread in self._threads:
            thread.join(timeout=5.0)

    # ---- internals ----------------------------------------------------------

    def _transition(self, job_id: str, **changes) -> None:
        with self._lock:
            job = self._jobs[job_id]
            new_status = changes.get("status", job.status)
            if _ORDER[new_status] < _ORDER[job.status]:
                raise JobError(
                    f"illegal transition {job.status} -> {new_status} for {job_id}"
                )
            if "progress" in changes:
                changes["progress"] = max(job.progress, min(1.0, changes["progress"]))
            self._jobs[job_id] = replace(job, **changes)

    def _worker(self) -> None:
        while True:
            item = self._work.get()
            if item is None:
                return
            job_id, fn = item
            self._transition(job_id, status=RUNNING)
            job = self.get(job_id)
            seed = derive_seed(self.global_seed, "job", job_id)

            def set_progress(fraction: float, job_id=job_id) -> None:
                self._transition(job_id, progress=fraction)

            try:
                result = fn(job_id, job.scenario, set_progress, seed) or {}
                self._transition(
                    job_id,
                    status=DONE,
                    progress=1.0,
                    result_image_ids=tuple(result.get("image_ids", ())),
                    extras={k: v for k, v in result.items() if k != "image_ids"},
                )
            except Exception as exc:  # noqa: BLE001 - job boundary
                detail = f"{type(exc).__name__}: {exc}"
                traceback.print_exc()
                self._transition(job_id, status=FAILED, error=detail)
