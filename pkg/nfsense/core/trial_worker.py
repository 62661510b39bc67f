import logging
from typing import Callable

from PyQt6.QtCore import QMutex, QMutexLocker, QRunnable, QThreadPool

logger = logging.getLogger("nfsense.core.trial_worker")


class TrialWorker(QRunnable):
    """
    A QRunnable that executes one independent job and stores its outcome in a pre-allocated slot.

    Each slot receives either ("ok", value) or ("error", message); the worker never raises
    into the pool, so a failing job cannot take its neighbours down.
    """

    def __init__(self, job: Callable[[], object], slots: list, index: int, on_done: Callable[[], None] | None = None):
        super().__init__()
        self.job = job
        self.slots = slots
        self.index = index
        self.on_done = on_done
        self._is_running = True
        self.setAutoDelete(False)

    def run(self):
        if not self._is_running:
            logger.info(f"TrialWorker {self.index} was stopped before it started. Skipping.")
            self.slots[self.index] = ("error", "cancelled")
            return
        try:
            self.slots[self.index] = ("ok", self.job())
        except Exception as e:
            logger.critical(f"Unhandled exception in TrialWorker {self.index}: {e}", exc_info=True)
            self.slots[self.index] = ("error", str(e))
        finally:
            self._is_running = False
            if self.on_done is not None:
                self.on_done()

    def stop(self):
        self._is_running = False


def run_jobs(jobs: list[Callable[[], object]], workers: int = 1,
             progress: Callable[[], None] | None = None) -> list[tuple[str, object]]:
    """
    Run independent jobs and return their outcomes in submission order.

    `workers == 1` executes inline on the calling thread; otherwise jobs go to a QThreadPool
    capped at `workers` threads. Output order never depends on scheduling.
    """
    slots: list = [None] * len(jobs)
    if workers <= 1:
        for i, job in enumerate(jobs):
            TrialWorker(job, slots, i, progress).run()
        return slots

    mutex = QMutex()

    def locked_progress():
        if progress is not None:
            with QMutexLocker(mutex):
                progress()

    pool = QThreadPool()
    pool.setMaxThreadCount(workers)
    runners = [TrialWorker(job, slots, i, locked_progress) for i, job in enumerate(jobs)]
    logger.debug(f"Dispatching {len(runners)} jobs to a pool of {workers} threads.")
    for runner in runners:
        pool.start(runner)
    pool.waitForDone()
    return slots
