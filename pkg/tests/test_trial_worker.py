import threading
import unittest

from nfsense.core.trial_worker import TrialWorker, run_jobs


def square(x):
    return x * x


def boom():
    raise RuntimeError("boom")


class TestRunJobs(unittest.TestCase):

    def test_inline_order_and_errors(self):
        jobs = [lambda i=i: square(i) for i in range(5)]
        jobs[2] = boom
        outcomes = run_jobs(jobs, workers=1)
        self.assertEqual(outcomes[0], ("ok", 0))
        self.assertEqual(outcomes[4], ("ok", 16))
        self.assertEqual(outcomes[2], ("error", "boom"))

    def test_pool_keeps_submission_order(self):
        ticks = []
        lock = threading.Lock()

        def progress():
            with lock:
                ticks.append(1)

        outcomes = run_jobs([lambda i=i: square(i) for i in range(40)], workers=4, progress=progress)
        self.assertEqual(outcomes, [("ok", i * i) for i in range(40)])
        self.assertEqual(len(ticks), 40)

    def test_stopped_worker_is_cancelled(self):
        slots = [None]
        worker = TrialWorker(lambda: 1, slots, 0)
        worker.stop()
        worker.run()
        self.assertEqual(slots[0], ("error", "cancelled"))

    def test_empty(self):
        self.assertEqual(run_jobs([], workers=3), [])


if __name__ == '__main__':
    unittest.main()
