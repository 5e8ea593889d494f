from django.test import TestCase

from core.choices import RunKind, RunStatus
from core.models import ExperimentRun


class ExperimentRunTests(TestCase):
    def test_new_run_is_running(self):
        run = ExperimentRun.objects.create(kind=RunKind.SIMULATE, seed=7)
        self.assertEqual(run.status, RunStatus.RUNNING)
        self.assertIsNone(run.duration_seconds)
        self.assertIn("simulate", str(run))

    def test_mark_succeeded(self):
        run = ExperimentRun.objects.create(kind=RunKind.GRID, seed=1)
        run.mark_succeeded({"auc": 0.9}, output_path="results/grid")
        run.refresh_from_db()
        self.assertEqual(run.status, RunStatus.SUCCEEDED)
        self.assertEqual(run.summary_json, {"auc": 0.9})
        self.assertEqual(run.output_path, "results/grid")
        self.assertGreaterEqual(run.duration_seconds, 0.0)

    def test_mark_failed(self):
        run = ExperimentRun.objects.create(kind=RunKind.QOE)
        run.mark_failed("no_pairs: no timestamps agree")
        run.refresh_from_db()
        self.assertEqual(run.status, RunStatus.FAILED)
        self.assertIn("no_pairs", run.error_message)
        self.assertIsNotNone(run.finished_at)
