import tempfile
from pathlib import Path

import pandas as pd
from django.test import SimpleTestCase

from core import artifacts
from lab import experiments
from lab.pipeline import PipelineConfig


class WriteResultTests(SimpleTestCase):
    def test_csv_and_json(self):
        rows = pd.DataFrame({"percentile": [90, 98], "f1_fake": [0.7, 0.2]})
        with tempfile.TemporaryDirectory() as tmp:
            path = experiments.write_result(tmp, "sweep", rows, {"seed": 7}, {"note": "x"})
            document = artifacts.read_json(Path(tmp) / "sweep.json")
            self.assertEqual(path, Path(tmp) / "sweep.csv")
            pd.testing.assert_frame_equal(artifacts.read_csv(path), rows)
        self.assertEqual(document["provenance"], {"seed": 7})
        self.assertEqual(document["rows"][1], {"percentile": 98, "f1_fake": 0.2})
        self.assertEqual(document["note"], "x")


class VariantTests(SimpleTestCase):
    def test_variants_change_one_knob(self):
        base = PipelineConfig()
        interval = experiments.variant_config(base, "interval_20")
        self.assertEqual(interval.traffic.session_interval, 20.0)
        self.assertEqual(interval.attack_window, base.attack_window)
        self.assertNotEqual(interval.seed, base.seed)

        epochs = experiments.variant_config(base, "epoch_500")
        self.assertEqual(epochs.attack_window, 500)
        self.assertEqual(epochs.traffic, base.traffic)


class QoESweepTests(SimpleTestCase):
    def test_spoofing_orders_above_clean(self):
        summary, series, ordering = experiments.qoe_sweep(seeds=range(10), num_poses=200, smooth_window=20)
        ate = summary.set_index("level")["ate_rmse"]
        self.assertEqual(ate[0], 0.0)
        for level in (25, 50, 75):
            with self.subTest(level=level):
                self.assertGreater(ate[level], ate[0])
        self.assertEqual(sorted(ordering), [25, 50, 75])
        self.assertEqual(len(series), 4 * 199)


class TimingTests(SimpleTestCase):
    def test_median_of_calls(self):
        calls = []
        seconds = experiments.time_per_sample(calls.append, list(range(30)), warmup=5)
        self.assertEqual(len(calls), 35)
        self.assertGreaterEqual(seconds, 0.0)
