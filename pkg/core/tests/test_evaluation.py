import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from core.exceptions import InvalidConfig, SingleClassAUC, TooFewSamples, TooSmall
from core.evaluation import (
    MetricsReport,
    SplitSpec,
    as_fake_mask,
    compute_metrics,
    exact_shapley,
    pca2,
    report_from_predictions,
    roc_auc,
    shapley3,
    split,
    split_indices,
)


def pairwise_auc(truth, scores):
    pos = scores[truth]
    neg = scores[~truth]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


class SplitTests(SimpleTestCase):
    def test_partition(self):
        train, val, test = split_indices(100, SplitSpec(seed=3))
        self.assertEqual((len(train), len(val), len(test)), (60, 20, 20))
        combined = np.concatenate([train, val, test])
        np.testing.assert_array_equal(np.sort(combined), np.arange(100))

    def test_deterministic(self):
        first = split_indices(57, SplitSpec(seed=9))
        second = split_indices(57, SplitSpec(seed=9))
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_too_small(self):
        with self.assertRaises(TooSmall):
            split_indices(9, SplitSpec())

    def test_fractions_must_sum_to_one(self):
        with self.assertRaises(InvalidConfig):
            SplitSpec(train=0.5, val=0.2, test=0.2)

    def test_frame_split(self):
        frame = pd.DataFrame({"a": range(20)})
        train, val, test = split(frame, SplitSpec(seed=1))
        self.assertEqual(len(train) + len(val) + len(test), 20)
        self.assertTrue(train["a"].is_monotonic_increasing)


class MetricsTests(SimpleTestCase):
    def test_auc_matches_pairwise_statistic(self):
        rng = np.random.default_rng(0)
        for trial in range(100):
            n = int(rng.integers(5, 60))
            truth = rng.random(n) < 0.4
            truth[0], truth[1] = True, False
            # rounding forces ties
            scores = np.round(rng.standard_normal(n) + truth, 1)
            with self.subTest(trial=trial):
                self.assertAlmostEqual(roc_auc(truth, scores), pairwise_auc(truth, scores), delta=1e-9)

    def test_auc_single_class(self):
        with self.assertRaises(SingleClassAUC):
            roc_auc([True, True], [0.1, 0.2])

    def test_label_forms(self):
        expected = [True, False, True]
        for labels in (["FAKE", "REAL", "FAKE"], [1, 0, 1], [True, False, True]):
            with self.subTest(labels=labels):
                np.testing.assert_array_equal(as_fake_mask(labels), expected)

    def test_confusion_identity(self):
        rng = np.random.default_rng(1)
        labels = rng.random(300) < 0.3
        scores = np.clip(0.3 * labels + rng.random(300) * 0.7, 0, 1)
        report = compute_metrics(labels, scores)
        self.assertEqual(report.total, 300)
        rebuilt = MetricsReport.from_counts(report.tp, report.fp, report.fn, report.tn, 0.5, report.auc)
        for field in ("precision_fake", "recall_fake", "f1_fake", "f1_real", "accuracy"):
            with self.subTest(field=field):
                self.assertAlmostEqual(getattr(report, field), getattr(rebuilt, field), delta=1e-12)
        self.assertAlmostEqual(report.f1_fake, 2 * report.tp / (2 * report.tp + report.fp + report.fn), delta=1e-12)

    def test_tie_at_threshold_is_real(self):
        report = compute_metrics(["FAKE", "REAL"], [0.5, 0.5])
        self.assertEqual((report.tp, report.fn, report.tn), (0, 1, 1))

    def test_single_class_has_no_auc(self):
        self.assertIsNone(compute_metrics(["REAL", "REAL"], [0.1, 0.9]).auc)

    def test_unreachable_threshold(self):
        report = report_from_predictions(["FAKE", "REAL", "FAKE"], [False, False, False])
        self.assertEqual(report.f1_fake, 0.0)
        self.assertEqual(report.recall_real, 1.0)


class ShapleyTests(SimpleTestCase):
    def test_efficiency(self):
        rng = np.random.default_rng(2)
        weights = rng.standard_normal(3)

        def predict(x):
            return 1.0 / (1.0 + np.exp(-(x @ weights + 0.3 * x[:, 0] * x[:, 2])))

        for trial in range(100):
            x = rng.standard_normal(3)
            background = rng.standard_normal((20, 3))
            attributions, base = shapley3(predict, x, background)
            with self.subTest(trial=trial):
                self.assertAlmostEqual(attributions.sum(), predict(x[None, :])[0] - base, delta=1e-9)

    def test_linear_model_attribution(self):
        weights = np.array([2.0, -1.0, 0.5])
        background = np.array([[0.0, 0.0, 0.0], [2.0, 2.0, 2.0]])
        x = np.array([3.0, 1.0, -1.0])
        attributions, base = exact_shapley(lambda b: b @ weights, x, background)
        np.testing.assert_allclose(attributions, weights * (x - background.mean(axis=0)))
        self.assertAlmostEqual(base, float(background.mean(axis=0) @ weights))

    def test_irrelevant_feature_gets_nothing(self):
        attributions, _ = shapley3(lambda b: b[:, 0] ** 2, [1.0, 5.0, 7.0], np.zeros((4, 3)))
        self.assertEqual(attributions[1], 0.0)
        self.assertEqual(attributions[2], 0.0)

    def test_triplet_required(self):
        with self.assertRaises(TooFewSamples):
            shapley3(lambda b: b.sum(axis=1), [1.0, 2.0], np.zeros((2, 2)))


class ProjectionTests(SimpleTestCase):
    def test_explained_variance(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((500, 3)) * [5.0, 1.0, 0.1]
        result = pca2(x)
        self.assertEqual(result.projection.shape, (500, 2))
        self.assertFalse(result.rank_deficient)
        self.assertGreater(result.explained[0], 0.9)
        self.assertAlmostEqual(abs(result.components[0, 0]), 1.0, places=2)

    def test_rank_deficient_input(self):
        t = np.linspace(0, 1, 20)
        x = np.column_stack([t, 2 * t, -t])
        with self.assertLogs("core.evaluation", level="WARNING"):
            result = pca2(x)
        self.assertTrue(result.rank_deficient)
        np.testing.assert_array_equal(result.projection[:, 1], 0.0)
        self.assertAlmostEqual(result.explained[0], 1.0)

    def test_too_few_samples(self):
        with self.assertRaises(TooFewSamples):
            pca2(np.ones((2, 3)))
