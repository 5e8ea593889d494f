import numpy as np
from django.test import SimpleTestCase
from scipy import stats

from core.choices import WindowLabel
from core.exceptions import InvalidConfig, InvalidWindow, LogTooShort, SinglePeerGroup, TooFewSamples
from core.features import (
    FEATURE_NAMES,
    SEQUENCE_COLUMNS,
    WindowConfig,
    autocorr_lag1,
    epoch_sequences,
    excess_kurtosis,
    mad,
    make_windows,
    peer_features,
    percentile_rank_last,
    samples_to_frame,
    samples_to_sequences,
    skewness,
    window_features,
    window_starts,
    zscore_last,
)
from core.simcore import AttackConfig, EpochRecord, TelemetryLog, TrafficConfig, run_session


def build_log(reported, misreported=None):
    reported = np.asarray(reported, dtype=int)
    if misreported is None:
        misreported = np.zeros_like(reported, dtype=bool)
    records = tuple(
        EpochRecord(
            epoch_index=i,
            actual_load=tuple(int(v) for v in row),
            reported_load=tuple(int(v) for v in row),
            selected_switch=int(np.argmin(row)),
            misreported=tuple(bool(v) for v in flags),
            attack_active=bool(flags.any()),
        )
        for i, (row, flags) in enumerate(zip(reported, np.asarray(misreported)))
    )
    return TelemetryLog(records, AttackConfig(), TrafficConfig(), 0)


class StatisticTests(SimpleTestCase):
    def test_symmetric_series_has_no_skew(self):
        self.assertAlmostEqual(skewness([1, 2, 3, 4, 5]), 0.0, places=12)

    def test_skew_matches_moment_oracle(self):
        x = np.array([0, 0, 0, 10], dtype=float)
        centered = x - x.mean()
        expected = np.mean(centered ** 3) / np.mean(centered ** 2) ** 1.5
        self.assertGreater(skewness(x), 0)
        self.assertAlmostEqual(skewness(x), expected, places=12)

    def test_kurtosis_matches_moment_oracle(self):
        x = np.array([1, 4, 2, 8, 5, 7], dtype=float)
        centered = x - x.mean()
        expected = np.mean(centered ** 4) / np.mean(centered ** 2) ** 2 - 3.0
        self.assertAlmostEqual(excess_kurtosis(x), expected, places=12)

    def test_constant_series_is_zero_everywhere(self):
        for fn in (skewness, excess_kurtosis, autocorr_lag1, mad, zscore_last):
            with self.subTest(fn=fn.__name__):
                self.assertEqual(fn([5, 5, 5, 5]), 0.0)

    def test_autocorrelation(self):
        self.assertAlmostEqual(autocorr_lag1(np.arange(10) * 3.0 + 1), 1.0, places=9)
        self.assertAlmostEqual(autocorr_lag1([1, 2, 1, 2, 1, 2]), -1.0, places=9)

    def test_mad_and_zscore(self):
        x = np.array([2.0, 4.0, 6.0, 8.0])
        self.assertAlmostEqual(mad(x), 2.0)
        self.assertAlmostEqual(zscore_last(x), (8.0 - 5.0) / x.std())

    def test_short_input(self):
        with self.assertRaises(TooFewSamples):
            autocorr_lag1([1, 2])
        with self.assertRaises(TooFewSamples):
            skewness([1])


class PeerFeatureTests(SimpleTestCase):
    def test_identical_loads(self):
        ratio, delta = peer_features(np.full((4, 10), 100.0), 0)
        self.assertEqual(ratio, 1.0)
        self.assertEqual(delta, 0.0)

    def test_double_the_peers(self):
        loads = np.vstack([np.full(10, 200.0), np.full((3, 10), 100.0)])
        ratio, _ = peer_features(loads, 0)
        self.assertAlmostEqual(ratio, 2.0)

    def test_idle_peers(self):
        loads = np.vstack([np.full(10, 50.0), np.zeros((3, 10))])
        self.assertEqual(peer_features(loads, 0)[0], 1.0)

    def test_mean_peer_delta(self):
        loads = np.array([[0, 0, 5], [1, 2, 4], [3, 3, 9]], dtype=float)
        # peers of switch 0 moved by +2 and +6 on the last epoch
        self.assertAlmostEqual(peer_features(loads, 0)[1], 4.0)

    def test_rolling_span_limits_the_mean(self):
        loads = np.array([[100, 100, 10, 10], [10, 10, 10, 10]], dtype=float)
        self.assertAlmostEqual(peer_features(loads, 0, rolling_span=2)[0], 1.0)
        self.assertAlmostEqual(peer_features(loads, 0)[0], 5.5)

    def test_single_switch(self):
        with self.assertRaises(SinglePeerGroup):
            peer_features(np.ones((1, 5)), 0)


class WindowFeatureTests(SimpleTestCase):
    def test_vector_matches_hand_computation(self):
        cfg = WindowConfig(window_len=5, stride=5)
        context = np.array([
            [10, 20, 30, 40, 60],
            [20, 20, 20, 20, 20],
            [10, 30, 10, 30, 10],
        ], dtype=float)
        features = window_features(context[0], context, 0, cfg)
        self.assertEqual(features.shape, (len(FEATURE_NAMES),))
        expected = {
            "last_load": 60.0,
            "mean_load": 32.0,
            "last_delta": 20.0,
            "rolling_mean": 32.0,
            "percentile_rank_of_last": 1.0,
            "std_dev": np.std([10, 20, 30, 40, 60]),
            "load_ratio": 32.0 / 19.0,
            "mean_peer_delta": -10.0,
            "unique_count": 5.0,
        }
        for name, value in expected.items():
            with self.subTest(name=name):
                self.assertAlmostEqual(features[FEATURE_NAMES.index(name)], value)


class WindowFeatureInvarianceTests(SimpleTestCase):
    SHIFT_INVARIANT = [
        "last_delta", "percentile_rank_of_last", "zscore_of_last", "skewness", "excess_kurtosis",
        "std_dev", "autocorr_lag1", "mad", "mean_peer_delta", "unique_count",
    ]
    SHIFTED = ["last_load", "mean_load", "rolling_mean"]
    SCALE_INVARIANT = [
        "percentile_rank_of_last", "zscore_of_last", "skewness", "excess_kurtosis",
        "autocorr_lag1", "load_ratio", "unique_count",
    ]
    SCALED = ["last_load", "mean_load", "last_delta", "rolling_mean", "std_dev", "mad", "mean_peer_delta"]

    def setUp(self):
        self.cfg = WindowConfig(window_len=10, stride=5)

    def features_of(self, context):
        return dict(zip(FEATURE_NAMES, window_features(context[0], context, 0, self.cfg)))

    def context(self, seed):
        return np.random.default_rng(seed).integers(50, 150, size=(4, 10)).astype(float)

    def test_shift(self):
        for seed in range(4):
            base = self.features_of(self.context(seed))
            for c in (-40.0, 3.5, 1000.0):
                with self.subTest(seed=seed, c=c):
                    shifted = self.features_of(self.context(seed) + c)
                    for name in self.SHIFT_INVARIANT:
                        self.assertAlmostEqual(shifted[name], base[name], places=8, msg=name)
                    for name in self.SHIFTED:
                        self.assertAlmostEqual(shifted[name], base[name] + c, places=8, msg=name)

    def test_scale(self):
        for seed in range(4):
            base = self.features_of(self.context(seed))
            for k in (1e-10, 0.25, 3.0, 1e4):
                with self.subTest(seed=seed, k=k):
                    scaled = self.features_of(self.context(seed) * k)
                    for name in self.SCALE_INVARIANT:
                        self.assertAlmostEqual(scaled[name], base[name], places=8, msg=name)
                    for name in self.SCALED:
                        np.testing.assert_allclose(
                            scaled[name], base[name] * k, rtol=1e-9, atol=1e-9 * k, err_msg=name,
                        )

    def test_tiny_scale_is_not_flat(self):
        x = np.random.default_rng(11).normal(size=12)
        for fn in (skewness, excess_kurtosis, autocorr_lag1, zscore_last):
            with self.subTest(fn=fn.__name__):
                self.assertNotEqual(fn(x * 1e-10), 0.0)
                self.assertAlmostEqual(fn(x * 1e-10), fn(x), places=8)
        self.assertAlmostEqual(mad(x * 1e-10) / 1e-10, mad(x), places=8)
        self.assertEqual(percentile_rank_last(x * 1e-10), percentile_rank_last(x))


class SequenceTests(SimpleTestCase):
    def test_columns(self):
        loads = np.array([[10, 20], [30, 20], [50, 20], [10, 20]], dtype=float)
        seq = epoch_sequences(loads, baseline_span=10)
        self.assertEqual(seq.shape, (4, 2, len(SEQUENCE_COLUMNS)))
        np.testing.assert_allclose(seq[:, 0, 1], [0, 20, 20, -40])
        np.testing.assert_allclose(seq[:, 0, 2], [0.5, 1.5, 2.5, 0.5])

    def test_baseline_uses_past_epochs_only(self):
        loads = np.array([[10, 1], [20, 1], [30, 1], [1000, 1]], dtype=float)
        seq = epoch_sequences(loads, baseline_span=10)
        past = np.array([10.0, 20.0, 30.0])
        self.assertAlmostEqual(seq[3, 0, 3], (1000.0 - past.mean()) / past.std())
        # a flat trailing history gives a zero score
        self.assertEqual(seq[3, 1, 3], 0.0)
        self.assertEqual(seq[0, 0, 3], 0.0)
        self.assertEqual(seq[1, 0, 3], 0.0)


class WindowingTests(SimpleTestCase):
    def test_window_starts(self):
        self.assertEqual(list(window_starts(20, WindowConfig(10, 5))), [0, 5, 10])
        with self.assertRaises(LogTooShort):
            window_starts(9, WindowConfig(10, 5))

    def test_two_epoch_window_explains_itself(self):
        with self.assertRaisesMessage(InvalidWindow, "lag-1 autocorrelation needs three values") as raised:
            WindowConfig(window_len=2, stride=1)
        self.assertEqual(raised.exception.code, "invalid_window")
        self.assertIsInstance(raised.exception, InvalidConfig)

    def test_config_validation(self):
        with self.assertRaises(InvalidConfig):
            WindowConfig(window_len=2)
        with self.assertRaises(InvalidConfig):
            WindowConfig(window_len=5, stride=6)
        with self.assertRaises(InvalidConfig):
            WindowConfig(window_len=5, stride=0)

    def test_labels_follow_misreporting(self):
        rng = np.random.default_rng(0)
        reported = rng.integers(100, 200, size=(20, 3))
        misreported = np.zeros((20, 3), dtype=bool)
        misreported[12, 1] = True
        samples = make_windows(build_log(reported, misreported), WindowConfig(10, 5))

        self.assertEqual(len(samples), 3 * 3)
        self.assertEqual([(s.switch_id, s.start_epoch) for s in samples[:3]], [(0, 0), (0, 5), (0, 10)])
        fake = {(s.switch_id, s.start_epoch) for s in samples if s.label == WindowLabel.FAKE}
        self.assertEqual(fake, {(1, 5), (1, 10)})

    def test_frame_and_sequences(self):
        log = run_session(AttackConfig(attack_window=200), TrafficConfig(), 300, seed=3)
        cfg = WindowConfig(10, 5)
        samples = make_windows(log, cfg)
        frame = samples_to_frame(samples, session=2)
        sequences = samples_to_sequences(samples)

        self.assertEqual(list(frame.columns[:14]), FEATURE_NAMES)
        self.assertEqual(len(frame), 4 * 59)
        self.assertEqual(sequences.shape, (len(frame), 10, 4))
        self.assertTrue((frame["session"] == 2).all())
        self.assertTrue(np.isfinite(frame[FEATURE_NAMES].to_numpy()).all())
        # first sequence column is the reported load of that window
        first = samples[0]
        np.testing.assert_array_equal(first.sequence[:, 0], log.reported[0:10, 0])

    def test_fake_label_only_on_compromised_switch(self):
        log = run_session(AttackConfig(target_share=0.6, attack_window=200), TrafficConfig(), 300, seed=8)
        frame = samples_to_frame(make_windows(log, WindowConfig(10, 5)))
        fake_switches = set(frame.loc[frame["label"] == "FAKE", "switch_id"])
        self.assertEqual(fake_switches, {0})

    def test_percentile_rank_is_scipy_rank(self):
        x = np.array([3.0, 1.0, 2.0, 2.0])
        cfg = WindowConfig(window_len=4, stride=1)
        features = window_features(x, np.vstack([x, x]), 0, cfg)
        self.assertAlmostEqual(
            features[FEATURE_NAMES.index("percentile_rank_of_last")],
            stats.percentileofscore(x, 2.0, kind="rank") / 100.0,
        )
