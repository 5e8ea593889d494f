import warnings

import numpy as np
from django.test import SimpleTestCase
from scipy.stats import multivariate_normal, ortho_group

from core.choices import AttackMode
from core.detectors import (
    ScoreNormalizer,
    TransformerAEConfig,
    fit_mahalanobis,
    fuse,
    gmm_em,
    isolation_forest,
    kmeans,
    lof_score,
    mahal_distance,
    percentile_threshold,
    threshold_detect,
    threshold_report,
    train_stat_ae,
    train_transformer_ae,
)
from core.exceptions import EMNotConverged, InsufficientData, SingularCovariance
from core.features import STAT_FEATURES, WindowConfig, make_windows, samples_to_frame, samples_to_sequences
from core.simcore import AttackConfig, TrafficConfig, run_session


class TransformerAETests(SimpleTestCase):
    def setUp(self):
        self.cfg = TransformerAEConfig(
            d_model=8, heads=2, d_ff=16, latent_dim=4, blocks=1,
            epochs=100, lr=5e-3, batch_size=32, min_windows=200,
        )

    def test_learns_constant_windows(self):
        windows = np.full((240, 10, 4), 500.0)
        model = train_transformer_ae(windows, self.cfg, seed=0)
        self.assertLess(float(np.mean(model.recon_error(windows))), 1e-4)
        self.assertEqual(model.latent(windows).shape, (240, 4))

    def test_same_seed_same_model(self):
        rng = np.random.default_rng(5)
        windows = rng.normal(100, 10, size=(200, 6, 4))
        cfg = TransformerAEConfig(d_model=8, heads=2, d_ff=16, latent_dim=4, blocks=1, epochs=2)
        first = train_transformer_ae(windows, cfg, seed=3)
        second = train_transformer_ae(windows, cfg, seed=3)
        for a, b in zip(first.network.state(), second.network.state()):
            np.testing.assert_array_equal(a, b)
        self.assertEqual(first.loss_history, second.loss_history)

    def test_training_lowers_the_error(self):
        rng = np.random.default_rng(1)
        base = np.sin(np.linspace(0, 3, 8))[None, :, None] * np.ones((1, 1, 4))
        windows = base + 0.05 * rng.standard_normal((240, 8, 4))
        cfg = TransformerAEConfig(d_model=8, heads=2, d_ff=16, latent_dim=4, blocks=1, epochs=20, lr=5e-3)
        model = train_transformer_ae(windows, cfg, seed=0)
        self.assertLess(model.final_mse, model.initial_mse)

    def test_needs_enough_windows(self):
        with self.assertRaises(InsufficientData):
            train_transformer_ae(np.zeros((10, 5, 4)), self.cfg)


class StatAETests(SimpleTestCase):
    def test_scores_outliers_higher(self):
        rng = np.random.default_rng(0)
        latent = rng.standard_normal((400, 2))
        mixing = rng.standard_normal((2, 10))
        train = latent @ mixing + 0.05 * rng.standard_normal((400, 10))
        model = train_stat_ae(train, epochs=80, lr=5e-3, seed=0)
        outliers = rng.standard_normal((50, 10)) * 3
        self.assertGreater(model.score(outliers).mean(), model.score(train).mean())

    def test_needs_enough_windows(self):
        with self.assertRaises(InsufficientData):
            train_stat_ae(np.zeros((20, 10)))


class MahalanobisTests(SimpleTestCase):
    def test_zero_at_the_mean(self):
        fit = fit_mahalanobis(np.random.default_rng(0).standard_normal((200, 3)))
        self.assertAlmostEqual(float(mahal_distance(fit, fit.mean)), 0.0)

    def test_identity_covariance_is_euclidean(self):
        rng = np.random.default_rng(1)
        data = rng.standard_normal((5000, 3))
        data = (data - data.mean(axis=0)) @ np.linalg.inv(np.linalg.cholesky(np.cov(data, rowvar=False))).T
        fit = fit_mahalanobis(data, shrinkage=0.0)
        query = rng.standard_normal((10, 3))
        np.testing.assert_allclose(mahal_distance(fit, query), np.linalg.norm(query - fit.mean, axis=1), rtol=1e-9)

    def test_chi_squared_mean(self):
        latents = np.random.default_rng(2).standard_normal((10000, 16))
        fit = fit_mahalanobis(latents)
        squared = mahal_distance(fit, latents) ** 2
        self.assertTrue(14.4 <= squared.mean() <= 17.6)

    def test_orthogonal_invariance(self):
        rng = np.random.default_rng(3)
        data = rng.standard_normal((500, 4)) @ rng.standard_normal((4, 4))
        query = rng.standard_normal((20, 4))
        rotation = ortho_group.rvs(4, random_state=4)
        shift = rng.standard_normal(4)
        plain = mahal_distance(fit_mahalanobis(data), query)
        mapped = mahal_distance(fit_mahalanobis(data @ rotation.T + shift), query @ rotation.T + shift)
        np.testing.assert_allclose(plain, mapped, atol=1e-3)

    def test_singular_covariance(self):
        data = np.full((50, 3), 5.0)
        with self.assertRaises(SingularCovariance):
            fit_mahalanobis(data, shrinkage=0.0)

    def test_too_few_samples(self):
        with self.assertRaises(InsufficientData):
            fit_mahalanobis(np.ones((3, 5)))


class FusionTests(SimpleTestCase):
    def test_training_mean_maps_to_zero(self):
        rng = np.random.default_rng(0)
        recon, stat, mahal = rng.random((3, 100))
        norm = ScoreNormalizer.fit(recon, stat, mahal)
        triplet = fuse(recon.mean(), stat.mean(), mahal.mean(), norm)
        self.assertAlmostEqual(triplet.recon, 0.0)
        self.assertAlmostEqual(triplet.stat, 0.0)
        self.assertAlmostEqual(triplet.mahal, 0.0)

    def test_constant_component_is_zero(self):
        norm = ScoreNormalizer.fit(np.ones(10), np.arange(10.0), np.arange(10.0))
        self.assertEqual(fuse(7.0, 3.0, 3.0, norm).recon, 0.0)

    def test_matches_hand_zscore(self):
        recon = np.array([1.0, 2.0, 3.0, 4.0])
        norm = ScoreNormalizer.fit(recon, recon * 2, recon * 3)
        triplet = fuse(5.0, 5.0, 5.0, norm)
        self.assertAlmostEqual(triplet.recon, (5.0 - 2.5) / recon.std())
        self.assertAlmostEqual(triplet.stat, (5.0 - 5.0) / (2 * recon.std()))


class ThresholdTests(SimpleTestCase):
    def test_all_below_threshold_is_real(self):
        is_fake, threshold = threshold_detect([0.1, 0.2], np.arange(100.0), 90)
        self.assertFalse(is_fake.any())
        self.assertAlmostEqual(threshold, np.percentile(np.arange(100.0), 90))

    def test_report(self):
        real_val = np.linspace(0, 1, 101)
        scores = np.array([0.5, 0.95, 2.0, 3.0])
        report = threshold_report(scores, ["REAL", "REAL", "FAKE", "FAKE"], real_val, 90)
        self.assertEqual((report.tp, report.fp, report.fn, report.tn), (2, 1, 0, 1))

    def test_percentile_range(self):
        with self.assertRaises(ValueError):
            percentile_threshold([1, 2, 3], 100)


class BaselineTests(SimpleTestCase):
    def test_isolation_forest_ranks_the_outlier_first(self):
        rng = np.random.default_rng(0)
        x = np.vstack([0.01 * rng.standard_normal((100, 2)), [[10.0, 0.0]]])
        scores = isolation_forest(seed=0).fit(x).score(x)
        self.assertEqual(int(np.argmax(scores)), 100)

    def test_isolation_forest_scores_lie_inside_the_unit_interval(self):
        rng = np.random.default_rng(4)
        x = np.vstack([rng.standard_normal((200, 3)), [[25.0, -25.0, 25.0]], np.zeros((5, 3))])
        scores = isolation_forest(seed=1).fit(x).score(x)
        self.assertTrue(np.all(scores > 0.0))
        self.assertTrue(np.all(scores < 1.0))

    def test_lof_ranks_the_outlier_first(self):
        rng = np.random.default_rng(1)
        train = rng.standard_normal((200, 2))
        detector = lof_score().fit(train)
        scores = detector.score(np.array([[0.0, 0.0], [8.0, 8.0]]))
        self.assertGreater(scores[1], scores[0])

    def test_single_cluster_kmeans_is_distance_to_mean(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((50, 3))
        scores = kmeans(n_clusters=1, seed=0).fit(x).score(x)
        np.testing.assert_allclose(scores, np.linalg.norm(x - x.mean(axis=0), axis=1), atol=1e-8)

    def test_gmm_on_separated_clusters(self):
        rng = np.random.default_rng(3)
        x = np.vstack([rng.normal(-10, 1, (200, 2)), rng.normal(10, 1, (200, 2))])
        detector = gmm_em(seed=0).fit(x)
        resp = detector.responsibilities(x)
        np.testing.assert_allclose(resp.max(axis=1), 1.0, atol=1e-6)

        model = detector.model
        density = sum(
            w * multivariate_normal(m, c).pdf(x)
            for w, m, c in zip(model.weights_, model.means_, model.covariances_)
        )
        np.testing.assert_allclose(detector.score(x), -np.log(density), atol=1e-6)

    def test_gmm_warns_when_em_is_cut_short(self):
        x = np.random.default_rng(4).standard_normal((100, 2))
        detector = gmm_em(seed=0)
        detector.model.set_params(max_iter=1, n_init=1)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            detector.fit(x)
        self.assertTrue(any(issubclass(w.category, EMNotConverged) for w in caught))


class SimulatedSessionTests(SimpleTestCase):
    """Detectors trained on REAL windows of a zero-reporting session."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        attack = AttackConfig(attack_start=50, attack_window=250, warmup=50, mode=AttackMode.ZERO)
        samples = []
        for seed in (0, 1):
            samples += make_windows(run_session(attack, TrafficConfig(), 400, seed), WindowConfig())
        cls.fake = np.array([sample.is_fake for sample in samples])
        cls.sequences = samples_to_sequences(samples)
        cls.stat = samples_to_frame(samples)[STAT_FEATURES].to_numpy()

    def test_both_labels_present(self):
        self.assertTrue(self.fake.any())
        self.assertGreater(int((~self.fake).sum()), 200)

    def test_transformer_reconstructs_fake_windows_worse(self):
        cfg = TransformerAEConfig(d_model=8, heads=2, d_ff=16, latent_dim=4, blocks=1, epochs=10, lr=5e-3)
        model = train_transformer_ae(self.sequences[~self.fake], cfg, seed=0)
        errors = model.recon_error(self.sequences)
        self.assertGreater(errors[self.fake].mean(), errors[~self.fake].mean())

    def test_statistical_ae_reconstructs_fake_windows_worse(self):
        model = train_stat_ae(self.stat[~self.fake], epochs=40, lr=5e-3, seed=0)
        errors = model.score(self.stat)
        self.assertGreater(errors[self.fake].mean(), errors[~self.fake].mean())
