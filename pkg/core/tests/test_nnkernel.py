import numpy as np
from django.test import SimpleTestCase

from core.detectors import TransformerAEConfig, TransformerAutoencoder, train_stat_ae, train_transformer_ae
from core.exceptions import ShapeMismatch
from core.nnkernel import (
    GELU,
    Adam,
    Dense,
    EncoderBlock,
    LayerNorm,
    MultiHeadSelfAttention,
    Parameter,
    ReLU,
    Sequential,
    adam_step,
    attention_backward,
    attention_forward,
    grad_check,
    positional_encoding,
    softmax_rows,
)


class ForwardTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_softmax_rows_sum_to_one(self):
        p = softmax_rows(self.rng.standard_normal((5, 7)) * 30)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)

    def test_layernorm_standardizes_rows(self):
        y = LayerNorm(8, eps=0.0).forward(self.rng.standard_normal((6, 8)) * 4 + 3)
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-9)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-9)

    def test_single_position_attention_returns_value(self):
        v = self.rng.standard_normal((1, 4))
        context, _ = attention_forward(self.rng.standard_normal((1, 4)), self.rng.standard_normal((1, 4)), v)
        np.testing.assert_allclose(context, v)

    def test_uniform_scores_average_values(self):
        q = np.zeros((3, 4))
        v = self.rng.standard_normal((3, 4))
        context, _ = attention_forward(q, self.rng.standard_normal((3, 4)), v)
        np.testing.assert_allclose(context, np.tile(v.mean(axis=0), (3, 1)))

    def test_attention_shape_checks(self):
        with self.assertRaises(ShapeMismatch):
            attention_forward(np.ones((2, 3)), np.ones((2, 4)), np.ones((2, 4)))
        with self.assertRaises(ShapeMismatch):
            attention_forward(np.ones((2, 4)), np.ones((2, 4)), np.ones((3, 4)))

    def test_dense_shape_check(self):
        with self.assertRaises(ShapeMismatch):
            Dense(3, 2, self.rng).forward(np.ones((4, 5)))

    def test_heads_must_divide_width(self):
        with self.assertRaises(ShapeMismatch):
            MultiHeadSelfAttention(10, 3, self.rng)

    def test_positional_encoding(self):
        pe = positional_encoding(10, 8)
        self.assertEqual(pe.shape, (10, 8))
        np.testing.assert_allclose(pe[0, 0::2], 0.0)
        np.testing.assert_allclose(pe[0, 1::2], 1.0)

    def test_state_round_trip(self):
        net = Sequential(Dense(3, 4, self.rng), ReLU(), Dense(4, 2, self.rng))
        saved = net.state()
        for param in net.parameters():
            param.value += 1.0
        net.load_state(saved)
        for param, value in zip(net.parameters(), saved):
            np.testing.assert_array_equal(param.value, value)
        with self.assertRaises(ShapeMismatch):
            net.load_state(saved[:-1])


class AttentionJacobianTests(SimpleTestCase):
    def test_matches_central_differences(self):
        rng = np.random.default_rng(1)
        q, k, v = (rng.standard_normal((3, 4)) for _ in range(3))
        upstream = rng.standard_normal((3, 4))
        _, cache = attention_forward(q, k, v)
        grads = attention_backward(upstream, cache)

        def objective(q_, k_, v_):
            return float(np.sum(attention_forward(q_, k_, v_)[0] * upstream))

        eps = 1e-5
        for which, analytic in enumerate(grads):
            direction = rng.standard_normal((3, 4))
            args_plus = [q, k, v]
            args_minus = [q, k, v]
            args_plus[which] = args_plus[which] + eps * direction
            args_minus[which] = args_minus[which] - eps * direction
            numeric = (objective(*args_plus) - objective(*args_minus)) / (2 * eps)
            with self.subTest(argument="qkv"[which]):
                self.assertAlmostEqual(float(np.sum(analytic * direction)), numeric, places=7)


class GradCheckTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(42)

    def test_linear_model_is_exact(self):
        model = Dense(4, 3, self.rng)
        x = self.rng.standard_normal((5, 4))
        # a small residual keeps loss roundoff far below the gradients
        target = model.forward(x) + 0.01 * self.rng.standard_normal((5, 3))
        self.assertLess(grad_check(model, x, target=target, include_input=True), 1e-9)

    def test_dense(self):
        model = Sequential(Dense(4, 6, self.rng), GELU(), Dense(6, 2, self.rng))
        self.assertLess(grad_check(model, self.rng.standard_normal((5, 4)), include_input=True), 1e-4)

    def test_layernorm(self):
        model = Sequential(Dense(4, 6, self.rng), LayerNorm(6))
        self.assertLess(grad_check(model, self.rng.standard_normal((5, 4))), 1e-4)

    def test_two_layer_mlp(self):
        model = Sequential(Dense(3, 16, self.rng), ReLU(), Dense(16, 1, self.rng))
        self.assertLess(grad_check(model, self.rng.standard_normal((8, 3)), num_coords=81), 1e-4)

    def test_attention(self):
        model = MultiHeadSelfAttention(8, 2, self.rng)
        x = self.rng.standard_normal((2, 5, 8)) * 0.5
        self.assertLess(grad_check(model, x, num_coords=128, include_input=True), 1e-4)

    def test_encoder_block(self):
        model = EncoderBlock(8, 2, 16, self.rng)
        x = self.rng.standard_normal((2, 5, 8)) * 0.5
        self.assertLess(grad_check(model, x, num_coords=128), 1e-4)

    def test_transformer_autoencoder(self):
        cfg = TransformerAEConfig(d_model=8, heads=2, d_ff=16, latent_dim=4, blocks=1)
        model = TransformerAutoencoder(4, cfg, self.rng)
        x = self.rng.standard_normal((2, 6, 4)) * 0.5
        self.assertLess(grad_check(model, x, num_coords=128), 1e-4)


class AdamTests(SimpleTestCase):
    def test_zero_gradient_leaves_parameter(self):
        param = Parameter(np.array([1.0, -2.0]))
        adam_step(param, 0.1, 0.9, 0.999, 1e-8, 1)
        np.testing.assert_array_equal(param.value, [1.0, -2.0])

    def test_constant_gradient_moves_by_lr(self):
        param = Parameter(np.zeros(3))
        for t in range(1, 51):
            before = param.value.copy()
            param.grad[...] = [3.0, -0.5, 100.0]
            adam_step(param, 0.01, 0.9, 0.999, 1e-8, t)
        np.testing.assert_allclose(np.abs(param.value - before), 0.01, rtol=1e-4)

    def test_quadratic_bowl(self):
        param = Parameter(np.array([1.0, 1.0]))
        optimizer = Adam([param], lr=0.05)
        for _ in range(500):
            optimizer.zero_grad()
            param.grad += 2.0 * param.value
            optimizer.step()
        self.assertLess(np.linalg.norm(param.value), 1e-2)


class SmallStepTrainingTests(SimpleTestCase):
    """Full-batch Adam at a small learning rate never raises the training loss."""

    STEPS = 10
    LR = 1e-4

    def assertNonIncreasing(self, losses):
        self.assertEqual(len(losses), self.STEPS + 1)
        for step, (before, after) in enumerate(zip(losses, losses[1:])):
            self.assertLessEqual(after, before, msg=f"loss rose at step {step + 1}")

    def test_transformer_autoencoder(self):
        for seed in range(3):
            with self.subTest(seed=seed):
                windows = np.random.default_rng(seed).normal(size=(64, 8, 4))
                cfg = TransformerAEConfig(
                    d_model=8, heads=2, d_ff=16, latent_dim=4, blocks=1,
                    epochs=self.STEPS + 1, lr=self.LR, batch_size=len(windows), min_windows=len(windows),
                )
                model = train_transformer_ae(windows, cfg, seed=seed)
                self.assertNonIncreasing(model.loss_history)

    def test_statistical_autoencoder(self):
        for seed in range(3):
            with self.subTest(seed=seed):
                features = np.random.default_rng(seed).normal(size=(128, 10))
                model = train_stat_ae(
                    features, epochs=self.STEPS + 1, lr=self.LR,
                    batch_size=len(features), seed=seed, min_windows=len(features),
                )
                self.assertNonIncreasing(model.loss_history)
