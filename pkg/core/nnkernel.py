"""
Small neural-network kernel with hand-written backward passes.

Layers follow the familiar ``Module`` shape (``forward`` / ``backward`` /
``parameters``) and operate on float64 arrays whose last axis is the feature
axis, so the same layer serves (B, d) and (B, L, d) inputs. Each layer caches
what its backward pass needs, so an instance may appear only once per forward
pass.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from core.exceptions import ShapeMismatch

logger = logging.getLogger(__name__)

_GELU_K = np.sqrt(2.0 / np.pi)


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad.fill(0.0)


class Module:
    """Base class; parameters are discovered from instance attributes in order."""

    def parameters(self) -> list:
        found = []
        for value in vars(self).values():
            found.extend(_collect(value))
        return found

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)

    def state(self) -> list:
        return [param.value.copy() for param in self.parameters()]

    def load_state(self, values):
        params = self.parameters()
        if len(values) != len(params):
            raise ShapeMismatch(f"expected {len(params)} arrays, got {len(values)}")
        for param, value in zip(params, values):
            if param.value.shape != np.shape(value):
                raise ShapeMismatch(f"parameter shape {param.value.shape} != {np.shape(value)}")
            param.value[...] = value


def _collect(value):
    if isinstance(value, Parameter):
        return [value]
    if isinstance(value, Module):
        return value.parameters()
    if isinstance(value, (list, tuple)):
        return [p for item in value for p in _collect(item)]
    return []


# ──────────────────────────────────────────────
# Layers
# ──────────────────────────────────────────────


class Dense(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.weight = Parameter(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        self.bias = Parameter(np.zeros(fan_out)) if bias else None
        self._x = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.weight.value.shape[0]:
            raise ShapeMismatch(f"Dense expects last axis {self.weight.value.shape[0]}, got {x.shape[-1]}")
        self._x = x
        y = x @ self.weight.value
        if self.bias is not None:
            y = y + self.bias.value
        return y

    def backward(self, grad):
        fan_in, fan_out = self.weight.value.shape
        flat_x = self._x.reshape(-1, fan_in)
        flat_g = grad.reshape(-1, fan_out)
        self.weight.grad += flat_x.T @ flat_g
        if self.bias is not None:
            self.bias.grad += flat_g.sum(axis=0)
        return grad @ self.weight.value.T


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps
        self._xhat = None
        self._inv_std = None

    def forward(self, x):
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mean) * self._inv_std
        return self._xhat * self.gamma.value + self.beta.value

    def backward(self, grad):
        dim = grad.shape[-1]
        self.gamma.grad += (grad * self._xhat).reshape(-1, dim).sum(axis=0)
        self.beta.grad += grad.reshape(-1, dim).sum(axis=0)
        dxhat = grad * self.gamma.value
        return self._inv_std / dim * (
            dim * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - self._xhat * (dxhat * self._xhat).sum(axis=-1, keepdims=True)
        )


class ReLU(Module):
    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return grad * self._mask


class GELU(Module):
    """tanh approximation"""

    def __init__(self):
        self._x = None
        self._t = None

    def forward(self, x):
        self._x = x
        self._t = np.tanh(_GELU_K * (x + 0.044715 * x ** 3))
        return 0.5 * x * (1.0 + self._t)

    def backward(self, grad):
        x, t = self._x, self._t
        dinner = _GELU_K * (1.0 + 3 * 0.044715 * x ** 2)
        return grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dinner)


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


# ──────────────────────────────────────────────
# Attention
# ──────────────────────────────────────────────


def softmax_rows(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention_forward(q, k, v):
    """
    Scaled dot-product attention over the last two axes (positions, d_head).

    Returns ``(context, cache)``.
    """
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    if q.shape[-1] != k.shape[-1]:
        raise ShapeMismatch(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    scale = 1.0 / np.sqrt(q.shape[-1])
    weights = softmax_rows(q @ np.swapaxes(k, -1, -2) * scale)
    return weights @ v, (q, k, v, weights, scale)


def attention_backward(grad_context, cache):
    q, k, v, weights, scale = cache
    grad_v = np.swapaxes(weights, -1, -2) @ grad_context
    grad_w = grad_context @ np.swapaxes(v, -1, -2)
    grad_scores = weights * (grad_w - (grad_w * weights).sum(axis=-1, keepdims=True))
    grad_q = grad_scores @ k * scale
    grad_k = np.swapaxes(grad_scores, -1, -2) @ q * scale
    return grad_q, grad_k, grad_v


class MultiHeadSelfAttention(Module):
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        if d_model % heads:
            raise ShapeMismatch(f"{heads} heads do not divide model width {d_model}")
        self.heads = heads
        self.d_head = d_model // heads
        self.query = Dense(d_model, d_model, rng)
        # a key bias only shifts each score row, which softmax ignores
        self.key = Dense(d_model, d_model, rng, bias=False)
        self.value = Dense(d_model, d_model, rng)
        self.output = Dense(d_model, d_model, rng)
        self._cache = None

    def _split(self, x):
        b, length, _ = x.shape
        return x.reshape(b, length, self.heads, self.d_head).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, _, length, _ = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, length, self.heads * self.d_head)

    def forward(self, x):
        q = self._split(self.query.forward(x))
        k = self._split(self.key.forward(x))
        v = self._split(self.value.forward(x))
        context, self._cache = attention_forward(q, k, v)
        return self.output.forward(self._merge(context))

    def backward(self, grad):
        grad_context = self._split(self.output.backward(grad))
        grad_q, grad_k, grad_v = attention_backward(grad_context, self._cache)
        return (
            self.query.backward(self._merge(grad_q))
            + self.key.backward(self._merge(grad_k))
            + self.value.backward(self._merge(grad_v))
        )


class FeedForward(Sequential):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        super().__init__(Dense(d_model, d_ff, rng), GELU(), Dense(d_ff, d_model, rng))


class EncoderBlock(Module):
    """Pre-norm block: h = x + Attn(LN(x)); y = h + FF(LN(h))."""

    def __init__(self, d_model: int, heads: int, d_ff: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(d_model)
        self.attention = MultiHeadSelfAttention(d_model, heads, rng)
        self.norm2 = LayerNorm(d_model)
        self.feed_forward = FeedForward(d_model, d_ff, rng)

    def forward(self, x):
        h = x + self.attention.forward(self.norm1.forward(x))
        return h + self.feed_forward.forward(self.norm2.forward(h))

    def backward(self, grad):
        grad_h = grad + self.norm2.backward(self.feed_forward.backward(grad))
        return grad_h + self.norm1.backward(self.attention.backward(grad_h))


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    positions = np.arange(length)[:, None]
    rates = np.exp(-np.log(10000.0) * (np.arange(0, d_model, 2) / d_model))
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(positions * rates)
    pe[:, 1::2] = np.cos(positions * rates[: d_model // 2])
    return pe


# ──────────────────────────────────────────────
# Optimisation
# ──────────────────────────────────────────────


def adam_step(param: Parameter, lr: float, beta1: float, beta2: float, eps: float, t: int):
    """Bias-corrected Adam update of one parameter, in place."""
    param.m = beta1 * param.m + (1.0 - beta1) * param.grad
    param.v = beta2 * param.v + (1.0 - beta2) * param.grad ** 2
    m_hat = param.m / (1.0 - beta1 ** t)
    v_hat = param.v / (1.0 - beta2 ** t)
    param.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()

    def step(self):
        self.t += 1
        for param in self.params:
            adam_step(param, self.lr, self.beta1, self.beta2, self.eps, self.t)


# ──────────────────────────────────────────────
# Gradient verification
# ──────────────────────────────────────────────


def squared_loss(y, target) -> float:
    return 0.5 * float(np.sum((y - target) ** 2))


def grad_check(model: Module, x, target=None, eps: float = 1e-5, num_coords: int = 64,
               seed: int = 0, include_input: bool = False) -> float:
    """
    Max relative error between analytic and central-difference gradients of
    ``0.5 * sum((model(x) - target)**2)`` over a random subset of coordinates.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)

    model.zero_grad()
    y = model.forward(x)
    if target is None:
        target = rng.standard_normal(y.shape)
    grad_x = model.backward(y - target)

    coords = [(param.value, param.grad, i) for param in model.parameters() for i in range(param.value.size)]
    if include_input:
        coords += [(x, grad_x, i) for i in range(x.size)]
    picks = rng.choice(len(coords), size=min(num_coords, len(coords)), replace=False)

    worst = 0.0
    for pick in sorted(picks):
        array, grad, i = coords[pick]
        original = array.flat[i]
        array.flat[i] = original + eps
        plus = squared_loss(model.forward(x), target)
        array.flat[i] = original - eps
        minus = squared_loss(model.forward(x), target)
        array.flat[i] = original

        numeric = (plus - minus) / (2.0 * eps)
        analytic = grad.flat[i]
        error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, error)

    logger.debug(f"grad_check over {len(picks)} coordinates: max relative error {worst:.3e}")
    return worst
