"""
Unsupervised scoring of telemetry windows.

Three detectors are trained on REAL training windows only and fused into the
anomaly triplet ``(recon, stat, mahal)``:

* a transformer autoencoder over the per-epoch sequence rows (reconstruction
  MSE, plus its mean-pooled latent vector),
* a small dense autoencoder over the 10 non-basic window features,
* a shrunk-covariance Mahalanobis distance in the latent space.

The sklearn baselines at the bottom score either fused triplets or latents.
"""

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from sklearn.cluster import KMeans
from sklearn.ensemble import IsolationForest
from sklearn.exceptions import ConvergenceWarning
from sklearn.mixture import GaussianMixture
from sklearn.neighbors import LocalOutlierFactor
from sklearn.preprocessing import StandardScaler

from core.evaluation import report_from_predictions
from core.exceptions import EMNotConverged, InsufficientData, ShapeMismatch, SingularCovariance
from core.nnkernel import (
    GELU,
    Adam,
    Dense,
    EncoderBlock,
    LayerNorm,
    Module,
    Sequential,
    positional_encoding,
)

logger = logging.getLogger(__name__)

MAHAL_SPACES = ("latent", "features")


def _batches(n, size):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def _fit_autoencoder(network: Module, data: np.ndarray, epochs: int, lr: float,
                     batch_size: int, rng: np.random.Generator, name: str) -> list:
    """Minibatch Adam on mean squared reconstruction error. Returns per-epoch losses."""
    optimizer = Adam(network.parameters(), lr=lr)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for batch in _batches(len(data), batch_size):
            x = data[order[batch]]
            optimizer.zero_grad()
            diff = network.forward(x) - x
            total += float(np.sum(diff ** 2))
            network.backward(2.0 * diff / diff.size)
            optimizer.step()
        history.append(total / data.size)
        logger.debug(f"{name} epoch {epoch + 1}/{epochs}: loss {history[-1]:.6f}")
    return history


# ══════════════════════════════════════════════
# Transformer autoencoder
# ══════════════════════════════════════════════


@dataclass(frozen=True)
class TransformerAEConfig:
    d_model: int = 32
    heads: int = 2
    d_ff: int = 64
    latent_dim: int = 16
    blocks: int = 2
    epochs: int = 15
    lr: float = 1e-3
    batch_size: int = 32
    min_windows: int = 200

    def to_dict(self) -> dict:
        return asdict(self)


class TransformerAutoencoder(Module):
    """
    input → Dense + positions → encoder blocks → LayerNorm → mean pool → latent
    latent → Dense, broadcast over positions + positions → decoder blocks →
    LayerNorm → Dense → reconstruction
    """

    def __init__(self, n_features: int, cfg: TransformerAEConfig, rng: np.random.Generator):
        self.d_model = cfg.d_model
        self.embed = Dense(n_features, cfg.d_model, rng)
        self.encoder = [EncoderBlock(cfg.d_model, cfg.heads, cfg.d_ff, rng) for _ in range(cfg.blocks)]
        self.encoder_norm = LayerNorm(cfg.d_model)
        self.to_latent = Dense(cfg.d_model, cfg.latent_dim, rng)
        self.from_latent = Dense(cfg.latent_dim, cfg.d_model, rng)
        self.decoder = [EncoderBlock(cfg.d_model, cfg.heads, cfg.d_ff, rng) for _ in range(cfg.blocks)]
        self.decoder_norm = LayerNorm(cfg.d_model)
        self.head = Dense(cfg.d_model, n_features, rng)
        self._length = None

    def encode(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ShapeMismatch(f"expected (batch, length, features), got {x.shape}")
        self._length = x.shape[1]
        h = self.embed.forward(x) + positional_encoding(self._length, self.d_model)
        for block in self.encoder:
            h = block.forward(h)
        pooled = self.encoder_norm.forward(h).mean(axis=1)
        return self.to_latent.forward(pooled)

    def decode(self, z):
        h = self.from_latent.forward(z)[:, None, :] + positional_encoding(self._length, self.d_model)
        for block in self.decoder:
            h = block.forward(h)
        return self.head.forward(self.decoder_norm.forward(h))

    def forward(self, x):
        return self.decode(self.encode(x))

    def backward(self, grad):
        g = self.decoder_norm.backward(self.head.backward(grad))
        for block in reversed(self.decoder):
            g = block.backward(g)
        g = self.to_latent.backward(self.from_latent.backward(g.sum(axis=1)))
        g = np.repeat(g[:, None, :] / self._length, self._length, axis=1)
        g = self.encoder_norm.backward(g)
        for block in reversed(self.encoder):
            g = block.backward(g)
        return self.embed.backward(g)


@dataclass
class TransformerAEModel:
    network: TransformerAutoencoder
    scaler: StandardScaler
    config: TransformerAEConfig
    seed: int
    loss_history: list = field(default_factory=list)
    initial_mse: float = float("nan")
    final_mse: float = float("nan")

    def _scale(self, windows):
        windows = np.asarray(windows, dtype=float)
        n, length, f = windows.shape
        return self.scaler.transform(windows.reshape(-1, f)).reshape(n, length, f)

    def reconstruct(self, windows, batch_size=256):
        x = self._scale(windows)
        out = np.empty_like(x)
        for batch in _batches(len(x), batch_size):
            out[batch] = self.network.forward(x[batch])
        return x, out

    def recon_error(self, windows) -> np.ndarray:
        x, out = self.reconstruct(windows)
        return np.mean((out - x) ** 2, axis=(1, 2))

    def latent(self, windows, batch_size=256) -> np.ndarray:
        x = self._scale(windows)
        return np.concatenate([self.network.encode(x[batch]) for batch in _batches(len(x), batch_size)])


def train_transformer_ae(real_windows, cfg: TransformerAEConfig = TransformerAEConfig(),
                         seed: int = 0) -> TransformerAEModel:
    """Fit the sequence autoencoder on REAL windows of shape (n, length, features)."""
    windows = np.asarray(real_windows, dtype=float)
    if windows.ndim != 3:
        raise ShapeMismatch(f"expected (windows, length, features), got {windows.shape}")
    if len(windows) < cfg.min_windows:
        raise InsufficientData(f"{len(windows)} REAL windows, need at least {cfg.min_windows}")

    rng = np.random.default_rng(seed)
    n, length, f = windows.shape
    scaler = StandardScaler().fit(windows.reshape(-1, f))
    model = TransformerAEModel(TransformerAutoencoder(f, cfg, rng), scaler, cfg, seed)
    model.initial_mse = float(np.mean(model.recon_error(windows)))

    x = model._scale(windows)
    model.loss_history = _fit_autoencoder(model.network, x, cfg.epochs, cfg.lr, cfg.batch_size, rng, "transformer AE")
    model.final_mse = float(np.mean(model.recon_error(windows)))

    logger.info(
        f"Transformer AE trained on {n} windows: MSE {model.initial_mse:.4f} -> {model.final_mse:.4f}"
    )
    return model


def recon_error(model: TransformerAEModel, windows) -> np.ndarray:
    return model.recon_error(windows)


def latent(model: TransformerAEModel, windows) -> np.ndarray:
    return model.latent(windows)


# ══════════════════════════════════════════════
# Statistical autoencoder
# ══════════════════════════════════════════════


@dataclass
class StatAEModel:
    network: Sequential
    scaler: StandardScaler
    seed: int
    loss_history: list = field(default_factory=list)

    def score(self, stat_features) -> np.ndarray:
        x = self.scaler.transform(np.asarray(stat_features, dtype=float))
        return np.mean((self.network.forward(x) - x) ** 2, axis=1)


def stat_network(n_inputs: int, rng: np.random.Generator) -> Sequential:
    return Sequential(
        Dense(n_inputs, 6, rng), GELU(),
        Dense(6, 3, rng), GELU(),
        Dense(3, 6, rng), GELU(),
        Dense(6, n_inputs, rng),
    )


def train_stat_ae(real_stat_features, epochs: int = 60, lr: float = 1e-3,
                  batch_size: int = 64, seed: int = 0, min_windows: int = 200) -> StatAEModel:
    x = np.asarray(real_stat_features, dtype=float)
    if len(x) < min_windows:
        raise InsufficientData(f"{len(x)} REAL windows, need at least {min_windows}")
    rng = np.random.default_rng(seed)
    scaler = StandardScaler().fit(x)
    model = StatAEModel(stat_network(x.shape[1], rng), scaler, seed)
    model.loss_history = _fit_autoencoder(
        model.network, scaler.transform(x), epochs, lr, batch_size, rng, "statistical AE",
    )
    logger.info(f"Statistical AE trained on {len(x)} windows: final loss {model.loss_history[-1]:.4f}")
    return model


# ══════════════════════════════════════════════
# Mahalanobis distance
# ══════════════════════════════════════════════


@dataclass
class MahalanobisFit:
    mean: np.ndarray
    covariance: np.ndarray
    shrinkage: float
    factor: tuple

    @property
    def dim(self) -> int:
        return self.mean.size

    def precision(self) -> np.ndarray:
        return cho_solve(self.factor, np.eye(self.dim))


def fit_mahalanobis(samples, shrinkage: float = 1e-3) -> MahalanobisFit:
    x = np.asarray(samples, dtype=float)
    n, d = x.shape
    if n < d + 1:
        raise InsufficientData(f"{n} samples cannot fit a {d}-dimensional covariance")
    covariance = np.atleast_2d(np.cov(x, rowvar=False, ddof=1)) + shrinkage * np.eye(d)
    try:
        factor = cho_factor(covariance, lower=True)
    except LinAlgError as e:
        raise SingularCovariance(f"covariance is not positive definite: {e}") from e
    return MahalanobisFit(x.mean(axis=0), covariance, shrinkage, factor)


def mahal_distance(fit: MahalanobisFit, x) -> np.ndarray:
    """√((x−μ)ᵀ(Σ+λI)⁻¹(x−μ)) per row; a single vector gives a 0-d array."""
    diff = np.asarray(x, dtype=float) - fit.mean
    flat = np.atleast_2d(diff)
    squared = np.einsum("ij,ij->i", flat, cho_solve(fit.factor, flat.T).T)
    distance = np.sqrt(np.clip(squared, 0.0, None))
    return distance[0] if diff.ndim == 1 else distance


# ══════════════════════════════════════════════
# Fusion and thresholding
# ══════════════════════════════════════════════


@dataclass(frozen=True)
class AnomalyTriplet:
    recon: float
    stat: float
    mahal: float

    def as_array(self) -> np.ndarray:
        return np.array([self.recon, self.stat, self.mahal])


@dataclass
class ScoreNormalizer:
    """Per-component z-score constants; a constant component maps to 0."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, recon, stat, mahal) -> "ScoreNormalizer":
        scores = np.column_stack([recon, stat, mahal]).astype(float)
        return cls(scores.mean(axis=0), scores.std(axis=0))

    def transform(self, recon, stat, mahal) -> np.ndarray:
        scores = np.column_stack([np.ravel(recon), np.ravel(stat), np.ravel(mahal)]).astype(float)
        safe = np.where(self.std < 1e-12, 1.0, self.std)
        z = (scores - self.mean) / safe
        z[:, self.std < 1e-12] = 0.0
        return z


def fuse(recon, stat, mahal, norm: ScoreNormalizer) -> AnomalyTriplet:
    z = norm.transform(recon, stat, mahal)[0]
    return AnomalyTriplet(float(z[0]), float(z[1]), float(z[2]))


def percentile_threshold(real_val_scores, percentile: float) -> float:
    if not 0.0 < percentile < 100.0:
        raise ValueError(f"percentile must lie in (0, 100), got {percentile}")
    return float(np.percentile(np.asarray(real_val_scores, dtype=float), percentile))


def threshold_detect(scores, real_val_scores, percentile: float):
    """``(is_fake, threshold)``: FAKE iff score exceeds the percentile of REAL validation scores."""
    threshold = percentile_threshold(real_val_scores, percentile)
    return np.asarray(scores, dtype=float) > threshold, threshold


def threshold_report(scores, labels, real_val_scores, percentile: float):
    is_fake, threshold = threshold_detect(scores, real_val_scores, percentile)
    return report_from_predictions(labels, is_fake, scores=scores, threshold=threshold)


# ══════════════════════════════════════════════
# Baselines
# ══════════════════════════════════════════════


class BaselineDetector:
    """Common fit/score shape; higher score = more anomalous."""

    name = "baseline"

    def fit(self, x):
        raise NotImplementedError

    def score(self, x) -> np.ndarray:
        raise NotImplementedError


class IsolationForestDetector(BaselineDetector):
    name = "isolation_forest"

    def __init__(self, n_estimators: int = 100, seed: int = 0):
        self.model = IsolationForest(n_estimators=n_estimators, random_state=seed)

    def fit(self, x):
        self.model.fit(np.asarray(x, dtype=float))
        return self

    def score(self, x):
        # score_samples is the negated anomaly score s(x, n) in (0, 1)
        return -self.model.score_samples(np.asarray(x, dtype=float))


class LOFDetector(BaselineDetector):
    name = "lof"

    def __init__(self, n_neighbors: int = 20):
        self.n_neighbors = n_neighbors
        self.model = None

    def fit(self, x):
        x = np.asarray(x, dtype=float)
        k = min(self.n_neighbors, len(x) - 1)
        self.model = LocalOutlierFactor(n_neighbors=k, novelty=True).fit(x)
        return self

    def score(self, x):
        return -self.model.score_samples(np.asarray(x, dtype=float))


class GMMDetector(BaselineDetector):
    name = "gmm"

    def __init__(self, n_components: int = 2, seed: int = 0, tol: float = 1e-6,
                 max_iter: int = 200, n_init: int = 5):
        self.model = GaussianMixture(
            n_components=n_components, tol=tol, max_iter=max_iter,
            n_init=n_init, random_state=seed, covariance_type="full",
        )

    def fit(self, x):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            self.model.fit(np.asarray(x, dtype=float))
        if any(issubclass(w.category, ConvergenceWarning) for w in caught):
            logger.warning("GMM EM hit its iteration cap; keeping the best restart")
            warnings.warn("EM did not converge within max_iter", EMNotConverged, stacklevel=2)
        return self

    def score(self, x):
        return -self.model.score_samples(np.asarray(x, dtype=float))

    def responsibilities(self, x):
        return self.model.predict_proba(np.asarray(x, dtype=float))


class KMeansDetector(BaselineDetector):
    name = "kmeans"

    def __init__(self, n_clusters: int = 2, seed: int = 0):
        self.model = KMeans(n_clusters=n_clusters, n_init=10, random_state=seed)

    def fit(self, x):
        self.model.fit(np.asarray(x, dtype=float))
        return self

    def score(self, x):
        return self.model.transform(np.asarray(x, dtype=float)).min(axis=1)


def isolation_forest(seed: int = 0) -> IsolationForestDetector:
    return IsolationForestDetector(seed=seed)


def lof_score(n_neighbors: int = 20) -> LOFDetector:
    return LOFDetector(n_neighbors=n_neighbors)


def gmm_em(n_components: int = 2, seed: int = 0) -> GMMDetector:
    return GMMDetector(n_components=n_components, seed=seed)


def kmeans(n_clusters: int = 2, seed: int = 0) -> KMeansDetector:
    return KMeansDetector(n_clusters=n_clusters, seed=seed)
