"""
Dataset splits, classification metrics, exact Shapley attribution and a 2-D
PCA projection.
"""

import itertools
import logging
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
import pandas as pd
from scipy.special import comb
from scipy.stats import rankdata
from sklearn.metrics import confusion_matrix

from core.choices import WindowLabel
from core.exceptions import InvalidConfig, SingleClassAUC, TooFewSamples, TooSmall

logger = logging.getLogger(__name__)


# ──────────────────────────────────────────────
# Splits
# ──────────────────────────────────────────────


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0:
            raise InvalidConfig("split fractions must be non-negative")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise InvalidConfig("split fractions must sum to 1")

    def to_dict(self) -> dict:
        return asdict(self)


def split_indices(n: int, spec: SplitSpec):
    """Shuffled (train, val, test) index arrays; deterministic given the seed."""
    if n < 10:
        raise TooSmall(f"need at least 10 samples to split, got {n}")
    order = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(round(n * spec.train))
    n_val = int(round(n * spec.val))
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def split(dataset, spec: SplitSpec):
    parts = split_indices(len(dataset), spec)
    if isinstance(dataset, pd.DataFrame):
        return tuple(dataset.iloc[np.sort(idx)].reset_index(drop=True) for idx in parts)
    if isinstance(dataset, np.ndarray):
        return tuple(dataset[idx] for idx in parts)
    return tuple([dataset[i] for i in idx] for idx in parts)


# ──────────────────────────────────────────────
# Metrics
# ──────────────────────────────────────────────


def as_fake_mask(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.dtype == bool:
        return labels
    if labels.dtype.kind in "iuf":
        return labels.astype(float) > 0.5
    return labels.astype(str) == WindowLabel.FAKE.value


def roc_auc(labels, scores) -> float:
    """Rank-statistic AUC; tied scores share their average rank."""
    positive = as_fake_mask(labels)
    scores = np.asarray(scores, dtype=float)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassAUC("AUC needs both REAL and FAKE samples")
    ranks = rankdata(scores, method="average")
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _ratio(num, den) -> float:
    return float(num / den) if den else 0.0


def _f1(precision, recall) -> float:
    return _ratio(2 * precision * recall, precision + recall)


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    threshold: float
    precision_fake: float
    recall_fake: float
    f1_fake: float
    precision_real: float
    recall_real: float
    f1_real: float
    accuracy: float
    auc: Optional[float]

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_counts(cls, tp, fp, fn, tn, threshold, auc=None) -> "MetricsReport":
        precision_fake = _ratio(tp, tp + fp)
        recall_fake = _ratio(tp, tp + fn)
        precision_real = _ratio(tn, tn + fn)
        recall_real = _ratio(tn, tn + fp)
        return cls(
            tp=int(tp), fp=int(fp), fn=int(fn), tn=int(tn),
            threshold=float(threshold),
            precision_fake=precision_fake,
            recall_fake=recall_fake,
            f1_fake=_f1(precision_fake, recall_fake),
            precision_real=precision_real,
            recall_real=recall_real,
            f1_real=_f1(precision_real, recall_real),
            accuracy=_ratio(tp + tn, tp + fp + fn + tn),
            auc=auc,
        )


def compute_metrics(labels, scores, threshold: float = 0.5) -> MetricsReport:
    """Metrics for the rule ``FAKE iff score > threshold``."""
    truth = as_fake_mask(labels)
    scores = np.asarray(scores, dtype=float)
    predicted = scores > threshold
    tn, fp, fn, tp = confusion_matrix(truth, predicted, labels=[False, True]).ravel()

    try:
        auc = roc_auc(truth, scores)
    except SingleClassAUC:
        logger.warning("AUC undefined on a single-class set; reported as absent")
        auc = None
    return MetricsReport.from_counts(tp, fp, fn, tn, threshold, auc)


def report_from_predictions(labels, predicted_fake, scores=None, threshold=0.5) -> MetricsReport:
    """Metrics when the decision was made elsewhere (e.g. a percentile rule)."""
    truth = as_fake_mask(labels)
    tn, fp, fn, tp = confusion_matrix(truth, np.asarray(predicted_fake, dtype=bool), labels=[False, True]).ravel()
    auc = None
    if scores is not None:
        try:
            auc = roc_auc(truth, scores)
        except SingleClassAUC:
            auc = None
    return MetricsReport.from_counts(tp, fp, fn, tn, threshold, auc)


# ──────────────────────────────────────────────
# Exact Shapley attribution
# ──────────────────────────────────────────────


def exact_shapley(predict: Callable, x, background):
    """
    Interventional Shapley values of ``predict`` at ``x`` by enumerating every
    coalition. Features outside a coalition take each background row's value.

    Returns ``(attributions, base_value)`` where ``base_value`` is the mean
    prediction over the background.
    """
    x = np.asarray(x, dtype=float).ravel()
    background = np.atleast_2d(np.asarray(background, dtype=float))
    if background.shape[0] < 1:
        raise TooFewSamples("Shapley attribution needs a non-empty background")
    d = x.size

    values = {}
    for mask in itertools.product((False, True), repeat=d):
        batch = background.copy()
        keep = np.array(mask)
        batch[:, keep] = x[keep]
        values[mask] = float(np.mean(predict(batch)))

    attributions = np.zeros(d)
    for mask, value in values.items():
        size = sum(mask)
        for i in range(d):
            if mask[i]:
                continue
            with_i = list(mask)
            with_i[i] = True
            weight = 1.0 / (d * comb(d - 1, size, exact=True))
            attributions[i] += weight * (values[tuple(with_i)] - value)

    return attributions, values[(False,) * d]


def shapley3(predict: Callable, triplet, background):
    triplet = np.asarray(triplet, dtype=float).ravel()
    if triplet.size != 3:
        raise TooFewSamples(f"expected a triplet, got {triplet.size} features")
    return exact_shapley(predict, triplet, background)


# ──────────────────────────────────────────────
# Projection
# ──────────────────────────────────────────────


@dataclass(frozen=True)
class PCAResult:
    projection: np.ndarray
    explained: np.ndarray
    components: np.ndarray
    rank_deficient: bool


def pca2(features) -> PCAResult:
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise TooFewSamples("PCA needs at least 3 samples with 2 dimensions")

    centered = x - x.mean(axis=0)
    eigvals, eigvecs = np.linalg.eigh(np.cov(centered, rowvar=False))
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]

    total = eigvals.sum()
    components = eigvecs[:, :2].T.copy()
    # fix the sign so the largest loading is positive
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0

    explained = eigvals[:2] / total if total > 0 else np.zeros(2)
    rank_deficient = bool(eigvals[1] <= 1e-12 * max(eigvals[0], 1e-300))
    projection = centered @ components.T
    if rank_deficient:
        projection[:, 1] = 0.0
        explained = np.array([explained[0], 0.0])
        logger.warning("PCA input is rank-deficient; second component zeroed")

    return PCAResult(projection, explained, components, rank_deficient)
