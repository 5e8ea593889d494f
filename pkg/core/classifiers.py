"""
Supervised heads over the fused anomaly triplet.

Both heads expose ``decision_function`` (raw log-odds) so the Platt
calibrator can sit on top of either one.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit
from sklearn.model_selection import StratifiedKFold
from sklearn.tree import DecisionTreeRegressor

from core.choices import HeadKind, WindowLabel
from core.evaluation import as_fake_mask
from core.exceptions import InsufficientData, ShapeMismatch, UncalibratedWhenRequired
from core.nnkernel import Adam, Dense, ReLU, Sequential

logger = logging.getLogger(__name__)

TRIPLET_COLUMNS = ("recon", "stat", "mahal")
_PRIOR_CLIP = 1e-6


def inverse_frequency_weights(y) -> np.ndarray:
    """Weights n / (K · n_c) so every present class carries equal total weight."""
    y = np.asarray(y, dtype=float)
    classes, counts = np.unique(y, return_counts=True)
    per_class = {c: len(y) / (len(classes) * n) for c, n in zip(classes, counts)}
    return np.array([per_class[v] for v in y])


def log_loss(y, logits, weights=None) -> float:
    y = np.asarray(y, dtype=float)
    losses = -(y * log_expit(logits) + (1.0 - y) * log_expit(-logits))
    return float(np.average(losses, weights=weights))


def _select(x, inputs) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != len(TRIPLET_COLUMNS):
        raise ShapeMismatch(f"expected triplets with 3 columns, got {x.shape[1]}")
    return x[:, list(inputs)]


def _targets(labels) -> np.ndarray:
    return as_fake_mask(labels).astype(float)


# ══════════════════════════════════════════════
# MLP head
# ══════════════════════════════════════════════


@dataclass
class MLPHead:
    network: Sequential
    inputs: tuple
    seed: int
    loss_history: list = field(default_factory=list)
    kind = HeadKind.MLP

    def decision_function(self, triplets) -> np.ndarray:
        return self.network.forward(_select(triplets, self.inputs))[:, 0]


def mlp_network(n_inputs: int, hidden: int, rng: np.random.Generator) -> Sequential:
    return Sequential(Dense(n_inputs, hidden, rng), ReLU(), Dense(hidden, 1, rng))


def train_mlp_head(triplets, labels, seed: int = 0, inputs=(0, 1, 2), hidden: int = 16,
                   epochs: int = 200, lr: float = 1e-3, batch_size: int = 64,
                   class_weight: bool = True) -> MLPHead:
    x = _select(triplets, inputs)
    y = _targets(labels)
    if len(y) == 0:
        raise InsufficientData("no training samples")
    weights = inverse_frequency_weights(y) if class_weight else np.ones_like(y)

    rng = np.random.default_rng(seed)
    head = MLPHead(mlp_network(x.shape[1], hidden, rng), tuple(inputs), seed)
    optimizer = Adam(head.network.parameters(), lr=lr)

    for epoch in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            optimizer.zero_grad()
            logits = head.network.forward(x[idx])[:, 0]
            w = weights[idx]
            # d/dz of weighted mean BCE-with-logits
            grad = (w * (expit(logits) - y[idx]) / w.sum())[:, None]
            head.network.backward(grad)
            optimizer.step()
        head.loss_history.append(log_loss(y, head.decision_function(triplets), weights))

    logger.info(f"MLP head trained on {len(y)} samples: final loss {head.loss_history[-1]:.4f}")
    return head


# ══════════════════════════════════════════════
# Gradient-boosted trees
# ══════════════════════════════════════════════


@dataclass
class BoostedTree:
    tree: DecisionTreeRegressor
    leaf_values: np.ndarray

    def predict(self, x) -> np.ndarray:
        return self.leaf_values[self.tree.apply(x)]


@dataclass
class GBTModel:
    init_score: float
    learning_rate: float
    inputs: tuple
    trees: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    kind = HeadKind.GBT

    def decision_function(self, triplets, rounds: Optional[int] = None) -> np.ndarray:
        x = _select(triplets, self.inputs)
        scores = np.full(len(x), self.init_score)
        for boosted in self.trees[:rounds]:
            scores += self.learning_rate * boosted.predict(x)
        return scores


def _newton_leaves(tree, x, y, p, w) -> np.ndarray:
    leaves = tree.apply(x)
    values = np.zeros(tree.tree_.node_count)
    num = np.bincount(leaves, weights=w * (y - p), minlength=values.size)
    den = np.bincount(leaves, weights=w * p * (1.0 - p), minlength=values.size)
    occupied = den > 0
    values[occupied] = num[occupied] / np.maximum(den[occupied], 1e-12)
    return values


def train_gbt(triplets, labels, val_triplets, val_labels, inputs=(0, 1, 2),
              rounds: int = 200, learning_rate: float = 0.1, max_depth: int = 3,
              patience: int = 20, class_weight: bool = True, seed: int = 0) -> GBTModel:
    """
    Logistic-loss boosting of depth-limited CART trees with Newton leaf values
    and early stopping on validation log-loss.
    """
    x = _select(triplets, inputs)
    y = _targets(labels)
    x_val = _select(val_triplets, inputs)
    y_val = _targets(val_labels)
    if len(y) == 0:
        raise InsufficientData("no training samples")
    w = inverse_frequency_weights(y) if class_weight else np.ones_like(y)

    prior = np.clip(np.average(y, weights=w), _PRIOR_CLIP, 1.0 - _PRIOR_CLIP)
    model = GBTModel(float(np.log(prior / (1.0 - prior))), learning_rate, tuple(inputs))

    f_train = np.full(len(y), model.init_score)
    f_val = np.full(len(y_val), model.init_score)
    loss = log_loss(y, f_train, w)
    best_val, best_rounds, stale = np.inf, 0, 0

    for round_no in range(rounds):
        p = expit(f_train)
        tree = DecisionTreeRegressor(max_depth=max_depth, random_state=seed)
        tree.fit(x, y - p, sample_weight=w)
        boosted = BoostedTree(tree, _newton_leaves(tree, x, y, p, w))

        step = learning_rate * boosted.predict(x)
        new_loss = log_loss(y, f_train + step, w)
        # halve the tree until the round no longer raises the training loss
        halvings = 0
        while new_loss > loss and halvings < 30:
            boosted.leaf_values *= 0.5
            step *= 0.5
            new_loss = log_loss(y, f_train + step, w)
            halvings += 1
        if new_loss > loss:
            boosted.leaf_values[:] = 0.0
            step[:] = 0.0
            new_loss = loss

        model.trees.append(boosted)
        f_train += step
        loss = new_loss
        model.train_loss.append(loss)

        if len(y_val):
            f_val += learning_rate * boosted.predict(x_val)
            model.val_loss.append(log_loss(y_val, f_val))
            if model.val_loss[-1] < best_val - 1e-12:
                best_val, best_rounds, stale = model.val_loss[-1], round_no + 1, 0
            else:
                stale += 1
                if stale >= patience:
                    logger.info(f"GBT early stop at round {round_no + 1}; best round {best_rounds}")
                    break
        else:
            best_rounds = round_no + 1

    model.trees = model.trees[:max(best_rounds, 1)]
    logger.info(f"GBT trained: {len(model.trees)} trees, train loss {model.train_loss[-1]:.4f}")
    return model


# ══════════════════════════════════════════════
# Calibration and decisions
# ══════════════════════════════════════════════


@dataclass(frozen=True)
class Calibrator:
    a: float
    b: float
    fold_params: tuple

    def transform(self, raw_scores) -> np.ndarray:
        return expit(self.a * np.asarray(raw_scores, dtype=float) + self.b)


def fit_platt(raw_scores, labels):
    """Sigmoid fit on Platt's smoothed targets; returns (a, b)."""
    s = np.asarray(raw_scores, dtype=float)
    y = _targets(labels)
    n_pos = y.sum()
    n_neg = len(y) - n_pos
    t = np.where(y > 0.5, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def objective(params):
        a, b = params
        z = a * s + b
        value = -np.sum(t * log_expit(z) + (1.0 - t) * log_expit(-z))
        residual = expit(z) - t
        return value, np.array([np.dot(residual, s), residual.sum()])

    start = np.array([1.0, np.log((n_pos + 1.0) / (n_neg + 1.0))])
    result = minimize(objective, start, jac=True, method="L-BFGS-B")
    return float(result.x[0]), float(result.x[1])


def calibrate(model_scores, val_labels, folds: int = 5, seed: int = 0) -> Calibrator:
    """Platt parameters fit on each training fold of the validation set, averaged."""
    s = np.asarray(model_scores, dtype=float)
    y = _targets(val_labels)
    smallest = int(min(y.sum(), len(y) - y.sum()))

    params = []
    if smallest >= 2:
        splitter = StratifiedKFold(n_splits=min(folds, smallest), shuffle=True, random_state=seed)
        for fit_idx, _ in splitter.split(s.reshape(-1, 1), y):
            params.append(fit_platt(s[fit_idx], y[fit_idx]))
    else:
        logger.warning("Too few samples of one class for folds; fitting one sigmoid on all of them")
        params.append(fit_platt(s, y))

    a, b = np.mean(params, axis=0)
    if a <= 0:
        logger.warning(f"Calibrated slope a={a:.4f} is not positive; probabilities no longer rise with the score")
    logger.info(f"Platt calibration over {len(params)} folds: a={a:.4f}, b={b:.4f}")
    return Calibrator(float(a), float(b), tuple(params))


def predict_proba(model, triplets, calibrator: Optional[Calibrator] = None,
                  require_calibration: bool = False) -> np.ndarray:
    if calibrator is None and require_calibration:
        raise UncalibratedWhenRequired("this head was configured to need a calibrator")
    raw = model.decision_function(triplets)
    if calibrator is not None:
        return calibrator.transform(raw)
    return expit(raw)


def classify(p, threshold: float = 0.5):
    """FAKE iff p > threshold; a tie stays REAL."""
    p = np.asarray(p, dtype=float)
    labels = np.where(p > threshold, WindowLabel.FAKE.value, WindowLabel.REAL.value)
    return labels if labels.ndim else str(labels)
