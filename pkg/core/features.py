"""
Sliding-window feature extraction over per-switch telemetry.

Every window yields a fixed 14-dimensional vector computed from the *reported*
loads (what the controller sees) in four groups:

    basic           last_load, mean_load, last_delta, rolling_mean
    distributional  percentile_rank_of_last, zscore_of_last, skewness, excess_kurtosis
    stability       std_dev, autocorr_lag1, mad
    peer            load_ratio, mean_peer_delta, unique_count

and a per-epoch sequence ``(load, delta, peer_ratio, baseline_z)`` that feeds
the transformer autoencoder. Labels come from the ground-truth misreport flags.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy import stats

from core.choices import WindowLabel
from core.exceptions import InvalidConfig, InvalidWindow, LogTooShort, SinglePeerGroup, TooFewSamples

logger = logging.getLogger(__name__)

FEATURE_NAMES = [
    "last_load", "mean_load", "last_delta", "rolling_mean",
    "percentile_rank_of_last", "zscore_of_last", "skewness", "excess_kurtosis",
    "std_dev", "autocorr_lag1", "mad",
    "load_ratio", "mean_peer_delta", "unique_count",
]
BASIC_FEATURES = FEATURE_NAMES[:4]
STAT_FEATURES = FEATURE_NAMES[4:]
SEQUENCE_COLUMNS = ["load", "delta", "peer_ratio", "baseline_z"]
KEY_COLUMNS = ["switch_id", "start_epoch", "label"]

# spreads this small relative to the magnitude are rounding noise
_RELATIVE_TOL = 1e-9


@dataclass(frozen=True)
class WindowConfig:
    window_len: int = 10
    stride: int = 5
    rolling_span: Optional[int] = None
    baseline_span: int = 100

    def __post_init__(self):
        if self.window_len < 3:
            raise InvalidWindow(
                f"window length {self.window_len} is below 3 epochs; lag-1 autocorrelation needs three values"
            )
        if not 1 <= self.stride <= self.window_len:
            raise InvalidConfig("stride must lie in [1, window length]")
        if self.rolling_span is not None and self.rolling_span < 1:
            raise InvalidConfig("rolling span must be >= 1")
        if self.baseline_span < 2:
            raise InvalidConfig("baseline span must be >= 2")

    @property
    def span(self) -> int:
        return self.window_len if self.rolling_span is None else self.rolling_span

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class WindowSample:
    switch_id: int
    start_epoch: int
    features: np.ndarray
    label: str
    sequence: np.ndarray

    @property
    def is_fake(self) -> bool:
        return self.label == WindowLabel.FAKE


# ──────────────────────────────────────────────
# Per-window statistics
# ──────────────────────────────────────────────


def _as_series(xs, minimum: int) -> np.ndarray:
    x = np.asarray(xs, dtype=float)
    if x.size < minimum:
        raise TooFewSamples(f"need at least {minimum} values, got {x.size}")
    return x


def _flat(x: np.ndarray) -> bool:
    return float(np.ptp(x)) <= _RELATIVE_TOL * float(np.abs(x).max())


def skewness(xs) -> float:
    x = _as_series(xs, 2)
    if _flat(x):
        return 0.0
    return float(stats.skew(x, bias=True))


def excess_kurtosis(xs) -> float:
    x = _as_series(xs, 2)
    if _flat(x):
        return 0.0
    return float(stats.kurtosis(x, fisher=True, bias=True))


def autocorr_lag1(xs) -> float:
    x = _as_series(xs, 3)
    head, tail = x[:-1], x[1:]
    if _flat(head) or _flat(tail):
        return 0.0
    head = head - head.mean()
    tail = tail - tail.mean()
    return float(np.dot(head, tail) / np.sqrt(np.dot(head, head) * np.dot(tail, tail)))


def mad(xs) -> float:
    x = _as_series(xs, 2)
    if _flat(x):
        return 0.0
    return float(np.mean(np.abs(x - x.mean())))


def zscore_last(xs) -> float:
    x = _as_series(xs, 2)
    if _flat(x):
        return 0.0
    return float((x[-1] - x.mean()) / x.std())


def percentile_rank_last(xs) -> float:
    x = _as_series(xs, 1)
    return float(stats.percentileofscore(x, x[-1], kind="rank") / 100.0)


def peer_features(switch_windows, switch_id: int, rolling_span: Optional[int] = None):
    """
    ``(load_ratio, mean_peer_delta)`` for one switch.

    ``switch_windows`` is an (S, L) array of loads aligned on the same epochs;
    rolling means use the last ``rolling_span`` columns (all when None).
    """
    loads = np.asarray(switch_windows, dtype=float)
    if loads.ndim != 2 or loads.shape[0] < 2:
        raise SinglePeerGroup("peer features need at least two switches")
    if loads.shape[1] < 2:
        raise TooFewSamples("peer deltas need at least two epochs")

    span = loads.shape[1] if rolling_span is None else min(rolling_span, loads.shape[1])
    rolling = loads[:, -span:].mean(axis=1)
    deltas = loads[:, -1] - loads[:, -2]
    peers = np.arange(loads.shape[0]) != switch_id

    peer_mean = rolling[peers].mean()
    if abs(peer_mean) <= _RELATIVE_TOL * np.abs(rolling).max():
        load_ratio = 1.0
    else:
        load_ratio = float(rolling[switch_id] / peer_mean)
    return load_ratio, float(deltas[peers].mean())


def window_features(window, context, switch_id: int, cfg: WindowConfig) -> np.ndarray:
    """
    The 14 features of one window.

    ``window`` holds this switch's loads over the window; ``context`` is the
    (S, L) block of all switches ending at the same epoch, long enough for the
    rolling span.
    """
    x = np.asarray(window, dtype=float)
    own = np.asarray(context, dtype=float)[switch_id]
    rolling_mean = own[-min(cfg.span, own.size):].mean()
    load_ratio, mean_peer_delta = peer_features(context, switch_id, cfg.span)

    return np.array([
        x[-1],
        x.mean(),
        x[-1] - x[-2],
        rolling_mean,
        percentile_rank_last(x),
        zscore_last(x),
        skewness(x),
        excess_kurtosis(x),
        x.std(),
        autocorr_lag1(x),
        mad(x),
        load_ratio,
        mean_peer_delta,
        float(np.unique(x).size),
    ])


# ──────────────────────────────────────────────
# Per-epoch sequence rows
# ──────────────────────────────────────────────


def epoch_sequences(reported, baseline_span: int = 100) -> np.ndarray:
    """
    (N, S, 4) array of per-epoch rows ``(load, delta, peer_ratio, baseline_z)``.

    ``baseline_z`` standardizes each load against the switch's own trailing
    ``baseline_span`` epochs, excluding the current one.
    """
    loads = np.asarray(reported, dtype=float)
    n, s = loads.shape

    delta = np.zeros_like(loads)
    delta[1:] = loads[1:] - loads[:-1]

    totals = loads.sum(axis=1, keepdims=True)
    peer_mean = (totals - loads) / max(s - 1, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.abs(loads).max(axis=1, keepdims=True)
        peer_ratio = np.where(np.abs(peer_mean) <= _RELATIVE_TOL * scale, 1.0, loads / peer_mean)

    frame = pd.DataFrame(loads)
    past = frame.shift(1).rolling(baseline_span, min_periods=2)
    mean = past.mean().to_numpy()
    std = past.std(ddof=0).to_numpy()
    with np.errstate(divide="ignore", invalid="ignore"):
        baseline_z = np.where(np.nan_to_num(std) < 1e-9, 0.0, (loads - mean) / std)
    baseline_z = np.nan_to_num(baseline_z, nan=0.0, posinf=0.0, neginf=0.0)

    return np.stack([loads, delta, peer_ratio, baseline_z], axis=-1)


# ──────────────────────────────────────────────
# Windowing
# ──────────────────────────────────────────────


def window_starts(num_epochs: int, cfg: WindowConfig) -> range:
    if num_epochs < cfg.window_len:
        raise LogTooShort(f"log has {num_epochs} epochs, window needs {cfg.window_len}")
    return range(0, num_epochs - cfg.window_len + 1, cfg.stride)


def make_windows(log, cfg: WindowConfig) -> list:
    """
    Windows of one session, ordered by (switch_id, start_epoch).

    A window is FAKE iff any of its epochs was misreported on that switch.
    """
    reported = log.reported
    misreported = log.misreported
    n, s = reported.shape
    if s < 2:
        raise SinglePeerGroup("windowing needs at least two switches")

    starts = window_starts(n, cfg)
    sequences = epoch_sequences(reported, cfg.baseline_span)
    context_len = max(cfg.window_len, cfg.span)

    samples = []
    for switch_id in range(s):
        for start in starts:
            end = start + cfg.window_len
            context = reported[max(0, end - context_len):end].T
            fake = bool(misreported[start:end, switch_id].any())
            samples.append(WindowSample(
                switch_id=switch_id,
                start_epoch=start,
                features=window_features(reported[start:end, switch_id], context, switch_id, cfg),
                label=WindowLabel.FAKE if fake else WindowLabel.REAL,
                sequence=sequences[start:end, switch_id, :],
            ))

    fake_count = sum(sample.is_fake for sample in samples)
    logger.info(
        f"Extracted {len(samples)} windows (w={cfg.window_len}, stride={cfg.stride}): "
        f"{fake_count} FAKE / {len(samples) - fake_count} REAL"
    )
    return samples


def samples_to_frame(samples, session: int = 0) -> pd.DataFrame:
    frame = pd.DataFrame(np.array([sample.features for sample in samples]), columns=FEATURE_NAMES)
    frame["switch_id"] = [sample.switch_id for sample in samples]
    frame["start_epoch"] = [sample.start_epoch for sample in samples]
    frame["label"] = [str(sample.label) for sample in samples]
    frame["session"] = session
    return frame


def samples_to_sequences(samples) -> np.ndarray:
    return np.stack([sample.sequence for sample in samples]).astype(float)
