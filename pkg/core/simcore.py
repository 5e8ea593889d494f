"""
Discrete-epoch simulation of an SDN least-load balancer under a stealthy
misreporting adversary.

One session = S switches polled every ``polling_interval`` seconds. Each
epoch every switch accrues Poisson background bytes, plus workflow bytes while
it serves the single active VR workflow. The controller assigns new workflows
to the switch reporting the lowest delta. During the attack window the
compromised switch lies with probability φ, replacing its true delta by a draw
from the bottom ρ-quantile of its own load history.
"""

import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import pandas as pd

from core.choices import AttackMode
from core.exceptions import (
    DegenerateDenominator,
    EmptyHistory,
    InvalidConfig,
    OutOfRange,
)

logger = logging.getLogger(__name__)

TELEMETRY_COLUMNS = [
    "epoch", "switch_id", "actual_load", "reported_load",
    "selected", "misreported", "attack_active",
]


# ══════════════════════════════════════════════
# Attack arithmetic
# ══════════════════════════════════════════════


def compute_phi(num_switches: int, rho: float, tau: float) -> float:
    """
    Misreport frequency needed to attract a share ``tau`` of selections.

    φ = (τ − 1/S) / ((1 − ρ)^(S−1) − 1/S)
    """
    if num_switches < 2:
        raise InvalidConfig(f"need at least 2 switches, got {num_switches}")
    if not 0.0 < rho < 1.0:
        raise InvalidConfig(f"stealth percentile must lie in (0, 1), got {rho}")
    if not 0.0 < tau <= 1.0:
        raise InvalidConfig(f"target share must lie in (0, 1], got {tau}")

    uniform = 1.0 / num_switches
    denominator = (1.0 - rho) ** (num_switches - 1) - uniform
    if abs(denominator) < 1e-12:
        raise DegenerateDenominator(
            f"(1-ρ)^(S-1) - 1/S vanishes for S={num_switches}, ρ={rho}"
        )

    phi = (tau - uniform) / denominator
    # absorb rounding noise around the two ends of the range
    if -1e-12 < phi < 0.0:
        phi = 0.0
    if 1.0 < phi < 1.0 + 1e-12:
        phi = 1.0
    if not 0.0 <= phi <= 1.0:
        raise OutOfRange(
            f"φ={phi:.4f} outside [0, 1] for S={num_switches}, ρ={rho}, τ={tau}"
        )
    return phi


def quantile_index(n: int, rho: float) -> int:
    """Index of the empirical ρ-quantile in an ascending history of length n."""
    return max(math.ceil(rho * n - 1e-9) - 1, 0)


def _sorted_with_ceiling(history, rho: float):
    if len(history) == 0:
        raise EmptyHistory("attacker history is empty")
    ordered = np.sort(np.asarray(history))
    return ordered, ordered[quantile_index(len(ordered), rho)]


def stealth_ceiling(history, rho: float) -> int:
    """Largest value a stealthy draw from ``history`` may take."""
    return int(_sorted_with_ceiling(history, rho)[1])


def sample_fake_load(history, rho: float, rng: np.random.Generator) -> int:
    """
    Draw uniformly from the historical loads at or below ``stealth_ceiling``.

    The result is always a member of ``history``.
    """
    ordered, ceiling = _sorted_with_ceiling(history, rho)
    pool_size = int(np.searchsorted(ordered, ceiling, side="right"))
    return int(ordered[rng.integers(pool_size)])


def select_switch(reported_deltas) -> int:
    """Lowest reported delta wins; ties go to the lowest switch index."""
    return int(np.argmin(np.asarray(reported_deltas)))


# ══════════════════════════════════════════════
# Configuration
# ══════════════════════════════════════════════


@dataclass(frozen=True)
class AttackConfig:
    num_switches: int = 4
    target_share: float = 0.48
    stealth_percentile: float = 0.01
    attack_window: int = 1000
    compromised_switch: int = 0
    attack_start: Optional[int] = None
    warmup: int = 100
    history_capacity: Optional[int] = None
    mode: str = AttackMode.STEALTHY
    misreport_freq_override: Optional[float] = None
    misreport_freq: float = field(init=False)

    def __post_init__(self):
        if self.attack_window < 0:
            raise InvalidConfig("attack window must be >= 0 epochs")
        if not 0 <= self.compromised_switch < max(self.num_switches, 1):
            raise InvalidConfig(
                f"compromised switch {self.compromised_switch} not in "
                f"[0, {self.num_switches})"
            )
        if self.warmup < 1:
            raise InvalidConfig("warm-up must be at least one epoch")
        if self.history_capacity is not None and self.history_capacity < self.warmup:
            raise InvalidConfig("history capacity must hold at least the warm-up")
        if self.attack_start is not None and self.attack_start < 0:
            raise InvalidConfig("attack start must be >= 0")
        if self.mode not in AttackMode.values:
            raise InvalidConfig(f"unknown attack mode {self.mode!r}")

        phi = compute_phi(self.num_switches, self.stealth_percentile, self.target_share)
        if self.misreport_freq_override is not None:
            if not 0.0 <= self.misreport_freq_override <= 1.0:
                raise OutOfRange("φ override must lie in [0, 1]")
            phi = float(self.misreport_freq_override)
        object.__setattr__(self, "misreport_freq", phi)

    @property
    def start_epoch(self) -> int:
        return self.warmup if self.attack_start is None else self.attack_start

    def in_window(self, epoch: int) -> bool:
        return self.start_epoch <= epoch < self.start_epoch + self.attack_window

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "AttackConfig":
        data = {k: v for k, v in data.items() if k != "misreport_freq"}
        return cls(**data)


@dataclass(frozen=True)
class TrafficConfig:
    polling_interval: float = 2.0
    workflow_duration: float = 15.0
    background_rate: float = 50.0
    background_packet_bytes: float = 1000.0
    packet_jitter: float = 0.5
    workflow_rate: float = 2500.0
    session_interval: float = 15.0

    def __post_init__(self):
        for name in (
            "polling_interval", "workflow_duration", "background_rate",
            "background_packet_bytes", "workflow_rate", "session_interval",
        ):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be strictly positive")
        if not 0.0 <= self.packet_jitter < 1.0:
            raise InvalidConfig("packet jitter must lie in [0, 1)")
        if self.session_interval < self.workflow_duration:
            raise InvalidConfig("session interval must cover a whole workflow")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrafficConfig":
        return cls(**data)


# ══════════════════════════════════════════════
# Records
# ══════════════════════════════════════════════


@dataclass(frozen=True)
class EpochRecord:
    epoch_index: int
    actual_load: tuple
    reported_load: tuple
    selected_switch: int
    misreported: tuple
    attack_active: bool


@dataclass(frozen=True)
class TelemetryLog:
    records: tuple
    attack: AttackConfig
    traffic: TrafficConfig
    rng_seed: int

    def __post_init__(self):
        if not self.records:
            raise InvalidConfig("a telemetry log holds at least one epoch")
        for expected, record in enumerate(self.records):
            if record.epoch_index != expected:
                raise InvalidConfig(
                    f"epoch indices must be consecutive from 0 "
                    f"(found {record.epoch_index} at position {expected})"
                )

    def __len__(self):
        return len(self.records)

    @property
    def num_switches(self) -> int:
        return len(self.records[0].actual_load)

    @cached_property
    def actual(self) -> np.ndarray:
        return np.array([r.actual_load for r in self.records], dtype=np.int64)

    @cached_property
    def reported(self) -> np.ndarray:
        return np.array([r.reported_load for r in self.records], dtype=np.int64)

    @cached_property
    def misreported(self) -> np.ndarray:
        return np.array([r.misreported for r in self.records], dtype=bool)

    @cached_property
    def selected(self) -> np.ndarray:
        return np.array([r.selected_switch for r in self.records], dtype=np.int64)

    @cached_property
    def attack_active(self) -> np.ndarray:
        return np.array([r.attack_active for r in self.records], dtype=bool)

    def selection_share(self, switch: int, attack_only: bool = True) -> float:
        mask = self.attack_active if attack_only else np.ones(len(self), dtype=bool)
        if not mask.any():
            return 0.0
        return float(np.mean(self.selected[mask] == switch))

    def misreport_rate(self) -> float:
        """Fraction of attack-active epochs in which the compromised switch lied."""
        if not self.attack_active.any():
            return 0.0
        lies = self.misreported[:, self.attack.compromised_switch]
        return float(np.mean(lies[self.attack_active]))

    def to_frame(self) -> pd.DataFrame:
        n, s = self.actual.shape
        frame = pd.DataFrame({
            "epoch": np.repeat(np.arange(n), s),
            "switch_id": np.tile(np.arange(s), n),
            "actual_load": self.actual.ravel(),
            "reported_load": self.reported.ravel(),
            "selected": (self.selected[:, None] == np.arange(s)[None, :]).ravel().astype(int),
            "misreported": self.misreported.ravel().astype(int),
            "attack_active": np.repeat(self.attack_active, s).astype(int),
        })
        return frame[TELEMETRY_COLUMNS]

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, attack: AttackConfig,
                   traffic: TrafficConfig, rng_seed: int) -> "TelemetryLog":
        frame = frame.sort_values(["epoch", "switch_id"])
        records = []
        for epoch, rows in frame.groupby("epoch", sort=True):
            selected = rows.loc[rows["selected"] == 1, "switch_id"]
            records.append(EpochRecord(
                epoch_index=int(epoch),
                actual_load=tuple(int(v) for v in rows["actual_load"]),
                reported_load=tuple(int(v) for v in rows["reported_load"]),
                selected_switch=int(selected.iloc[0]),
                misreported=tuple(bool(v) for v in rows["misreported"]),
                attack_active=bool(rows["attack_active"].iloc[0]),
            ))
        return cls(tuple(records), attack, traffic, rng_seed)


# ══════════════════════════════════════════════
# Session state machine
# ══════════════════════════════════════════════


@dataclass
class ActiveWorkflow:
    switch: int
    start: float
    end: float


class SessionSimulator:
    """
    Mutable state for one session. All randomness comes from ``rng``.
    """

    def __init__(self, attack: AttackConfig, traffic: TrafficConfig, rng: np.random.Generator):
        self.attack = attack
        self.traffic = traffic
        self.rng = rng
        self.epoch = 0
        self.history = deque(maxlen=attack.history_capacity)
        self.workflow: Optional[ActiveWorkflow] = None
        self.next_launch = 0.0

    # ── traffic ──

    def _background_bytes(self) -> np.ndarray:
        t = self.traffic
        mean_packets = t.background_rate * t.polling_interval
        low = t.background_packet_bytes * (1.0 - t.packet_jitter)
        high = t.background_packet_bytes * (1.0 + t.packet_jitter)
        loads = np.empty(self.attack.num_switches, dtype=np.int64)
        for s in range(self.attack.num_switches):
            count = self.rng.poisson(mean_packets)
            loads[s] = int(round(float(self.rng.uniform(low, high, count).sum())))
        return loads

    def _workflow_bytes(self, start: float, end: float) -> np.ndarray:
        loads = np.zeros(self.attack.num_switches, dtype=np.int64)
        wf = self.workflow
        if wf is not None:
            overlap = min(wf.end, end) - max(wf.start, start)
            if overlap > 0:
                loads[wf.switch] = int(round(overlap * self.traffic.workflow_rate))
        return loads

    def _maybe_launch(self, now: float, selected: int):
        if self.workflow is not None and self.workflow.end <= now:
            self.workflow = None
        if self.workflow is None and now >= self.next_launch:
            self.workflow = ActiveWorkflow(selected, now, now + self.traffic.workflow_duration)
            self.next_launch = now + self.traffic.session_interval

    # ── one poll ──

    def step_epoch(self) -> EpochRecord:
        t = self.traffic
        start = self.epoch * t.polling_interval
        end = start + t.polling_interval

        actual = self._background_bytes() + self._workflow_bytes(start, end)
        reported = actual.copy()
        misreported = np.zeros(self.attack.num_switches, dtype=bool)

        c = self.attack.compromised_switch
        attack_active = (
            self.attack.in_window(self.epoch)
            and len(self.history) >= self.attack.warmup
        )
        if attack_active and self.rng.random() < self.attack.misreport_freq:
            if self.attack.mode == AttackMode.ZERO:
                reported[c] = 0
            else:
                reported[c] = sample_fake_load(self.history, self.attack.stealth_percentile, self.rng)
            misreported[c] = True

        # history holds past epochs only
        self.history.append(int(actual[c]))

        selected = select_switch(reported)
        self._maybe_launch(end, selected)

        record = EpochRecord(
            epoch_index=self.epoch,
            actual_load=tuple(int(v) for v in actual),
            reported_load=tuple(int(v) for v in reported),
            selected_switch=selected,
            misreported=tuple(bool(v) for v in misreported),
            attack_active=bool(attack_active),
        )
        self.epoch += 1
        return record


def run_session(attack: AttackConfig, traffic: TrafficConfig,
                num_epochs: int, seed: int) -> TelemetryLog:
    """Run one deterministic session of ``num_epochs`` polls."""
    if num_epochs < 1:
        raise InvalidConfig("a session needs at least one epoch")

    simulator = SessionSimulator(attack, traffic, np.random.default_rng(seed))
    records = tuple(simulator.step_epoch() for _ in range(num_epochs))
    log = TelemetryLog(records, attack, traffic, seed)

    logger.info(
        f"Session seed={seed}: {num_epochs} epochs, φ={attack.misreport_freq:.4f}, "
        f"misreport rate={log.misreport_rate():.3f}, "
        f"compromised share={log.selection_share(attack.compromised_switch):.3f}"
    )
    return log
