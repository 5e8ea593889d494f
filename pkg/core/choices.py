"""
Shared enumerations.

Kept apart from ``core.models`` so the computational modules can use them
without importing the ORM.
"""

from django.db import models


# ──────────────────────────────────────────────
# Window labels
# ──────────────────────────────────────────────
class WindowLabel(models.TextChoices):
    REAL = "REAL", "Real"
    FAKE = "FAKE", "Fake"


# ──────────────────────────────────────────────
# Adversary behaviour
# ──────────────────────────────────────────────
class AttackMode(models.TextChoices):
    STEALTHY = "stealthy", "Low-percentile historical draw"
    ZERO = "zero", "Zero reporting"


# ──────────────────────────────────────────────
# Supervised heads
# ──────────────────────────────────────────────
class HeadKind(models.TextChoices):
    MLP = "mlp", "One-hidden-layer MLP"
    GBT = "gbt", "Gradient-boosted trees"


# ──────────────────────────────────────────────
# Dataset splits
# ──────────────────────────────────────────────
class SplitName(models.TextChoices):
    TRAIN = "train", "Training"
    VAL = "val", "Validation"
    TEST = "test", "Test"


# ──────────────────────────────────────────────
# Registry bookkeeping
# ──────────────────────────────────────────────
class RunKind(models.TextChoices):
    SIMULATE = "simulate", "Simulate"
    EXTRACT = "extract", "Extract"
    TRAIN_UNSUP = "train_unsup", "Train unsupervised detectors"
    SCORE = "score", "Score"
    TRAIN_HEAD = "train_head", "Train head"
    EVALUATE = "evaluate", "Evaluate"
    GRID = "grid", "Grid"
    QOE = "qoe", "QoE"
    BENCH_LATENCY = "bench_latency", "Latency benchmark"
    EXPLAIN = "explain", "Explain"


class RunStatus(models.TextChoices):
    RUNNING = "running", "Running"
    SUCCEEDED = "succeeded", "Succeeded"
    FAILED = "failed", "Failed"
