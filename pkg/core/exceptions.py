"""
Error types raised by the lab.

Every error carries a short machine-readable ``code`` that the command layer
puts in its JSON error report.
"""


class LabError(Exception):
    code = "lab_error"


class InvalidConfig(LabError, ValueError):
    code = "invalid_config"


# ── simcore ──
class DegenerateDenominator(InvalidConfig):
    code = "degenerate_denominator"


class OutOfRange(InvalidConfig):
    code = "out_of_range"


class EmptyHistory(LabError, ValueError):
    code = "empty_history"


# ── features ──
class InvalidWindow(InvalidConfig):
    code = "invalid_window"


class LogTooShort(LabError, ValueError):
    code = "log_too_short"


class TooFewSamples(LabError, ValueError):
    code = "too_few_samples"


class SinglePeerGroup(LabError, ValueError):
    code = "single_peer_group"


# ── nnkernel / detectors / classifiers ──
class ShapeMismatch(LabError, ValueError):
    code = "shape_mismatch"


class InsufficientData(LabError, ValueError):
    code = "insufficient_data"


class SingularCovariance(LabError, ArithmeticError):
    code = "singular_covariance"


class UncalibratedWhenRequired(LabError):
    code = "uncalibrated_when_required"


# ── qoe ──
class NoPairs(LabError, ValueError):
    code = "no_pairs"


class DegenerateGeometry(LabError, ValueError):
    code = "degenerate_geometry"


class IntervalTooLarge(LabError, ValueError):
    code = "interval_too_large"


# ── evaluation ──
class TooSmall(LabError, ValueError):
    code = "too_small"


class SingleClassAUC(LabError, ValueError):
    code = "single_class_auc"


# ── files ──
class ArtifactError(LabError):
    code = "artifact_error"


class EMNotConverged(UserWarning):
    """EM stopped at its iteration cap; the best iterate is still returned."""
