"""
Trajectory QoE metrics for offloaded VR pose streams.

ATE after rigid Horn alignment, RPE over a fixed frame interval, a
pose-spoofing injector with period-4 masks, and the centered moving average
used for plotting error series. Quaternions are kept scalar-first (w, x, y, z);
TUM files store them as (qx, qy, qz, qw).
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from core.artifacts import atomic_path
from core.exceptions import (
    ArtifactError,
    DegenerateGeometry,
    IntervalTooLarge,
    InvalidConfig,
    NoPairs,
)

logger = logging.getLogger(__name__)

TUM_COLUMNS = ["timestamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw"]

# indices (mod 4) altered at each spoofing level
SPOOF_MASKS = {0: (), 25: (0,), 50: (0, 2), 75: (0, 1, 2)}


@dataclass(frozen=True)
class Pose:
    timestamp: float
    translation: np.ndarray
    rotation: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    timestamps: np.ndarray
    translations: np.ndarray
    quaternions: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        p = np.asarray(self.translations, dtype=float).reshape(-1, 3)
        q = np.asarray(self.quaternions, dtype=float).reshape(-1, 4)
        if not (len(t) == len(p) == len(q)):
            raise InvalidConfig("timestamps, translations and rotations differ in length")
        if np.any(np.diff(t) <= 0):
            raise InvalidConfig("trajectory timestamps must be strictly increasing")
        norms = np.linalg.norm(q, axis=1)
        if np.any(norms < 1e-12):
            raise InvalidConfig("zero quaternion in trajectory")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "translations", p)
        object.__setattr__(self, "quaternions", q / norms[:, None])

    def __len__(self):
        return len(self.timestamps)

    @classmethod
    def from_rotations(cls, timestamps, translations, rotations: Rotation) -> "Trajectory":
        return cls(timestamps, translations, rotations.as_quat(canonical=True, scalar_first=True))

    @property
    def rotations(self) -> Rotation:
        return Rotation.from_quat(self.quaternions, scalar_first=True)

    @property
    def poses(self) -> list:
        return [Pose(t, p, q) for t, p, q in zip(self.timestamps, self.translations, self.quaternions)]

    def subset(self, idx) -> "Trajectory":
        return Trajectory(self.timestamps[idx], self.translations[idx], self.quaternions[idx])

    def transformed(self, rotation: Rotation, translation) -> "Trajectory":
        """Apply one rigid map on the left of every pose."""
        return Trajectory.from_rotations(
            self.timestamps,
            rotation.apply(self.translations) + np.asarray(translation, dtype=float),
            rotation * self.rotations,
        )


# ──────────────────────────────────────────────
# TUM files
# ──────────────────────────────────────────────


def read_tum(path) -> Trajectory:
    try:
        frame = pd.read_csv(path, sep=r"\s+", comment="#", header=None, names=TUM_COLUMNS)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ArtifactError(f"cannot read trajectory {path}: {e}") from e
    frame = frame.dropna()
    if frame.empty:
        raise ArtifactError(f"{path} holds no poses")
    return Trajectory(
        frame["timestamp"].to_numpy(),
        frame[["tx", "ty", "tz"]].to_numpy(),
        frame[["qw", "qx", "qy", "qz"]].to_numpy(),
    )


def write_tum(path, traj: Trajectory):
    frame = pd.DataFrame(
        np.column_stack([traj.timestamps, traj.translations, traj.quaternions[:, [1, 2, 3, 0]]]),
        columns=TUM_COLUMNS,
    )
    with atomic_path(path) as tmp:
        with open(tmp, "w") as fh:
            fh.write("# " + " ".join(TUM_COLUMNS) + "\n")
            frame.to_csv(fh, sep=" ", header=False, index=False, float_format="%.9f", lineterminator="\n")


# ──────────────────────────────────────────────
# Association and alignment
# ──────────────────────────────────────────────


@dataclass(frozen=True)
class PosePairs:
    gt_index: np.ndarray
    est_index: np.ndarray

    def __len__(self):
        return len(self.gt_index)


def associate(gt: Trajectory, est: Trajectory, max_dt: float = 0.02) -> PosePairs:
    """Greedy nearest-timestamp matching; each pose is used at most once."""
    if len(gt) == 0 or len(est) == 0:
        raise NoPairs("cannot associate an empty trajectory")

    lo = np.searchsorted(est.timestamps, gt.timestamps - max_dt, side="left")
    hi = np.searchsorted(est.timestamps, gt.timestamps + max_dt, side="right")
    candidates = [
        (abs(gt.timestamps[i] - est.timestamps[j]), i, j)
        for i in range(len(gt))
        for j in range(lo[i], hi[i])
    ]
    candidates.sort()

    used_gt, used_est, pairs = set(), set(), []
    for _, i, j in candidates:
        if i in used_gt or j in used_est:
            continue
        used_gt.add(i)
        used_est.add(j)
        pairs.append((i, j))

    if not pairs:
        raise NoPairs(f"no timestamps agree within {max_dt} s")
    pairs.sort()
    gt_index, est_index = (np.array(side) for side in zip(*pairs))
    return PosePairs(gt_index, est_index)


@dataclass(frozen=True)
class AlignmentResult:
    rotation: np.ndarray
    translation: np.ndarray
    residual_rmse: float

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation


def _check_spread(points, name):
    centered = points - points.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    if singular[0] < 1e-12 or singular[1] <= 1e-9 * singular[0]:
        raise DegenerateGeometry(f"{name} points are coincident or collinear")


def horn_align(gt_points, est_points) -> AlignmentResult:
    """
    Rigid map (no scale) taking ``est_points`` onto ``gt_points`` in the
    least-squares sense, from the top eigenvector of Horn's 4×4 matrix.

    Only the ground truth must span a plane; a collapsed estimate still
    gets a proper rotation.
    """
    gt_points = np.asarray(gt_points, dtype=float)
    est_points = np.asarray(est_points, dtype=float)
    if gt_points.shape != est_points.shape or gt_points.shape[0] < 3:
        raise DegenerateGeometry("alignment needs at least 3 paired points")
    _check_spread(gt_points, "ground-truth")

    mu_gt = gt_points.mean(axis=0)
    mu_est = est_points.mean(axis=0)
    s = (est_points - mu_est).T @ (gt_points - mu_gt)
    (sxx, sxy, sxz), (syx, syy, syz), (szx, szy, szz) = s

    n = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    _, eigvecs = np.linalg.eigh(n)
    rotation = Rotation.from_quat(eigvecs[:, -1], scalar_first=True).as_matrix()
    translation = mu_gt - rotation @ mu_est

    residuals = est_points @ rotation.T + translation - gt_points
    rmse = float(np.sqrt(np.mean(np.sum(residuals ** 2, axis=1))))
    return AlignmentResult(rotation, translation, rmse)


# ──────────────────────────────────────────────
# ATE / RPE
# ──────────────────────────────────────────────


@dataclass(frozen=True)
class ATEResult:
    rmse: float
    mean: float
    median: float
    max: float
    errors: np.ndarray
    alignment: AlignmentResult

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "mean": self.mean, "median": self.median, "max": self.max, "pairs": len(self.errors)}


def absolute_trajectory_error(gt: Trajectory, est: Trajectory, max_dt: float = 0.02) -> ATEResult:
    pairs = associate(gt, est, max_dt)
    gt_p = gt.translations[pairs.gt_index]
    est_p = est.translations[pairs.est_index]
    alignment = horn_align(gt_p, est_p)
    # the translation of T̂⁻¹ S T has the norm of S·t − t̂
    errors = np.linalg.norm(alignment.apply(est_p) - gt_p, axis=1)
    return ATEResult(
        rmse=float(np.sqrt(np.mean(errors ** 2))),
        mean=float(np.mean(errors)),
        median=float(np.median(errors)),
        max=float(np.max(errors)),
        errors=errors,
        alignment=alignment,
    )


def ate_rmse(gt: Trajectory, est: Trajectory, max_dt: float = 0.02) -> float:
    return absolute_trajectory_error(gt, est, max_dt).rmse


@dataclass(frozen=True)
class RPEResult:
    trans_rmse: float
    rot_rmse: float
    trans_errors: np.ndarray
    rot_errors_deg: np.ndarray

    def to_dict(self) -> dict:
        return {"trans_rmse": self.trans_rmse, "rot_rmse_deg": self.rot_rmse, "intervals": len(self.trans_errors)}


def _relative(rotations: Rotation, translations, delta):
    """T_i⁻¹ T_{i+δ} for every valid i."""
    first_inv = rotations[:-delta].inv()
    return (
        first_inv * rotations[delta:],
        first_inv.apply(translations[delta:] - translations[:-delta]),
    )


def relative_pose_error(gt: Trajectory, est: Trajectory, delta: int = 1, max_dt: float = 0.02) -> RPEResult:
    pairs = associate(gt, est, max_dt)
    if delta < 1 or len(pairs) < delta + 1:
        raise IntervalTooLarge(f"δ={delta} needs at least {delta + 1} paired poses, have {len(pairs)}")

    gt_rot, gt_t = _relative(gt.rotations[pairs.gt_index], gt.translations[pairs.gt_index], delta)
    est_rot, est_t = _relative(est.rotations[pairs.est_index], est.translations[pairs.est_index], delta)

    gt_inv = gt_rot.inv()
    trans_errors = np.linalg.norm(gt_inv.apply(est_t - gt_t), axis=1)
    rot_errors = np.degrees((gt_inv * est_rot).magnitude())

    return RPEResult(
        trans_rmse=float(np.sqrt(np.mean(trans_errors ** 2))),
        rot_rmse=float(np.sqrt(np.mean(rot_errors ** 2))),
        trans_errors=trans_errors,
        rot_errors_deg=rot_errors,
    )


def rpe(gt: Trajectory, est: Trajectory, delta: int = 1, max_dt: float = 0.02):
    result = relative_pose_error(gt, est, delta, max_dt)
    return result.trans_rmse, result.rot_rmse


# ──────────────────────────────────────────────
# Spoofing and smoothing
# ──────────────────────────────────────────────


@dataclass(frozen=True)
class SpoofConfig:
    level: int = 0
    noise_sigma_t: float = 0.05
    noise_sigma_r: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.level not in SPOOF_MASKS:
            raise InvalidConfig(f"spoof level must be one of {sorted(SPOOF_MASKS)}")
        if self.noise_sigma_t < 0 or self.noise_sigma_r < 0:
            raise InvalidConfig("noise sigmas must be non-negative")

    def mask(self, n: int) -> np.ndarray:
        return np.isin(np.arange(n) % 4, SPOOF_MASKS[self.level])


def spoof(traj: Trajectory, cfg: SpoofConfig) -> Trajectory:
    """Perturb the masked poses; the others are returned untouched."""
    mask = cfg.mask(len(traj))
    m = int(mask.sum())
    if m == 0:
        return traj

    rng = np.random.default_rng(cfg.seed)
    translations = traj.translations.copy()
    translations[mask] += rng.normal(0.0, cfg.noise_sigma_t, size=(m, 3))

    axes = rng.normal(size=(m, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = np.radians(np.abs(rng.normal(0.0, cfg.noise_sigma_r, size=m)))
    perturbed = traj.rotations[np.flatnonzero(mask)] * Rotation.from_rotvec(axes * angles[:, None])

    quaternions = traj.quaternions.copy()
    quaternions[mask] = perturbed.as_quat(canonical=True, scalar_first=True)
    return Trajectory(traj.timestamps, translations, quaternions)


def smooth(series, window: int = 100) -> np.ndarray:
    """Centered moving average; the window shrinks at both ends."""
    if window < 1:
        raise InvalidConfig("smoothing window must be >= 1")
    return pd.Series(np.asarray(series, dtype=float)).rolling(window, center=True, min_periods=1).mean().to_numpy()


# ──────────────────────────────────────────────
# Synthetic ground truth
# ──────────────────────────────────────────────


def synthetic_head_trajectory(num_poses: int = 600, rate_hz: float = 30.0, seed: int = 0) -> Trajectory:
    """Seated-user head motion: slow sway plus yaw/pitch/roll oscillation."""
    rng = np.random.default_rng(seed)
    t = np.arange(num_poses) / rate_hz
    phases = rng.uniform(0, 2 * np.pi, size=6)

    translations = np.column_stack([
        0.30 * np.sin(0.5 * t + phases[0]),
        0.20 * np.sin(0.7 * t + phases[1]),
        1.60 + 0.05 * np.sin(1.3 * t + phases[2]),
    ])
    translations += np.cumsum(rng.normal(0.0, 0.001, size=(num_poses, 3)), axis=0)

    angles = np.column_stack([
        30.0 * np.sin(0.4 * t + phases[3]),
        10.0 * np.sin(0.9 * t + phases[4]),
        5.0 * np.sin(1.1 * t + phases[5]),
    ])
    return Trajectory.from_rotations(t, translations, Rotation.from_euler("ZYX", angles, degrees=True))


def qoe_report(gt: Trajectory, est: Trajectory, delta: int = 1, smooth_window: int = 100,
               max_dt: float = 0.02, spoof_level: Optional[int] = None) -> dict:
    ate = absolute_trajectory_error(gt, est, max_dt)
    rel = relative_pose_error(gt, est, delta, max_dt)
    logger.info(f"ATE rmse={ate.rmse:.4f} m, RPE trans={rel.trans_rmse:.4f} m rot={rel.rot_rmse:.3f} deg")
    return {
        "spoof_level": spoof_level,
        "delta": delta,
        "smooth_window": smooth_window,
        "ate": ate.to_dict(),
        "rpe": rel.to_dict(),
        "rpe_rot_smoothed": smooth(rel.rot_errors_deg, smooth_window).tolist(),
    }
