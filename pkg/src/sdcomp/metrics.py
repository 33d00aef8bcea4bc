"""Evaluation metrics: depth-completion errors and trajectory errors.

Depth errors follow the benchmark conventions: MAE/RMSE on depths in
millimeters, iMAE/iRMSE on inverse depths in 1/km, restricted to pixels
with valid positive ground truth.

Trajectory poses are camera-to-world. ATE compares absolute poses after
re-expressing the estimate in the ground-truth world frame at the first
pose (no global alignment beyond that anchoring); RPE/RRE compare relative
poses over a sliding window and are independent of absolute drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, Rotation, compose, inverse, log_so3, relative_pose
from .scaffold import DenseDepthMap


class LengthMismatch(ValueError):
    """Estimated and ground-truth trajectories have different lengths."""


class TooShort(ValueError):
    """Trajectory too short for the requested window."""


class EmptyGroundTruth(ValueError):
    """No valid ground-truth pixels to evaluate against."""


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered absolute camera poses."""

    poses: tuple
    timestamps: np.ndarray

    def __post_init__(self):
        poses = tuple(self.poses)
        ts = np.asarray(self.timestamps, dtype=float)
        if len(poses) != len(ts):
            raise ValueError("one timestamp per pose required")
        if len(poses) >= 2 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")
        ts.setflags(write=False)
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return len(self.poses)


@dataclass(frozen=True)
class DepthErrorReport:
    """Depth-completion error summary; see module docstring for units."""

    mae_mm: float
    rmse_mm: float
    imae_per_km: float
    irmse_per_km: float
    valid_pixels: int

    def __post_init__(self):
        if self.rmse_mm < self.mae_mm - 1e-9 or self.irmse_per_km < self.imae_per_km - 1e-9:
            raise ValueError("RMS errors cannot be below mean absolute errors")

    def as_dict(self) -> dict:
        return {
            "mae_mm": self.mae_mm,
            "rmse_mm": self.rmse_mm,
            "imae_per_km": self.imae_per_km,
            "irmse_per_km": self.irmse_per_km,
            "valid_pixels": self.valid_pixels,
        }


def _evaluation_mask(gt: DenseDepthMap) -> np.ndarray:
    return gt.validity & (gt.depth > 0)


def depth_errors(pred: DenseDepthMap, gt: DenseDepthMap) -> DepthErrorReport:
    """MAE/RMSE (mm) and iMAE/iRMSE (1/km) against valid ground truth."""
    if pred.depth.shape != gt.depth.shape:
        raise LengthMismatch(
            f"prediction {pred.depth.shape} vs ground truth {gt.depth.shape}"
        )
    mask = _evaluation_mask(gt)
    if not mask.any():
        raise EmptyGroundTruth("ground truth has no valid pixels")
    diff_mm = 1000.0 * (pred.depth[mask] - gt.depth[mask])
    inv_diff_km = 1000.0 * (1.0 / pred.depth[mask] - 1.0 / gt.depth[mask])
    return DepthErrorReport(
        mae_mm=float(np.mean(np.abs(diff_mm))),
        rmse_mm=float(np.sqrt(np.mean(diff_mm**2))),
        imae_per_km=float(np.mean(np.abs(inv_diff_km))),
        irmse_per_km=float(np.sqrt(np.mean(inv_diff_km**2))),
        valid_pixels=int(mask.sum()),
    )


def error_vs_distance(
    pred: DenseDepthMap, gt: DenseDepthMap, bin_edges
) -> list:
    """Absolute-error statistics per ground-truth distance bin.

    Returns one record per bin: mean |error| (m), 5th/95th percentiles and
    the fraction of valid ground-truth points falling in the bin.
    """
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or not np.all(np.diff(edges) > 0):
        raise ValueError("bin edges must be strictly increasing")
    mask = _evaluation_mask(gt)
    if not mask.any():
        raise EmptyGroundTruth("ground truth has no valid pixels")
    gt_depth = gt.depth[mask]
    abs_err = np.abs(pred.depth[mask] - gt.depth[mask])
    total = gt_depth.size
    records = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (gt_depth >= lo) & (gt_depth < hi)
        if sel.any():
            errs = abs_err[sel]
            records.append(
                {
                    "lo_m": float(lo),
                    "hi_m": float(hi),
                    "mean_abs_error_m": float(errs.mean()),
                    "p5_m": float(np.percentile(errs, 5)),
                    "p95_m": float(np.percentile(errs, 95)),
                    "fraction": float(sel.sum() / total),
                    "count": int(sel.sum()),
                }
            )
        else:
            records.append(
                {
                    "lo_m": float(lo),
                    "hi_m": float(hi),
                    "mean_abs_error_m": 0.0,
                    "p5_m": 0.0,
                    "p95_m": 0.0,
                    "fraction": 0.0,
                    "count": 0,
                }
            )
    return records


def chain(relative_poses, timestamps=None) -> Trajectory:
    """Absolute trajectory from pairwise relative poses.

    The first absolute pose is the identity and each relative pose maps
    frame t+1 coordinates into frame t.
    """
    relatives = list(relative_poses)
    if not relatives:
        raise ValueError("need at least one relative pose")
    poses = [Pose.identity()]
    for rel in relatives:
        poses.append(compose(poses[-1], rel))
    if timestamps is None:
        timestamps = np.arange(len(poses), dtype=float)
    return Trajectory(tuple(poses), timestamps)


def _check_lengths(est: Trajectory, gt: Trajectory) -> None:
    if len(est) != len(gt):
        raise LengthMismatch(f"est has {len(est)} poses, gt has {len(gt)}")


def _anchor(est: Trajectory, gt: Trajectory) -> list:
    """Re-express the estimate so its first pose coincides with the truth."""
    correction = compose(gt.poses[0], inverse(est.poses[0]))
    return [compose(correction, g) for g in est.poses]


def _ate_rms(est_poses, gt_poses) -> float:
    sq = 0.0
    for est_g, gt_g in zip(est_poses, gt_poses):
        residual = compose(inverse(gt_g), est_g).translation
        sq += float(residual @ residual)
    return math.sqrt(sq / len(gt_poses))


def ate(est: Trajectory, gt: Trajectory, align_first: bool = True) -> float:
    """Absolute trajectory error (m): RMS translational residual.

    ``align_first`` pre-composes the estimate with g_1 ghat_1^-1 so both
    trajectories start in the same frame; disable it only when the inputs
    are already expressed in a common world frame.
    """
    _check_lengths(est, gt)
    est_poses = _anchor(est, gt) if align_first else list(est.poses)
    return _ate_rms(est_poses, gt.poses)


def ate_5f(est: Trajectory, gt: Trajectory, window: int = 5) -> float:
    """RMS over all sliding windows of the window-anchored ATE."""
    _check_lengths(est, gt)
    if len(est) < window:
        raise TooShort(f"need at least {window} poses, got {len(est)}")
    sq = 0.0
    count = len(est) - window + 1
    for start in range(count):
        sub_est = Trajectory(est.poses[start : start + window], np.arange(window))
        sub_gt = Trajectory(gt.poses[start : start + window], np.arange(window))
        sq += ate(sub_est, sub_gt, align_first=True) ** 2
    return math.sqrt(sq / count)


def rpe(est: Trajectory, gt: Trajectory, delta: int = 1) -> float:
    """Relative pose error (m) over a sliding window of size ``delta``.

    Only the translational part of the estimated relative pose matters:
    the estimated relative rotation cancels out of the residual.
    """
    _check_lengths(est, gt)
    if len(est) <= delta:
        raise TooShort(f"need more than {delta} poses, got {len(est)}")
    sq = 0.0
    count = len(est) - delta
    for t in range(count):
        gt_rel = relative_pose(gt.poses[t], gt.poses[t + delta])
        est_rel = relative_pose(est.poses[t], est.poses[t + delta])
        residual = compose(inverse(gt_rel), est_rel).translation
        sq += float(residual @ residual)
    return math.sqrt(sq / count)


def rre(est: Trajectory, gt: Trajectory, delta: int = 1) -> float:
    """Relative rotation error (radians) over a sliding window."""
    _check_lengths(est, gt)
    if len(est) <= delta:
        raise TooShort(f"need more than {delta} poses, got {len(est)}")
    sq = 0.0
    count = len(est) - delta
    for t in range(count):
        gt_rel = relative_pose(gt.poses[t], gt.poses[t + delta])
        est_rel = relative_pose(est.poses[t], est.poses[t + delta])
        w = log_so3(Rotation(gt_rel.rotation.matrix.T @ est_rel.rotation.matrix))
        sq += float(w.omega @ w.omega)
    return math.sqrt(sq / count)


def save_trajectory(path, trajectory: Trajectory) -> None:
    """Plain-text trajectory: one pose per line.

    ``timestamp tx ty tz r11 r12 r13 r21 r22 r23 r31 r32 r33``, whitespace
    separated; ``#`` starts a comment.
    """
    with open(path, "w") as fh:
        fh.write("# timestamp tx ty tz r11 r12 r13 r21 r22 r23 r31 r32 r33\n")
        for ts, pose in zip(trajectory.timestamps, trajectory.poses):
            fields = [ts, *pose.translation, *pose.rotation.matrix.reshape(-1)]
            fh.write(" ".join(f"{x:.17g}" for x in fields) + "\n")


def load_trajectory(path) -> Trajectory:
    poses = []
    timestamps = []
    with open(path) as fh:
        for line_number, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 13:
                raise ValueError(
                    f"{path}:{line_number}: expected 13 fields, got {len(parts)}"
                )
            values = [float(p) for p in parts]
            timestamps.append(values[0])
            poses.append(
                Pose(
                    Rotation(np.array(values[4:]).reshape(3, 3)),
                    np.array(values[1:4]),
                )
            )
    return Trajectory(tuple(poses), np.array(timestamps))
