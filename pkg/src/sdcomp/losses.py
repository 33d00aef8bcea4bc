"""The four-term unsupervised training objective.

Photometric consistency with view synthesis from temporally adjacent
frames, sparse-depth consistency on the measurement support, forward /
backward pose consistency through the SE(3) logarithm, and edge-aware
smoothness. Ground-truth depth never enters any term; it is consumed only
by the evaluation metrics.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import diffgraph as dg
from .geometry import CameraIntrinsics, Pose
from .scaffold import SparseDepthMap

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

# Transformed points with camera-frame depth at or below this are treated
# as behind the camera and masked out of the photometric term.
MIN_WARP_DEPTH = 1e-8


class EmptyMask(ValueError):
    """No valid pixels to average over; degenerate pose, depth, or support."""


@dataclass(frozen=True)
class LossWeights:
    """Weights of the training objective and its photometric sub-terms."""

    w_ph: float = 1.00
    w_co: float = 0.20
    w_st: float = 0.40
    w_sz: float = 0.20
    w_pc: float = 0.10
    w_sm: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")

    @classmethod
    def kitti(cls) -> "LossWeights":
        return cls()

    @classmethod
    def void(cls) -> "LossWeights":
        return cls(w_sz=1.00, w_sm=0.10)

    @classmethod
    def from_config(cls, path) -> "LossWeights":
        """Load weights from a TOML or INI file.

        Keys match the field names; they may live at the top level or under
        a ``[weights]`` section/table.
        """
        path = Path(path)
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
            section = data.get("weights", data)
        else:
            parser = configparser.ConfigParser()
            parser.read(path)
            name = "weights" if parser.has_section("weights") else parser.default_section
            section = {k: float(v) for k, v in parser[name].items()}
        known = {f.name for f in fields(cls)}
        values = {k: float(v) for k, v in section.items() if k in known}
        return cls(**values)


@dataclass(frozen=True)
class FrameTriplet:
    """A center frame with its two temporal neighbors and sparse depth.

    Images are (3, H, W) float arrays in [0, 1].
    """

    image_prev: np.ndarray
    image_curr: np.ndarray
    image_next: np.ndarray
    sparse: SparseDepthMap
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        for name in ("image_prev", "image_curr", "image_next"):
            img = np.asarray(getattr(self, name), dtype=float)
            if img.ndim != 3 or img.shape[0] != 3:
                raise ValueError(f"{name} must be (3, H, W), got {img.shape}")
            if img.min() < -1e-9 or img.max() > 1 + 1e-9:
                raise ValueError(f"{name} must be normalized to [0, 1]")
            object.__setattr__(self, name, img)
        shape = self.image_curr.shape
        if self.image_prev.shape != shape or self.image_next.shape != shape:
            raise ValueError("triplet images must share one shape")
        if (self.sparse.height, self.sparse.width) != shape[1:]:
            raise ValueError("sparse map size must match the images")
        if (self.intrinsics.height, self.intrinsics.width) != shape[1:]:
            raise ValueError("intrinsics size must match the images")

    @property
    def height(self) -> int:
        return self.image_curr.shape[1]

    @property
    def width(self) -> int:
        return self.image_curr.shape[2]


@dataclass(frozen=True)
class PoseNodes:
    """A relative pose in the graph: rotation (3, 3) and translation (3,)."""

    rotation: dg.Node
    translation: dg.Node

    @classmethod
    def from_pose(cls, pose: Pose) -> "PoseNodes":
        return cls(
            dg.constant(pose.rotation.matrix), dg.constant(pose.translation)
        )


@dataclass(frozen=True)
class PosePair:
    """Relative poses between the center frame t and one neighbor tau.

    ``tau_from_t`` maps t-frame points into the neighbor frame and drives
    the photometric warp; ``t_from_tau`` is the reverse prediction used by
    the pose-consistency term (None when poses come from odometry and the
    term is moot).
    """

    tau_from_t: PoseNodes
    t_from_tau: Optional[PoseNodes] = None


def _pixel_rays(intrinsics: CameraIntrinsics) -> tuple:
    uu, vv = np.meshgrid(
        np.arange(intrinsics.width, dtype=float),
        np.arange(intrinsics.height, dtype=float),
    )
    ray_x = (uu - intrinsics.cx) / intrinsics.fx
    ray_y = (vv - intrinsics.cy) / intrinsics.fy
    return ray_x[None, None], ray_y[None, None]


def reconstruct(image_tau, depth, pose: PoseNodes, intrinsics: CameraIntrinsics):
    """Warp a neighbor frame into the center view through predicted depth.

    Backprojects every pixel of the center frame at ``depth``, moves it by
    the relative pose and samples ``image_tau`` bilinearly at the
    reprojection. Returns the synthesized image and a constant validity
    mask, false where the reprojection leaves the image or the transformed
    depth is non-positive.
    """
    image_tau = dg.as_node(image_tau)
    depth = dg.as_node(depth)
    ray_x, ray_y = _pixel_rays(intrinsics)

    px = dg.mul(depth, dg.constant(ray_x))
    py = dg.mul(depth, dg.constant(ray_y))
    pz = depth
    r = [[dg.getitem(pose.rotation, (i, j)) for j in range(3)] for i in range(3)]
    t = [dg.getitem(pose.translation, (i,)) for i in range(3)]
    cx = dg.add(dg.add(dg.mul(r[0][0], px), dg.mul(r[0][1], py)), dg.add(dg.mul(r[0][2], pz), t[0]))
    cy = dg.add(dg.add(dg.mul(r[1][0], px), dg.mul(r[1][1], py)), dg.add(dg.mul(r[1][2], pz), t[1]))
    cz = dg.add(dg.add(dg.mul(r[2][0], px), dg.mul(r[2][1], py)), dg.add(dg.mul(r[2][2], pz), t[2]))

    cz_safe = dg.clamp(cz, lo=MIN_WARP_DEPTH)
    u = dg.add(dg.mul(dg.div(cx, cz_safe), intrinsics.fx), intrinsics.cx)
    v = dg.add(dg.mul(dg.div(cy, cz_safe), intrinsics.fy), intrinsics.cy)
    grid = dg.concat([u, v], axis=1)

    sampled, in_bounds = dg.grid_sample_bilinear(image_tau, grid)
    in_front = (cz.value > MIN_WARP_DEPTH).astype(np.float64)
    mask = dg.constant(in_bounds.value * in_front)
    warped = dg.mul(sampled, mask)
    return warped, mask


def _masked_mean(per_pixel: dg.Node, mask: dg.Node) -> dg.Node:
    count = float(mask.value.sum())
    if count == 0:
        raise EmptyMask("no valid reprojections to average over")
    return dg.div(dg.sum_(dg.mul(per_pixel, mask)), count)


def photometric_loss(
    triplet: FrameTriplet,
    depth: dg.Node,
    poses: Mapping[str, PoseNodes],
    weights: LossWeights,
) -> dg.Node:
    """Masked photometric residual against both temporal neighbors.

    Per pixel: w_co * |I_t - warped| + w_st * (1 - SSIM(I_t, warped)), both
    averaged over RGB. Each neighbor contributes the mean over its own
    valid-mask pixels, which reduces to the plain per-pixel average when
    nothing is masked. Invalid reprojections are treated as absent evidence:
    before the residuals are formed, masked pixels of the warped image are
    replaced by the center frame so that SSIM windows of nearby valid pixels
    are not poisoned by the zero fill.
    """
    image_curr = dg.constant(triplet.image_curr[None])
    neighbors = {"prev": triplet.image_prev, "next": triplet.image_next}
    total = None
    for tau, pose in poses.items():
        warped, mask = reconstruct(
            dg.constant(neighbors[tau][None]), depth, pose, triplet.intrinsics
        )
        neutral = dg.constant((1.0 - mask.value) * triplet.image_curr[None])
        warped = dg.add(warped, neutral)
        l1 = dg.mean(dg.abs_(dg.sub(image_curr, warped)), axis=1)
        dssim = dg.mean(dg.sub(1.0, dg.ssim3(image_curr, warped)), axis=1)
        per_pixel = dg.add(dg.mul(l1, weights.w_co), dg.mul(dssim, weights.w_st))
        term = _masked_mean(per_pixel, dg.constant(mask.value[:, 0]))
        total = term if total is None else dg.add(total, term)
    return total


def sparse_depth_loss(depth: dg.Node, zs: SparseDepthMap) -> dg.Node:
    """Mean absolute deviation from the sparse measurements on their support."""
    if len(zs) == 0:
        raise EmptyMask("sparse depth map is empty")
    if depth.value.ndim != 4 or depth.value.shape[:2] != (1, 1):
        raise dg.ShapeMismatch(f"expected (1, 1, H, W) depth, got {depth.value.shape}")
    support = np.zeros((1, 1, zs.height, zs.width))
    target = np.zeros((1, 1, zs.height, zs.width))
    for u, v, z in zs.points:
        support[0, 0, int(round(v)), int(round(u))] = 1.0
        target[0, 0, int(round(v)), int(round(u))] = z
    residual = dg.mul(dg.abs_(dg.sub(depth, dg.constant(target))), dg.constant(support))
    return dg.div(dg.sum_(residual), float(support.sum()))


def pose_consistency_loss(
    g_forward: PoseNodes, g_backward: PoseNodes, rotation_only: bool = False
) -> dg.Node:
    """Squared norm of log(g_forward . g_backward).

    Zero exactly when the backward prediction is the inverse of the forward
    one. ``rotation_only`` restricts the penalty to the rotational part of
    the twist.
    """
    rot = dg.matmul(g_forward.rotation, g_backward.rotation)
    trans = dg.add(
        dg.matmul(g_forward.rotation, g_backward.translation), g_forward.translation
    )
    twist = dg.se3_log_layer(rot, trans)
    if rotation_only:
        twist = dg.getitem(twist, slice(0, 3))
    return dg.sum_(dg.square(twist))


def smoothness_loss(depth: dg.Node, image) -> dg.Node:
    """Edge-aware first-order smoothness of the predicted depth.

    Forward differences along each axis (last column/row excluded), each
    weighted by exp(-|image gradient|) with the image gradient averaged
    over channels, normalized by the full pixel count.
    """
    image_value = image.value if isinstance(image, dg.Node) else np.asarray(image, float)
    if image_value.ndim == 3:
        image_value = image_value[None]
    if depth.value.ndim != 4 or image_value.shape[2:] != depth.value.shape[2:]:
        raise dg.ShapeMismatch(
            f"depth {depth.value.shape} and image {image_value.shape} disagree"
        )
    grad_x = np.abs(np.diff(image_value, axis=3)).mean(axis=1, keepdims=True)
    grad_y = np.abs(np.diff(image_value, axis=2)).mean(axis=1, keepdims=True)
    lambda_x = dg.constant(np.exp(-grad_x))
    lambda_y = dg.constant(np.exp(-grad_y))

    dz_x = dg.sub(
        dg.getitem(depth, np.s_[:, :, :, 1:]), dg.getitem(depth, np.s_[:, :, :, :-1])
    )
    dz_y = dg.sub(
        dg.getitem(depth, np.s_[:, :, 1:, :]), dg.getitem(depth, np.s_[:, :, :-1, :])
    )
    term_x = dg.sum_(dg.mul(dg.abs_(dz_x), lambda_x))
    term_y = dg.sum_(dg.mul(dg.abs_(dz_y), lambda_y))
    return dg.div(dg.add(term_x, term_y), float(depth.value.size))


def total_loss(
    triplet: FrameTriplet,
    depth: dg.Node,
    poses: Mapping[str, PosePair],
    weights: LossWeights,
) -> dg.Node:
    """Weighted sum of the four objective terms.

    The pose-consistency term is accumulated over both temporal directions
    and skipped for neighbors without a backward prediction (odometry-pose
    training). Terms with zero weight are not built at all.
    """
    terms = []
    if weights.w_ph > 0:
        forward_poses = {tau: pair.tau_from_t for tau, pair in poses.items()}
        terms.append(dg.mul(photometric_loss(triplet, depth, forward_poses, weights), weights.w_ph))
    if weights.w_sz > 0:
        terms.append(dg.mul(sparse_depth_loss(depth, triplet.sparse), weights.w_sz))
    if weights.w_pc > 0:
        for pair in poses.values():
            if pair.t_from_tau is not None:
                terms.append(
                    dg.mul(pose_consistency_loss(pair.tau_from_t, pair.t_from_tau), weights.w_pc)
                )
    if weights.w_sm > 0:
        terms.append(
            dg.mul(smoothness_loss(depth, dg.constant(triplet.image_curr[None])), weights.w_sm)
        )
    if not terms:
        return dg.constant(np.asarray(0.0))
    out = terms[0]
    for term in terms[1:]:
        out = dg.add(out, term)
    return out
