"""Synthetic Lambertian scenes for desk-scale training and warp oracles.

Frames are ray-cast against textured planes and axis-aligned boxes. Texture
color is a smooth function of the world-space surface point, so it is view
independent by construction: warping a neighbor frame with the true depth
and pose reproduces the center frame up to bilinear interpolation error
and occlusion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import CameraIntrinsics, Pose, Twist, exp_se3, relative_pose
from ..scaffold import DenseDepthMap, SparseDepthMap
from .sampling import subsample_sparse


@dataclass(frozen=True)
class Texture:
    """Smooth additive-sinusoid color field over world coordinates."""

    base: np.ndarray  # (3,)
    amplitudes: np.ndarray  # (3, waves)
    frequencies: np.ndarray  # (waves, 3) cycles per meter
    phases: np.ndarray  # (3, waves)

    @classmethod
    def random(cls, rng: np.random.Generator, waves: int = 4) -> "Texture":
        """Texture with enough contrast and frequency content to localize
        surfaces photometrically, while staying smooth at the pixel scale."""
        return cls(
            base=rng.uniform(0.3, 0.7, 3),
            amplitudes=rng.uniform(0.05, 0.12, (3, waves)),
            frequencies=rng.uniform(0.3, 1.6, (waves, 3)),
            phases=rng.uniform(0, 2 * np.pi, (3, waves)),
        )

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Colors (..., 3) for world points (..., 3)."""
        angle = 2 * np.pi * (points @ self.frequencies.T)  # (..., waves)
        waves = np.sin(angle[..., None, :] + self.phases)  # (..., 3, waves)
        out = self.base + (self.amplitudes * waves).sum(axis=-1)
        return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class WallPlane:
    """Infinite plane z = z0 in world coordinates."""

    z0: float
    texture: Texture

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        dz = directions[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(dz) > 1e-12, (self.z0 - origins[..., 2]) / dz, np.inf)
        return np.where(t > 1e-9, t, np.inf)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in world coordinates."""

    min_corner: np.ndarray
    max_corner: np.ndarray
    texture: Texture

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / directions
        t_lo = (self.min_corner - origins) * inv
        t_hi = (self.max_corner - origins) * inv
        t_near = np.minimum(t_lo, t_hi).max(axis=-1)
        t_far = np.maximum(t_lo, t_hi).min(axis=-1)
        hit = (t_near <= t_far) & (t_near > 1e-9)
        return np.where(hit, t_near, np.inf)


@dataclass(frozen=True)
class SceneConfig:
    """Scene geometry, camera path and noise levels for the generator.

    The camera sways back and forth along x (and in its rotation) with a
    triangle-wave profile of ``sway_period`` frames per half cycle while
    drifting slowly along y and z, so arbitrarily long sequences keep the
    scene in view without ever retracing an exact pose.
    """

    intrinsics: CameraIntrinsics
    objects: tuple
    step: Twist  # per-frame sway (rotation, x) and drift (y, z) magnitudes
    sway_period: int = 10
    sparse_density: float = 0.005
    rgb_noise: float = 0.0
    depth_noise: float = 0.0

    @classmethod
    def default(cls, width: int = 64, height: int = 64, seed: int = 0) -> "SceneConfig":
        """A textured back wall and a clutter of boxes at varied depths.

        The depth discontinuities make piecewise-planar interpolation of a
        handful of sparse points genuinely coarse, which is the regime the
        refinement network is for.
        """
        rng = np.random.default_rng(seed)
        intrinsics = CameraIntrinsics(
            fx=float(width), fy=float(width), cx=(width - 1) / 2.0,
            cy=(height - 1) / 2.0, width=width, height=height,
        )
        objects = [WallPlane(z0=5.0, texture=Texture.random(rng))]
        for _ in range(5):
            center_z = rng.uniform(1.6, 3.6)
            center = np.array(
                [rng.uniform(-1.4, 1.4), rng.uniform(-1.2, 1.2), center_z]
            )
            half = np.array(
                [rng.uniform(0.25, 0.6), rng.uniform(0.25, 0.6), rng.uniform(0.3, 0.6)]
            )
            objects.append(
                Box(center - half, center + half, Texture.random(rng))
            )
        step = Twist(np.array([0.0, 0.004, 0.001]), np.array([0.06, 0.008, 0.004]))
        return cls(intrinsics=intrinsics, objects=tuple(objects), step=step)

    def camera_pose(self, index: int) -> Pose:
        """Camera-to-world pose of frame ``index`` along the path."""
        cycle = 2 * self.sway_period
        phase = index % cycle
        tri = phase if phase <= self.sway_period else cycle - phase
        rotational = self.step.rotational * tri
        translational = np.array(
            [
                self.step.translational[0] * tri,
                self.step.translational[1] * index,
                self.step.translational[2] * index,
            ]
        )
        return exp_se3(Twist(rotational, translational))


def render_frame(scene: SceneConfig, cam_pose: Pose, rng=None):
    """Ray-cast one frame: returns ((3, H, W) RGB, (H, W) depth in meters).

    Depth is the camera-frame z of the nearest hit; every ray must hit an
    object (scenes include a back wall), otherwise rendering fails.
    """
    k = scene.intrinsics
    uu, vv = np.meshgrid(np.arange(k.width, dtype=float), np.arange(k.height, dtype=float))
    rays_cam = np.stack(
        [(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=-1
    )
    rot = cam_pose.rotation.matrix
    origin = cam_pose.translation
    rays_world = rays_cam @ rot.T
    origins = np.broadcast_to(origin, rays_world.shape)

    depth = np.full((k.height, k.width), np.inf)
    owner = np.full((k.height, k.width), -1, dtype=int)
    for idx, obj in enumerate(scene.objects):
        t = obj.intersect(origins, rays_world)
        closer = t < depth
        depth = np.where(closer, t, depth)
        owner[closer] = idx

    if not np.all(np.isfinite(depth)):
        raise ValueError("some rays miss the scene; add a background plane")

    points = origins + depth[..., None] * rays_world
    rgb = np.zeros((k.height, k.width, 3))
    for idx, obj in enumerate(scene.objects):
        sel = owner == idx
        if sel.any():
            rgb[sel] = obj.texture.sample(points[sel])

    if rng is not None and scene.rgb_noise > 0:
        rgb = np.clip(rgb + rng.normal(0, scene.rgb_noise, rgb.shape), 0, 1)
    if rng is not None and scene.depth_noise > 0:
        depth = np.maximum(depth + rng.normal(0, scene.depth_noise, depth.shape), 1e-3)
    return rgb.transpose(2, 0, 1), depth


@dataclass(frozen=True)
class SyntheticTriplet:
    """One rendered training sample with its supervision-free extras."""

    images: tuple  # (prev, curr, next) as (3, H, W) arrays
    depth_curr: DenseDepthMap
    sparse: SparseDepthMap
    pose_prev: Pose  # g_{tau t} for tau = t-1: center-frame points in prev frame
    pose_next: Pose
    intrinsics: CameraIntrinsics


def render_triplet(scene: SceneConfig, index: int, seed: int = 0) -> SyntheticTriplet:
    """Frames (index, index+1, index+2) as a (prev, curr, next) sample."""
    noise_rng = np.random.default_rng(seed * 7919 + index)
    cams = [scene.camera_pose(index + k) for k in range(3)]
    frames = [render_frame(scene, cam, rng=noise_rng) for cam in cams]
    depth = DenseDepthMap(frames[1][1], np.ones_like(frames[1][1], dtype=bool))
    sparse = subsample_sparse(depth, scene.sparse_density, seed=seed * 104729 + index)
    return SyntheticTriplet(
        images=tuple(f[0] for f in frames),
        depth_curr=depth,
        sparse=sparse,
        pose_prev=relative_pose(cams[0], cams[1]),
        pose_next=relative_pose(cams[2], cams[1]),
        intrinsics=scene.intrinsics,
    )
