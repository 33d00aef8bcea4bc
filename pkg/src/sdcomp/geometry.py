"""Rigid-body geometry: SO(3)/SE(3) maps, pose algebra, and the pinhole camera.

Conventions used throughout the package:

- rotations are 3x3 orthonormal matrices with determinant +1,
- translations and 3-D points are in meters,
- pixel coordinates are (u, v) = (column, row) with the origin at the
  center of the top-left pixel,
- axis-angle vectors returned by the logarithm are canonical, i.e.
  ``norm(omega) <= pi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Series fallback for sinc-like coefficients below this rotation angle.
TAYLOR_EPS = 1e-6
# Switch to symmetric-part axis extraction this close to pi, where the
# skew part of the rotation no longer determines the axis reliably.
_PI_BRANCH_EPS = 1e-7

_ORTHOGONALITY_TOL = 1e-9
_DET_TOL = 1e-9


class NonPositiveDepth(ValueError):
    """Point lies behind or on the camera plane; projection is undefined."""


def _as_vec3(value, name: str) -> np.ndarray:
    v = np.asarray(value, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite, got {v}")
    return v


def _det3(m: np.ndarray) -> float:
    return (
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )


@dataclass(frozen=True)
class AxisAngle:
    """Exponential coordinates of a rotation (radians)."""

    omega: np.ndarray

    def __post_init__(self):
        v = _as_vec3(self.omega, "omega")
        v.setflags(write=False)
        object.__setattr__(self, "omega", v)

    @property
    def angle(self) -> float:
        return float(np.linalg.norm(self.omega))


@dataclass(frozen=True)
class Rotation:
    """Element of SO(3), stored as a 3x3 matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("rotation matrix must be finite")
        err = np.linalg.norm(m.T @ m - np.eye(3))
        if err >= _ORTHOGONALITY_TOL:
            raise ValueError(f"matrix is not orthogonal: ||R^T R - I|| = {err:.3e}")
        det = _det3(m)
        if abs(det - 1.0) > _DET_TOL:
            raise ValueError(f"matrix determinant {det} is not +1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.eye(3))


@dataclass(frozen=True)
class Pose:
    """Rigid transform in SE(3): x -> R x + t."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        t = _as_vec3(self.translation, "translation")
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(Rotation.identity(), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix
        m[:3, 3] = self.translation
        return m

    def apply(self, point) -> np.ndarray:
        """Transform a 3-D point."""
        return self.rotation.matrix @ _as_vec3(point, "point") + self.translation


@dataclass(frozen=True)
class Twist:
    """Element of se(3): rotational part in radians, translational in meters."""

    rotational: np.ndarray
    translational: np.ndarray

    def __post_init__(self):
        w = _as_vec3(self.rotational, "rotational")
        v = _as_vec3(self.translational, "translational")
        w.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "rotational", w)
        object.__setattr__(self, "translational", v)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rotational, self.translational])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def hat(omega) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector: hat(w) @ v == cross(w, v)."""
    w = _as_vec3(omega, "omega")
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def _vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def _sincish(theta: float) -> tuple[float, float]:
    """Coefficients sin(t)/t and (1 - cos t)/t^2.

    (1 - cos t) is evaluated as 2 sin^2(t/2) so the quotient keeps full
    relative precision for small t; the series below TAYLOR_EPS removes the
    0/0 at t = 0.
    """
    if theta < TAYLOR_EPS:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0
    half_sin = math.sin(0.5 * theta)
    return math.sin(theta) / theta, 2.0 * half_sin * half_sin / (theta * theta)


def _rodrigues(w: np.ndarray) -> np.ndarray:
    """exp(hat(w)) as a plain matrix (no Rotation validation)."""
    theta = float(np.linalg.norm(w))
    a, b = _sincish(theta)
    skew = hat(w)
    return np.eye(3) + a * skew + b * (skew @ skew)


def exp_so3(omega) -> Rotation:
    """Exponential map so(3) -> SO(3) via the Rodrigues formula."""
    w = omega.omega if isinstance(omega, AxisAngle) else _as_vec3(omega, "omega")
    return Rotation(_rodrigues(w))


def _log_so3_array(r: np.ndarray) -> np.ndarray:
    trace = r[0, 0] + r[1, 1] + r[2, 2]
    cos_theta = min(1.0, max(-1.0, 0.5 * (trace - 1.0)))
    theta = math.acos(cos_theta)
    skew_part = _vee(r)
    if theta < TAYLOR_EPS:
        return 0.5 * (1.0 + theta * theta / 6.0) * skew_part
    if theta < math.pi - _PI_BRANCH_EPS:
        return (theta / (2.0 * math.sin(theta))) * skew_part
    # Near pi the skew part vanishes; recover the axis from the symmetric
    # part, whose diagonal is dominated by the outer product n n^T.
    outer = (0.5 * (r + r.T) - cos_theta * np.eye(3)) / (1.0 - cos_theta)
    k = int(np.argmax(np.diag(outer)))
    axis = outer[:, k] / math.sqrt(max(outer[k, k], np.finfo(float).tiny))
    axis = axis / np.linalg.norm(axis)
    alignment = float(skew_part @ axis)
    if alignment < -1e-9:
        axis = -axis
    elif abs(alignment) <= 1e-9:
        # Rotation by exactly pi: both signs are valid, pick the one whose
        # largest-magnitude component is non-negative.
        j = int(np.argmax(np.abs(axis)))
        if axis[j] < 0:
            axis = -axis
    return theta * axis


def log_so3(r: Rotation) -> AxisAngle:
    """Logarithmic map SO(3) -> so(3); result canonical with angle <= pi."""
    return AxisAngle(_log_so3_array(r.matrix))


def _left_jacobian(w: np.ndarray) -> np.ndarray:
    """V(w) with T = V(w) rho for exp on SE(3)."""
    theta = float(np.linalg.norm(w))
    _, b = _sincish(theta)
    if theta < TAYLOR_EPS:
        c = 1.0 / 6.0 - theta * theta / 120.0
    else:
        c = (theta - math.sin(theta)) / theta**3
    skew = hat(w)
    return np.eye(3) + b * skew + c * (skew @ skew)


def _left_jacobian_inverse(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    if theta < TAYLOR_EPS:
        e = 1.0 / 12.0 + theta * theta / 720.0
    else:
        half = 0.5 * theta
        # 1/t^2 - cot(t/2)/(2t); finite at pi where cos(t/2) = 0.
        e = (1.0 - half * math.cos(half) / math.sin(half)) / (theta * theta)
    skew = hat(w)
    return np.eye(3) - 0.5 * skew + e * (skew @ skew)


def exp_se3(xi: Twist) -> Pose:
    """Exponential map se(3) -> SE(3)."""
    r = _rodrigues(xi.rotational)
    t = _left_jacobian(xi.rotational) @ xi.translational
    return Pose(Rotation(r), t)


def log_se3(g: Pose) -> Twist:
    """Logarithmic map SE(3) -> se(3), inverse of :func:`exp_se3`."""
    w = _log_so3_array(g.rotation.matrix)
    rho = _left_jacobian_inverse(w) @ g.translation
    return Twist(w, rho)


def compose(a: Pose, b: Pose) -> Pose:
    """Composition a @ b: apply b first, then a."""
    r = a.rotation.matrix @ b.rotation.matrix
    t = a.rotation.matrix @ b.translation + a.translation
    return Pose(Rotation(r), t)


def inverse(g: Pose) -> Pose:
    rt = g.rotation.matrix.T
    return Pose(Rotation(rt), -(rt @ g.translation))


def relative_pose(a: Pose, b: Pose) -> Pose:
    """g_ab = a^-1 b; maps coordinates in frame b to frame a."""
    return compose(inverse(a), b)


def project(intrinsics: CameraIntrinsics, point) -> np.ndarray:
    """Perspective projection of a camera-frame point to pixel coordinates."""
    p = _as_vec3(point, "point")
    if p[2] <= 1e-8:
        raise NonPositiveDepth(f"cannot project point with z = {p[2]}")
    return np.array(
        [
            intrinsics.fx * p[0] / p[2] + intrinsics.cx,
            intrinsics.fy * p[1] / p[2] + intrinsics.cy,
        ]
    )


def backproject(intrinsics: CameraIntrinsics, pixel, depth: float) -> np.ndarray:
    """Lift a pixel at the given depth to a camera-frame 3-D point."""
    x = np.asarray(pixel, dtype=float)
    if x.shape != (2,):
        raise ValueError(f"pixel must be a 2-vector, got shape {x.shape}")
    if depth <= 0:
        raise NonPositiveDepth(f"cannot backproject with depth {depth}")
    return depth * np.array(
        [
            (x[0] - intrinsics.cx) / intrinsics.fx,
            (x[1] - intrinsics.cy) / intrinsics.fy,
            1.0,
        ]
    )
