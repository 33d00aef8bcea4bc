"""Differentiable rotation/pose layers: exponential map, Euler composition,
and the SE(3) logarithm used by the pose-consistency objective.

Forward passes delegate to :mod:`sdcomp.geometry`; backward passes use
closed-form Jacobians with series fallbacks near zero rotation. Every
singular-looking coefficient below multiplies matching powers of the
rotation angle, so the fallbacks only need to remove the literal 0/0.
"""

from __future__ import annotations

import math

import numpy as np

from .. import geometry
from .graph import Node, ShapeMismatch, make_op
from .ops import as_node

_E_HAT = tuple(geometry.hat(e) for e in np.eye(3))


def _rodrigues_coefficient_derivatives(theta: float) -> tuple:
    """d/dtheta of sin(t)/t and (1-cos t)/t^2, each divided by theta.

    Returns (ca, cb) with ca = (t cos t - sin t)/t^3 -> -1/3 and
    cb = (t sin t - 2(1 - cos t))/t^4 -> -1/12.
    """
    if theta < 1e-4:
        t2 = theta * theta
        ca = -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0
        cb = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0
        return ca, cb
    sin_t, cos_t = math.sin(theta), math.cos(theta)
    half_sin = math.sin(0.5 * theta)
    one_minus_cos = 2.0 * half_sin * half_sin
    ca = (theta * cos_t - sin_t) / theta**3
    cb = (theta * sin_t - 2.0 * one_minus_cos) / theta**4
    return ca, cb


def exp_map_layer(omega) -> Node:
    """Rotation matrix node from exponential coordinates (3-vector node)."""
    omega = as_node(omega)
    if omega.value.shape != (3,):
        raise ShapeMismatch(f"exp_map_layer expects a 3-vector, got {omega.value.shape}")
    w = omega.value
    value = geometry._rodrigues(w)

    def backward(g):
        theta = float(np.linalg.norm(w))
        a, b = geometry._sincish(theta)
        ca, cb = _rodrigues_coefficient_derivatives(theta)
        skew = geometry.hat(w)
        skew2 = skew @ skew
        grad = np.empty(3)
        for j in range(3):
            ej = _E_HAT[j]
            d_rot = ca * w[j] * skew + a * ej + cb * w[j] * skew2 + b * (ej @ skew + skew @ ej)
            grad[j] = float(np.sum(g * d_rot))
        omega.grad += grad

    return make_op("exp_map", value, (omega,), backward)


def _axis_rotations(angles: np.ndarray) -> tuple:
    ax, ay, az = angles
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]], dtype=float)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=float)
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]], dtype=float)
    drx = np.array([[0, 0, 0], [0, -sx, -cx], [0, cx, -sx]], dtype=float)
    dry = np.array([[-sy, 0, cy], [0, 0, 0], [-cy, 0, -sy]], dtype=float)
    drz = np.array([[-sz, -cz, 0], [cz, -sz, 0], [0, 0, 0]], dtype=float)
    return rx, ry, rz, drx, dry, drz


def euler_map_layer(angles) -> Node:
    """Rotation node R = Rz(a3) Ry(a2) Rx(a1) from a 3-vector of angles.

    Kept for the rotation-parameterization ablation; the exponential map is
    the default pathway.
    """
    angles = as_node(angles)
    if angles.value.shape != (3,):
        raise ShapeMismatch(f"euler_map_layer expects a 3-vector, got {angles.value.shape}")
    rx, ry, rz, drx, dry, drz = _axis_rotations(angles.value)
    value = rz @ ry @ rx

    def backward(g):
        angles.grad += np.array(
            [
                float(np.sum(g * (rz @ ry @ drx))),
                float(np.sum(g * (rz @ dry @ rx))),
                float(np.sum(g * (drz @ ry @ rx))),
            ]
        )

    return make_op("euler_map", value, (angles,), backward)


def _log_rotation_jacobian(r: np.ndarray, w: np.ndarray) -> np.ndarray:
    """d log(R) / dR as a (3, 3, 3) array [i, k, l] for the formula branch.

    Valid away from theta = pi; the caller falls back to finite differences
    of the forward formula in that regime.
    """
    theta = float(np.linalg.norm(w))
    skew_part = np.array(
        [r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]
    )
    if theta < 1e-2:
        t2 = theta * theta
        k = 0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0
        m = 1.0 / 12.0 + t2 / 30.0 + t2 * t2 / 126.0
    else:
        sin_t, cos_t = math.sin(theta), math.cos(theta)
        k = theta / (2.0 * sin_t)
        m = (sin_t - theta * cos_t) / (4.0 * sin_t**3)
    jac = np.zeros((3, 3, 3))
    jac[0, 2, 1] += k
    jac[0, 1, 2] -= k
    jac[1, 0, 2] += k
    jac[1, 2, 0] -= k
    jac[2, 1, 0] += k
    jac[2, 0, 1] -= k
    for i in range(3):
        jac[i] -= skew_part[i] * m * np.eye(3)
    return jac


def _log_rotation_jacobian_fd(r: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Finite-difference Jacobian of the rotation log near theta = pi.

    The closed-form branch coefficients blow up as 1/sin(theta) there; the
    formula itself stays well behaved, so differencing it directly is the
    most robust option for this rarely exercised regime.
    """
    jac = np.empty((3, 3, 3))
    for k in range(3):
        for l in range(3):
            bumped = r.copy()
            bumped[k, l] += step
            plus = geometry._log_so3_array(bumped)
            bumped[k, l] -= 2 * step
            minus = geometry._log_so3_array(bumped)
            jac[:, k, l] = (plus - minus) / (2 * step)
    return jac


def _vinv_coefficient(theta: float) -> float:
    if theta < geometry.TAYLOR_EPS:
        return 1.0 / 12.0 + theta * theta / 720.0
    half = 0.5 * theta
    return (1.0 - half * math.cos(half) / math.sin(half)) / (theta * theta)


def _vinv_coefficient_derivative_over_theta(theta: float) -> float:
    """e'(theta)/theta with e the V-inverse coefficient; -> 1/360 at zero."""
    if theta < 0.5:
        t2 = theta * theta
        return 1.0 / 360.0 + t2 / 7560.0 + t2 * t2 / 201600.0
    sin_t, cos_t = math.sin(theta), math.cos(theta)
    half_sin = math.sin(0.5 * theta)
    return (-theta * theta - theta * sin_t - 4.0 * cos_t + 4.0) / (
        -4.0 * theta**4 * half_sin * half_sin
    )


def se3_log_layer(rotation, translation) -> Node:
    """Twist node (omega, rho) from a rotation-matrix node and a translation.

    Inverse of the SE(3) exponential; used to measure how far a composed
    pose is from the identity.
    """
    rotation, translation = as_node(rotation), as_node(translation)
    if rotation.value.shape != (3, 3) or translation.value.shape != (3,):
        raise ShapeMismatch(
            f"se3_log_layer shapes: {rotation.value.shape}, {translation.value.shape}"
        )
    r = rotation.value
    t = translation.value
    w = geometry._log_so3_array(r)
    theta = float(np.linalg.norm(w))
    skew = geometry.hat(w)
    skew2 = skew @ skew
    e = _vinv_coefficient(theta)
    vinv = np.eye(3) - 0.5 * skew + e * skew2
    value = np.concatenate([w, vinv @ t])

    def backward(g):
        g_omega, g_rho = g[:3], g[3:]
        if rotation.requires_grad:
            if theta < math.pi - 1e-3:
                j_w_r = _log_rotation_jacobian(r, w)
            else:
                j_w_r = _log_rotation_jacobian_fd(r)
            ep_over_t = _vinv_coefficient_derivative_over_theta(theta)
            j_rho_w = np.empty((3, 3))
            for j in range(3):
                ej = _E_HAT[j]
                d_vinv = -0.5 * ej + ep_over_t * w[j] * skew2 + e * (ej @ skew + skew @ ej)
                j_rho_w[:, j] = d_vinv @ t
            # Chain rho -> omega -> R on top of the direct omega -> R term.
            total = np.einsum("i,ikl->kl", g_omega, j_w_r) + np.einsum(
                "i,ij,jkl->kl", g_rho, j_rho_w, j_w_r
            )
            rotation.grad += total
        if translation.requires_grad:
            translation.grad += vinv.T @ g_rho

    return make_op("se3_log", value, (rotation, translation), backward)
