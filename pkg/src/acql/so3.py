"""Rotation helpers: skew/vee, SO(3) exp/log and quaternion orientation error.

Quaternions are numpy arrays ordered ``(w, x, y, z)`` and kept in the w >= 0
hemisphere. Rotation vectors and angular velocities live in the world frame.
"""
from __future__ import annotations

import math

import numpy as np

from acql.errors import AngleNearPi

# log branch switch and the pi guard
_SMALL_BRANCH = 1e-9
_PI_GUARD = 1e-6


def skew(v) -> np.ndarray:
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def cross(a, b) -> np.ndarray:
    """3-vector cross product without numpy's broadcasting overhead."""
    a0, a1, a2 = float(a[0]), float(a[1]), float(a[2])
    b0, b1, b2 = float(b[0]), float(b[1]), float(b[2])
    return np.array([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])


def vee(W) -> np.ndarray:
    return np.array([W[2, 1], W[0, 2], W[1, 0]], dtype=float)


def exp_rotation(w) -> np.ndarray:
    """Rodrigues formula; second-order series below 1e-8 rad."""
    w = np.asarray(w, dtype=float)
    theta = math.sqrt(float(w @ w))
    W = skew(w)
    if theta < 1e-8:
        return np.eye(3) + W + 0.5 * (W @ W)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * W + b * (W @ W)


def log_rotation(R) -> np.ndarray:
    """Rotation vector of ``R``.

    Uses the two-branch form: ``(R - R^T)/2`` when the trace term d is within
    1e-9 of one, else ``arccos(d) (R - R^T) / (2 sqrt(1 - d^2))``.

    Raises:
        AngleNearPi: if d <= -1 + 1e-6.
    """
    R = np.asarray(R, dtype=float)
    d = 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)
    if d <= -1.0 + _PI_GUARD:
        raise AngleNearPi(f"rotation angle too close to pi (d={d:.3e})")
    A = R - R.T
    if abs(1.0 - d) < _SMALL_BRANCH:
        return 0.5 * vee(A)
    d = min(d, 1.0)
    return math.acos(d) / (2.0 * math.sqrt(1.0 - d * d)) * vee(A)


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if n < 1e-12:
        raise ValueError("zero quaternion")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_mul(a, b) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_inv(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=float)


def quat_to_rot(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_rotvec(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = math.sqrt(float(w @ w))
    if theta < 1e-12:
        return quat_normalize(np.array([1.0, 0.5 * w[0], 0.5 * w[1], 0.5 * w[2]]))
    s = math.sin(0.5 * theta) / theta
    return quat_normalize(np.array([math.cos(0.5 * theta), s * w[0], s * w[1], s * w[2]]))


def quat_from_rot(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(np.array(q))


def quat_angle(q) -> float:
    q = quat_normalize(q)
    return 2.0 * math.atan2(math.sqrt(q[1] ** 2 + q[2] ** 2 + q[3] ** 2), q[0])


def quat_from_ypr(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Z-Y-X intrinsic Euler angles."""
    qz = quat_from_rotvec([0.0, 0.0, yaw])
    qy = quat_from_rotvec([0.0, pitch, 0.0])
    qx = quat_from_rotvec([roll, 0.0, 0.0])
    return quat_normalize(quat_mul(quat_mul(qz, qy), qx))


def orientation_error(qd, qa) -> np.ndarray:
    """World-frame rotation vector taking ``qa`` to ``qd``: log(R(qd * qa^-1))."""
    return log_rotation(quat_to_rot(quat_mul(qd, quat_inv(qa))))
