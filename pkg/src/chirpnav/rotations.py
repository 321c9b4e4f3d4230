"""Quaternion and SO(3) helpers.

Quaternions are scalar-first [w, x, y, z], Hamilton convention, and rotate
body vectors into the world frame: v_world = rotate(q, v_body).
"""

from __future__ import annotations

import numpy as np


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion cannot be normalized")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector ``v`` by unit quaternion ``q`` (body to world)."""
    w, x, y, z = q
    u = np.array([x, y, z])
    v = np.asarray(v, dtype=float)
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_rotvec(phi: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (radians) to quaternion."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        # second-order series keeps the map smooth through zero
        q = np.array([1.0 - angle**2 / 8.0, *(0.5 * phi)])
        return quat_normalize(q)
    axis = phi / angle
    half = 0.5 * angle
    return np.array([np.cos(half), *(np.sin(half) * axis)])


def rotvec_from_quat(q: np.ndarray) -> np.ndarray:
    """Logarithm map, inverse of :func:`quat_from_rotvec`."""
    q = quat_normalize(q)
    if q[0] < 0.0:
        q = -q
    vec = q[1:]
    s = np.linalg.norm(vec)
    if s < 1e-12:
        return 2.0 * vec
    angle = 2.0 * np.arctan2(s, q[0])
    return angle * vec / s


def quat_from_yaw(yaw: float) -> np.ndarray:
    return np.array([np.cos(yaw / 2.0), 0.0, 0.0, np.sin(yaw / 2.0)])


def quat_from_euler_zyx(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Compose yaw (about z), then pitch (y), then roll (x)."""
    qz = quat_from_yaw(yaw)
    qy = np.array([np.cos(pitch / 2.0), 0.0, np.sin(pitch / 2.0), 0.0])
    qx = np.array([np.cos(roll / 2.0), np.sin(roll / 2.0), 0.0, 0.0])
    return quat_multiply(quat_multiply(qz, qy), qx)


def euler_zyx_from_quat(q: np.ndarray) -> tuple[float, float, float]:
    """Return (roll, pitch, yaw) of a unit quaternion."""
    w, x, y, z = quat_normalize(q)
    roll = np.arctan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    sp = np.clip(2 * (w * y - z * x), -1.0, 1.0)
    pitch = np.arcsin(sp)
    yaw = np.arctan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return float(roll), float(pitch), float(yaw)


def yaw_of(q: np.ndarray) -> float:
    return euler_zyx_from_quat(q)[2]


def replace_yaw(q: np.ndarray, yaw: float) -> np.ndarray:
    """Keep roll/pitch of ``q`` but force its yaw to ``yaw``."""
    roll, pitch, _ = euler_zyx_from_quat(q)
    return quat_from_euler_zyx(roll, pitch, yaw)


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_angle_between(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle (radians) between two unit quaternions."""
    d = quat_multiply(quat_conjugate(a), b)
    return float(np.linalg.norm(rotvec_from_quat(d)))


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    return -((-np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi)


def quat_left(q: np.ndarray) -> np.ndarray:
    """4x4 matrix L with L(q) r = q x r (Hamilton product)."""
    w, x, y, z = q
    return np.array([
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ])


def quat_right(q: np.ndarray) -> np.ndarray:
    """4x4 matrix R with R(q) l = l x q (Hamilton product)."""
    w, x, y, z = q
    return np.array([
        [w, -x, -y, -z],
        [x, w, z, -y],
        [y, -z, w, x],
        [z, y, -x, w],
    ])
