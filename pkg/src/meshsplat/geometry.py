"""Quaternion and rigid-transform helpers.

Quaternions are length-4 arrays ordered (w, x, y, z) and are expected to be
unit norm unless a function says otherwise. Vectorized variants accept (N, 4)
or (N, 3) arrays and are used by the hot paths.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidParameterError

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise InvalidParameterError("cannot normalize a zero quaternion")
    return q / n


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    """Unit quaternion rotating by `angle` radians about `axis`."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise InvalidParameterError("rotation axis must be nonzero")
    half = 0.5 * angle
    s = np.sin(half) / n
    return np.array([np.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product a*b; composes rotations (a after b). Broadcasts."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_matrix(q) -> np.ndarray:
    """3x3 rotation matrix for unit quaternion(s); (..., 4) -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    m[..., 0, 1] = 2.0 * (xy - wz)
    m[..., 0, 2] = 2.0 * (xz + wy)
    m[..., 1, 0] = 2.0 * (xy + wz)
    m[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    m[..., 1, 2] = 2.0 * (yz - wx)
    m[..., 2, 0] = 2.0 * (xz - wy)
    m[..., 2, 1] = 2.0 * (yz + wx)
    m[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return m


def quat_from_matrix(m) -> np.ndarray:
    """Unit quaternion for proper rotation matrix(es); (..., 3, 3) -> (..., 4).

    Shepperd's method, branch chosen per element on the largest diagonal
    term for numerical safety. Returns the hemisphere with w >= 0.
    """
    m = np.asarray(m, dtype=np.float64)
    single = m.ndim == 2
    if single:
        m = m[None]
    t = np.einsum("...ii", m)
    q = np.empty(m.shape[:-2] + (4,), dtype=np.float64)

    # candidate 0: based on trace; candidates 1..3: based on diagonal k
    diag = np.stack([m[..., 0, 0], m[..., 1, 1], m[..., 2, 2]], axis=-1)
    choice = np.where(t > 0.0, -1, np.argmax(diag, axis=-1))

    for c in (-1, 0, 1, 2):
        sel = choice == c
        if not np.any(sel):
            continue
        ms = m[sel]
        if c == -1:
            s = np.sqrt(t[sel] + 1.0) * 2.0
            q[sel, 0] = 0.25 * s
            q[sel, 1] = (ms[:, 2, 1] - ms[:, 1, 2]) / s
            q[sel, 2] = (ms[:, 0, 2] - ms[:, 2, 0]) / s
            q[sel, 3] = (ms[:, 1, 0] - ms[:, 0, 1]) / s
        else:
            i, j, k = c, (c + 1) % 3, (c + 2) % 3
            s = np.sqrt(1.0 + ms[:, i, i] - ms[:, j, j] - ms[:, k, k]) * 2.0
            q[sel, 0] = (ms[:, k, j] - ms[:, j, k]) / s
            q[sel, 1 + i] = 0.25 * s
            q[sel, 1 + j] = (ms[:, j, i] + ms[:, i, j]) / s
            q[sel, 1 + k] = (ms[:, k, i] + ms[:, i, k]) / s

    q = np.where(q[..., :1] < 0.0, -q, q)
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return q[0] if single else q


def rotate_vec(q, v) -> np.ndarray:
    """Rotate vector(s) v by quaternion(s) q."""
    return np.einsum("...ij,...j->...i", quat_to_matrix(q), np.asarray(v, dtype=np.float64))


class RigidTransform:
    """Rotation followed by translation: x -> R x + t."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation=QUAT_IDENTITY, translation=(0.0, 0.0, 0.0)):
        self.rotation = quat_normalize(rotation)
        self.translation = np.asarray(translation, dtype=np.float64).reshape(3)

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self o other: apply `other` first, then self."""
        return RigidTransform(
            quat_mul(self.rotation, other.rotation),
            self.apply(other.translation),
        )

    def inverse(self) -> "RigidTransform":
        rinv = np.array([self.rotation[0], -self.rotation[1], -self.rotation[2], -self.rotation[3]])
        return RigidTransform(rinv, -rotate_vec(rinv, self.translation))

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self.rotation}, translation={self.translation})"
