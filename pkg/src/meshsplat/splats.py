"""Gaussian scene representation and closed-form kernel math.

A kernel's spatial weight at a point is exp(-0.5 * d^T Sigma^-1 d) with
d = x - mean and Sigma = R S S^T R^T built from the unit rotation quaternion
and the per-axis standard deviations. Sigma^-1 is always computed from the
factored form (R S^-2 R^T), never by inverting Sigma numerically, so extreme
anisotropy stays stable.

`SplatScene` stores kernels struct-of-arrays so renderers and solvers can
work on contiguous numpy buffers; `GaussianKernel` is the per-kernel view
used by the scalar API.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .geometry import quat_to_matrix
from .sh import MAX_SH_DEGREE, N_SH_COEFFS, eval_sh

QUAT_DRIFT_WARN = 1e-3


@dataclass
class GaussianKernel:
    """One anisotropic splat: mean, rotation, per-axis scale, opacity, SH color."""

    mean: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    scale: np.ndarray  # per-axis standard deviations, all > 0
    opacity: float
    sh_coeffs: np.ndarray = field(default_factory=lambda: np.zeros((3, N_SH_COEFFS)))
    object_id: int = 0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.rotation = _ingest_quaternion(np.asarray(self.rotation, dtype=np.float64).reshape(4))
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        self.opacity = float(self.opacity)
        self.sh_coeffs = _pad_sh(np.asarray(self.sh_coeffs, dtype=np.float64))
        self.object_id = int(self.object_id)
        self.validate()

    def validate(self):
        if not np.all(np.isfinite(self.mean)):
            raise InvalidParameterError("kernel mean must be finite")
        if np.any(self.scale <= 0.0):
            raise InvalidParameterError(f"scale components must be > 0, got {self.scale}")
        if not 0.0 < self.opacity <= 1.0:
            raise InvalidParameterError(f"opacity must be in (0, 1], got {self.opacity}")
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-6:
            raise InvalidParameterError("rotation quaternion must be unit norm")
        if self.object_id < 0:
            raise InvalidParameterError("object_id must be non-negative")


def _ingest_quaternion(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise InvalidParameterError("rotation quaternion must be nonzero and finite")
    if abs(n - 1.0) > QUAT_DRIFT_WARN:
        warnings.warn(f"quaternion renormalization drift {abs(n - 1.0):.3g}", stacklevel=3)
    return q / n


def _pad_sh(coeffs: np.ndarray) -> np.ndarray:
    """Zero-pad per-channel coefficient rows up to degree MAX_SH_DEGREE."""
    if coeffs.ndim != 2 or coeffs.shape[0] != 3:
        raise InvalidParameterError("sh_coeffs must have shape (3, n)")
    n = coeffs.shape[1]
    degree = int(np.sqrt(n)) - 1
    if (degree + 1) ** 2 != n or degree > MAX_SH_DEGREE:
        raise InvalidParameterError(
            f"sh_coeffs length per channel must be (L+1)^2 with L <= {MAX_SH_DEGREE}, got {n}"
        )
    if n == N_SH_COEFFS:
        return coeffs
    out = np.zeros((3, N_SH_COEFFS))
    out[:, :n] = coeffs
    return out


def covariance_from_rs(rotation, scale) -> np.ndarray:
    """Covariance Sigma = R * S * S^T * R^T from quaternion + scale stddevs.

    Eigenvalues of the result are exactly the squared scale components.
    """
    scale = np.asarray(scale, dtype=np.float64)
    if np.any(scale <= 0.0):
        raise InvalidParameterError(f"scale components must be > 0, got {scale}")
    r = quat_to_matrix(np.asarray(rotation, dtype=np.float64))
    return (r * scale[..., None, :] ** 2) @ np.swapaxes(r, -1, -2)


def inverse_covariance_from_rs(rotation, scale) -> np.ndarray:
    """Sigma^-1 = R * S^-2 * R^T, from the factored form."""
    scale = np.asarray(scale, dtype=np.float64)
    if np.any(scale <= 0.0):
        raise InvalidParameterError(f"scale components must be > 0, got {scale}")
    r = quat_to_matrix(np.asarray(rotation, dtype=np.float64))
    return (r * scale[..., None, :] ** -2) @ np.swapaxes(r, -1, -2)


def mahalanobis_sq(kernel: GaussianKernel, x) -> float:
    """(x - mean)^T Sigma^-1 (x - mean); zero iff x equals the mean."""
    d = np.asarray(x, dtype=np.float64) - kernel.mean
    inv = inverse_covariance_from_rs(kernel.rotation, kernel.scale)
    return float(d @ inv @ d)


def eval_kernel(kernel: GaussianKernel, x) -> float:
    """Spatial weight exp(-0.5 * mahalanobis_sq); in (0, 1], 1 at the mean."""
    return float(np.exp(-0.5 * mahalanobis_sq(kernel, x)))


def eval_sh_color(kernel: GaussianKernel, view_dir) -> np.ndarray:
    """View-dependent RGB in [0, 1]^3 for a unit view direction."""
    view_dir = np.asarray(view_dir, dtype=np.float64)
    if abs(np.linalg.norm(view_dir) - 1.0) > 1e-6:
        raise InvalidParameterError("view_dir must be unit norm")
    return eval_sh(kernel.sh_coeffs, view_dir)


class SplatScene:
    """Ordered collection of Gaussian kernels, stored struct-of-arrays.

    Arrays are float64 (int32 for object ids) and treated as immutable by
    renderers; editing operations produce updated copies.
    """

    __slots__ = ("means", "rotations", "scales", "opacities", "sh", "object_ids")

    def __init__(self, means, rotations, scales, opacities, sh, object_ids=None):
        self.means = np.ascontiguousarray(means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.rotations = np.ascontiguousarray(rotations, dtype=np.float64).reshape(n, 4)
        self.scales = np.ascontiguousarray(scales, dtype=np.float64).reshape(n, 3)
        self.opacities = np.ascontiguousarray(opacities, dtype=np.float64).reshape(n)
        self.sh = np.ascontiguousarray(sh, dtype=np.float64).reshape(n, 3, N_SH_COEFFS)
        if object_ids is None:
            object_ids = np.zeros(n, dtype=np.int32)
        self.object_ids = np.ascontiguousarray(object_ids, dtype=np.int32).reshape(n)
        self._normalize_rotations()
        self.validate()

    def _normalize_rotations(self):
        if len(self) == 0:
            return
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
            raise InvalidParameterError("rotation quaternions must be nonzero and finite")
        drift = np.max(np.abs(norms - 1.0))
        if drift > QUAT_DRIFT_WARN:
            warnings.warn(f"quaternion renormalization drift up to {drift:.3g}", stacklevel=3)
        # renormalize only drifted rows so copies and edits stay bit-stable
        need = np.abs(norms - 1.0) > 1e-12
        if np.any(need):
            self.rotations = self.rotations.copy()
            self.rotations[need] /= norms[need, None]

    def validate(self):
        if not np.all(np.isfinite(self.means)):
            raise InvalidParameterError("kernel means must be finite")
        if np.any(self.scales <= 0.0):
            raise InvalidParameterError("all scale components must be > 0")
        if np.any(self.opacities <= 0.0) or np.any(self.opacities > 1.0):
            raise InvalidParameterError("opacities must be in (0, 1]")
        if np.any(self.object_ids < 0):
            raise InvalidParameterError("object ids must be non-negative")

    @classmethod
    def empty(cls) -> "SplatScene":
        return cls(
            np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0),
            np.zeros((0, 3, N_SH_COEFFS)), np.zeros(0, dtype=np.int32),
        )

    @classmethod
    def from_kernels(cls, kernels) -> "SplatScene":
        kernels = list(kernels)
        if not kernels:
            return cls.empty()
        return cls(
            np.array([k.mean for k in kernels]),
            np.array([k.rotation for k in kernels]),
            np.array([k.scale for k in kernels]),
            np.array([k.opacity for k in kernels]),
            np.array([k.sh_coeffs for k in kernels]),
            np.array([k.object_id for k in kernels], dtype=np.int32),
        )

    def kernel(self, i: int) -> GaussianKernel:
        return GaussianKernel(
            self.means[i], self.rotations[i], self.scales[i],
            self.opacities[i], self.sh[i], int(self.object_ids[i]),
        )

    def __len__(self) -> int:
        return len(self.means)

    def __iter__(self):
        return (self.kernel(i) for i in range(len(self)))

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned (min, max) over kernel means; zeros for an empty scene."""
        if len(self) == 0:
            return np.zeros(3), np.zeros(3)
        return self.means.min(axis=0), self.means.max(axis=0)

    def copy(self) -> "SplatScene":
        return SplatScene(
            self.means.copy(), self.rotations.copy(), self.scales.copy(),
            self.opacities.copy(), self.sh.copy(), self.object_ids.copy(),
        )

    def select(self, mask) -> "SplatScene":
        """Sub-scene of the kernels where mask is true; order preserved."""
        mask = np.asarray(mask)
        return SplatScene(
            self.means[mask], self.rotations[mask], self.scales[mask],
            self.opacities[mask], self.sh[mask], self.object_ids[mask],
        )

    def segment_ids(self) -> np.ndarray:
        return np.unique(self.object_ids)

    def allclose(self, other: "SplatScene", tol: float = 1e-6) -> bool:
        if len(self) != len(other):
            return False
        return (
            np.allclose(self.means, other.means, atol=tol)
            and np.allclose(self.rotations, other.rotations, atol=tol)
            and np.allclose(self.scales, other.scales, atol=tol)
            and np.allclose(self.opacities, other.opacities, atol=tol)
            and np.allclose(self.sh, other.sh, atol=tol)
            and np.array_equal(self.object_ids, other.object_ids)
        )
