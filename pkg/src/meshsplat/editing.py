"""Object-level scene edits: rigid+scale transforms, deletion, relabeling.

Edits return new scenes and never mutate the input; every kernel invariant
is preserved by construction (uniform positive scale, rotation stays unit).
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidParameterError, NotFoundError
from .geometry import quat_mul, quat_normalize, quat_to_matrix
from .splats import SplatScene


def _segment_mask(scene: SplatScene, object_id: int) -> np.ndarray:
    mask = scene.object_ids == int(object_id)
    if not np.any(mask):
        raise NotFoundError(f"scene has no kernels with object_id {object_id}")
    return mask


def transform_object(scene: SplatScene, object_id: int, rotation=(1.0, 0.0, 0.0, 0.0),
                     translation=(0.0, 0.0, 0.0), scale: float = 1.0,
                     pivot=None) -> SplatScene:
    """Apply mean <- pivot + s*Q*(mean - pivot) + t to one segment.

    Kernel rotations are pre-multiplied by Q and kernel scales multiply by
    the uniform factor s. The pivot defaults to the segment's mean centroid.
    """
    if scale <= 0.0:
        raise InvalidParameterError(f"uniform scale must be > 0, got {scale}")
    mask = _segment_mask(scene, object_id)
    q = quat_normalize(np.asarray(rotation, dtype=np.float64))
    t = np.asarray(translation, dtype=np.float64).reshape(3)
    if pivot is None:
        pivot = scene.means[mask].mean(axis=0)
    pivot = np.asarray(pivot, dtype=np.float64).reshape(3)

    out = scene.copy()
    rot = quat_to_matrix(q)
    out.means[mask] = pivot + scale * (scene.means[mask] - pivot) @ rot.T + t
    out.rotations[mask] = quat_mul(q, scene.rotations[mask])
    out.scales[mask] = scale * scene.scales[mask]
    return out


def delete_object(scene: SplatScene, object_id: int) -> SplatScene:
    """Remove every kernel of a segment; remaining order is stable.

    The revealed region is not filled in; the hole stays visible.
    """
    mask = _segment_mask(scene, object_id)
    return scene.select(~mask)


def relabel(scene: SplatScene, start: int, stop: int, new_object_id: int) -> SplatScene:
    """Set object_id for kernels in index range [start, stop); geometry untouched."""
    n = len(scene)
    if not (0 <= start < stop <= n):
        raise InvalidParameterError(f"index range [{start}, {stop}) invalid for {n} kernels")
    if new_object_id < 0:
        raise InvalidParameterError("object_id must be non-negative")
    out = scene.copy()
    out.object_ids[start:stop] = new_object_id
    return out
