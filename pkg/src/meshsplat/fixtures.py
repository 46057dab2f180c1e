"""Deterministic scene generators for benchmarks, demos and tests.

`surface_asset_scene` mimics the statistics of captured splat assets:
kernels sit on object surfaces, are anisotropically flattened along the
local normal, and are sized by the local sampling density, so a fixed
camera sees footprints of a few pixels. `fog_scene` is the adversarial
volumetric counterpart used for stress testing.
"""

from __future__ import annotations

import numpy as np

from .geometry import quat_from_matrix, quat_normalize
from .sh import N_SH_COEFFS
from .splats import SplatScene


def _orthonormal_from_normal(normals: np.ndarray) -> np.ndarray:
    """Rotation matrices whose third column is the given unit normal."""
    n = normals
    helper = np.where(np.abs(n[:, :1]) < 0.9,
                      np.tile([1.0, 0.0, 0.0], (len(n), 1)),
                      np.tile([0.0, 1.0, 0.0], (len(n), 1)))
    t1 = np.cross(helper, n)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2, n], axis=2)


def surface_asset_scene(n_kernels: int = 100_000, seed: int = 7) -> SplatScene:
    """Desk-scale arrangement of spheres and a ground slab, surface-sampled."""
    rng = np.random.default_rng(seed)
    spheres = [
        ((0.0, 0.45, 0.0), 0.45),
        ((0.9, 0.3, 0.35), 0.3),
        ((-0.8, 0.25, -0.3), 0.25),
        ((0.15, 0.2, 0.85), 0.2),
    ]
    areas = np.array([4 * np.pi * r * r for _, r in spheres] + [2.4 * 2.4])
    counts = np.maximum((areas / areas.sum() * n_kernels).astype(int), 1)
    counts[-1] += n_kernels - counts.sum()

    means = []
    normals = []
    base_color = []
    for (center, radius), count in zip(spheres, counts[:-1]):
        d = rng.normal(size=(count, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        means.append(np.asarray(center) + radius * d)
        normals.append(d)
        base_color.append(np.tile(rng.uniform(0.2, 1.0, size=3), (count, 1)))
    ground = rng.uniform(-1.2, 1.2, size=(counts[-1], 2))
    means.append(np.stack([ground[:, 0], np.zeros(counts[-1]), ground[:, 1]], axis=1))
    normals.append(np.tile([0.0, 1.0, 0.0], (counts[-1], 1)))
    checker = ((np.floor(ground[:, 0] * 4) + np.floor(ground[:, 1] * 4)) % 2)
    base_color.append(np.stack([0.3 + 0.5 * checker] * 3, axis=1))

    means = np.concatenate(means)
    normals = np.concatenate(normals)
    base_color = np.concatenate(base_color)
    n = len(means)

    # kernel radius tied to the local sample spacing (sqrt(area per splat));
    # the 3-sigma support then spans 1.5..3.3 sample gaps, hole-free coverage
    spacing = np.repeat(np.sqrt(areas / counts), counts)
    tangent_scale = spacing * rng.uniform(0.5, 1.1, size=n)
    normal_scale = tangent_scale * rng.uniform(0.15, 0.35, size=n)
    scales = np.stack([tangent_scale, tangent_scale, normal_scale], axis=1)

    rot = quat_from_matrix(_orthonormal_from_normal(normals))
    # small random in-plane spin keeps the rotations generic
    spin = quat_normalize(np.stack([
        np.cos(a := rng.uniform(0, np.pi, size=n)), np.zeros(n), np.zeros(n),
        np.sin(a)], axis=1))
    from .geometry import quat_mul

    rotations = quat_mul(rot, spin)

    sh = np.zeros((n, 3, N_SH_COEFFS))
    sh[:, :, 0] = (base_color - 0.5) / 0.28209479177387814
    sh[:, :, 1:9] = rng.normal(scale=0.04, size=(n, 3, 8))

    # solid-surface assets skew opaque; translucent fringe kernels are rare
    opacities = np.where(rng.uniform(size=n) < 0.85,
                         rng.uniform(0.8, 0.995, size=n),
                         rng.uniform(0.3, 0.8, size=n))
    object_ids = np.zeros(n, dtype=np.int32)
    start = 0
    for oid, count in enumerate(counts):
        object_ids[start:start + count] = oid
        start += count
    return SplatScene(means, rotations, scales, opacities, sh, object_ids)


def fog_scene(n_kernels: int = 100_000, seed: int = 2024) -> SplatScene:
    """Volumetric stress scene: small isotropic-ish kernels filling a ball."""
    rng = np.random.default_rng(seed)
    sh = np.concatenate([rng.uniform(-0.5, 1.0, size=(n_kernels, 3, 1)),
                         rng.normal(scale=0.05, size=(n_kernels, 3, 15))], axis=2)
    return SplatScene(
        rng.normal(scale=1.2, size=(n_kernels, 3)),
        quat_normalize(rng.normal(size=(n_kernels, 4))),
        rng.uniform(0.004, 0.02, size=(n_kernels, 3)),
        rng.uniform(0.3, 1.0, size=n_kernels),
        sh,
    )
