import numpy as np
import pytest

from meshsplat.camera import Camera
from meshsplat.geometry import quat_normalize
from meshsplat.sh import N_SH_COEFFS
from meshsplat.splats import SplatScene


def random_scene(n, seed=0, spread=1.0, scale_range=(0.02, 0.12), n_objects=1,
                 sh_degree=3, center=(0.0, 0.0, 0.0)):
    """Well-formed random scene used across rendering/meshing/binding tests."""
    rng = np.random.default_rng(seed)
    means = rng.normal(scale=spread, size=(n, 3)) + np.asarray(center)
    rotations = quat_normalize(rng.normal(size=(n, 4)))
    scales = rng.uniform(*scale_range, size=(n, 3))
    opacities = rng.uniform(0.2, 1.0, size=n)
    sh = np.zeros((n, 3, N_SH_COEFFS))
    sh[:, :, 0] = rng.uniform(-0.8, 1.2, size=(n, 3))
    if sh_degree > 0:
        hi = (sh_degree + 1) ** 2
        sh[:, :, 1:hi] = rng.normal(scale=0.08, size=(n, 3, hi - 1))
    object_ids = rng.integers(0, n_objects, size=n).astype(np.int32)
    return SplatScene(means, rotations, scales, opacities, sh, object_ids)


def default_camera(resolution=(128, 128), eye=(0.0, 0.0, -4.0), target=(0.0, 0.0, 0.0),
                   fov=55.0):
    return Camera.look_at(eye, target, fov_deg=fov, resolution=resolution)


def cloth_over_blob_scene(n=10, size=0.9, height=1.0, seed=42):
    """Deterministic fixture: segment 1 is a sheet of splats hanging above a
    round blob (segment 0). The sheet is what gets meshed, bound and pinned."""
    rng = np.random.default_rng(seed)
    kernels = []
    xs = np.linspace(-size / 2, size / 2, n)
    for z in xs:
        for x in xs:
            sh = np.zeros((3, 16))
            sh[:, 0] = [0.8 + 0.3 * x, 0.2, 0.2 + 0.3 * z]
            kernels.append((np.array([x, height, z]), sh, 1))
    for _ in range(30):
        p = rng.normal(scale=0.15, size=3) * np.array([1, 0.6, 1])
        sh = np.zeros((3, 16))
        sh[:, 0] = [0.1, 0.5 + 0.2 * p[0], 0.9]
        kernels.append((p + np.array([0, 0.25, 0]), sh, 0))

    from meshsplat.splats import GaussianKernel

    spacing = size / (n - 1)
    return SplatScene.from_kernels([
        GaussianKernel(pos, quat_normalize(rng.normal(size=4)),
                       [spacing * 0.7] * 3, 0.9, sh, oid)
        for pos, sh, oid in kernels
    ])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session", autouse=True)
def _warm_numba():
    """Compile the hot kernels once so timing-sensitive tests see warm code."""
    from meshsplat.meshing import density_at
    from meshsplat.render import render_fast, render_oracle

    scene = random_scene(4, seed=99)
    cam = default_camera(resolution=(32, 32))
    render_fast(scene, cam)
    render_oracle(scene, cam)
    density_at(scene, (0.0, 0.0, 0.0))
