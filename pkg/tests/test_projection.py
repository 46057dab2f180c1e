import numpy as np
import pytest

from meshsplat.camera import (LOW_PASS_FLOOR, Camera, project_kernel,
                              project_scene)
from meshsplat.errors import InvalidParameterError
from meshsplat.geometry import RigidTransform
from meshsplat.splats import GaussianKernel, SplatScene

IDENTITY_Q = (1.0, 0.0, 0.0, 0.0)


def _identity_camera(fx=100.0, fy=100.0, cx=0.0, cy=0.0, res=(64, 64)):
    return Camera(RigidTransform(), (fx, fy), (cx, cy), res)


class TestProjectKernel:
    def test_on_axis_jacobian_case(self):
        # fx=fy=100, isotropic 0.1 at depth 5: cov2d = (100/5)^2 * 0.01 * I = 4I
        cam = _identity_camera()
        k = GaussianKernel([0, 0, 5], IDENTITY_Q, [0.1, 0.1, 0.1], 0.9)
        p = project_kernel(k, cam, lp_floor=0.0)
        np.testing.assert_allclose(p.pixel_mean, [0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(p.cov2d, 4.0 * np.eye(2), atol=1e-9)
        assert p.view_depth == pytest.approx(5.0)

    def test_depth_scaling_law(self):
        cam = _identity_camera()
        k10 = GaussianKernel([0, 0, 10], IDENTITY_Q, [0.1, 0.1, 0.1], 0.9)
        p = project_kernel(k10, cam, lp_floor=0.0)
        np.testing.assert_allclose(p.cov2d, 1.0 * np.eye(2), atol=1e-9)
        rng = np.random.default_rng(7)
        for _ in range(25):
            z = rng.uniform(1.0, 50.0)
            kz = GaussianKernel([0, 0, z], IDENTITY_Q, [0.1, 0.1, 0.1], 0.9)
            pz = project_kernel(kz, cam, lp_floor=0.0)
            expected = (100.0 / z) ** 2 * 0.01 * np.eye(2)
            np.testing.assert_allclose(pz.cov2d, expected, atol=1e-9)

    def test_behind_camera_culled(self):
        cam = _identity_camera()
        k = GaussianKernel([0, 0, -2], IDENTITY_Q, [0.1, 0.1, 0.1], 0.9)
        assert project_kernel(k, cam) is None
        near = GaussianKernel([0, 0, 0.005], IDENTITY_Q, [0.1, 0.1, 0.1], 0.9)
        assert project_kernel(near, cam) is None  # z <= near_clip

    def test_offscreen_culled(self):
        cam = Camera(RigidTransform(), (100.0, 100.0), (32.0, 32.0), (64, 64))
        k = GaussianKernel([50, 0, 5], IDENTITY_Q, [0.05, 0.05, 0.05], 0.9)
        assert project_kernel(k, cam) is None

    def test_low_pass_floor_applied_by_default(self):
        cam = _identity_camera()
        k = GaussianKernel([0, 0, 5], IDENTITY_Q, [0.1, 0.1, 0.1], 0.9)
        p = project_kernel(k, cam)
        np.testing.assert_allclose(p.cov2d, (4.0 + LOW_PASS_FLOOR) * np.eye(2),
                                   atol=1e-9)

    def test_off_axis_jacobian_matches_finite_differences(self):
        # oracle: numerically differentiate the pinhole map at the mean
        cam = _identity_camera(fx=120.0, fy=80.0, cx=32.0, cy=32.0)
        mean = np.array([0.8, -0.5, 4.0])
        k = GaussianKernel(mean, IDENTITY_Q, [0.05, 0.07, 0.06], 0.9)
        p = project_kernel(k, cam, lp_floor=0.0)

        def pinhole(t):
            return np.array([32.0 + 120.0 * t[0] / t[2], 32.0 + 80.0 * t[1] / t[2]])

        eps = 1e-6
        jac = np.zeros((2, 3))
        for j in range(3):
            dt = np.zeros(3)
            dt[j] = eps
            jac[:, j] = (pinhole(mean + dt) - pinhole(mean - dt)) / (2 * eps)
        from meshsplat.splats import covariance_from_rs

        sigma = covariance_from_rs(k.rotation, k.scale)
        np.testing.assert_allclose(p.cov2d, jac @ sigma @ jac.T, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(p.pixel_mean, pinhole(mean), atol=1e-9)


class TestProjectScene:
    def test_depths_exceed_near_clip(self, rng):
        scene = SplatScene.from_kernels([
            GaussianKernel(rng.normal(scale=3.0, size=3), IDENTITY_Q,
                           [0.1, 0.1, 0.1], 0.5)
            for _ in range(100)
        ])
        cam = Camera.look_at((0, 0, -5), (0, 0, 0), resolution=(64, 64))
        projected = project_scene(scene, cam)
        assert np.all(projected.depths > cam.near_clip)
        # cov2d symmetric positive definite after the floor
        for c in projected.cov2d:
            assert abs(c[0, 1] - c[1, 0]) < 1e-12
            assert np.all(np.linalg.eigvalsh(c) > 0)

    def test_source_indices_point_back(self):
        kernels = [GaussianKernel([i - 1.0, 0, 2.0], IDENTITY_Q, [0.05] * 3, 0.9)
                   for i in range(3)]
        scene = SplatScene.from_kernels(kernels)
        cam = Camera.look_at((0, 0, -3), (0, 0, 0), resolution=(64, 64))
        projected = project_scene(scene, cam)
        assert len(projected) == 3
        np.testing.assert_array_equal(np.sort(projected.source_indices), [0, 1, 2])

    def test_empty_scene(self):
        from meshsplat.splats import SplatScene

        cam = Camera.look_at((0, 0, -3), (0, 0, 0), resolution=(32, 32))
        assert len(project_scene(SplatScene.empty(), cam)) == 0


class TestCameraValidation:
    def test_bad_params(self):
        with pytest.raises(InvalidParameterError):
            Camera(RigidTransform(), (0.0, 100.0), (0, 0), (64, 64))
        with pytest.raises(InvalidParameterError):
            Camera(RigidTransform(), (100.0, 100.0), (0, 0), (0, 64))
        with pytest.raises(InvalidParameterError):
            Camera(RigidTransform(), (100.0, 100.0), (0, 0), (64, 64), near_clip=0.0)

    def test_look_at_center(self):
        cam = Camera.look_at((1.0, 2.0, 3.0), (0.0, 0.0, 0.0))
        np.testing.assert_allclose(cam.center, [1.0, 2.0, 3.0], atol=1e-12)

    def test_transformed_moves_with_world(self, rng):
        cam = Camera.look_at((0, 0, -4), (0, 0, 0), resolution=(32, 32))
        rigid = RigidTransform(
            np.array([0.9, 0.1, -0.2, 0.3]) / np.linalg.norm([0.9, 0.1, -0.2, 0.3]),
            (0.5, -1.0, 2.0))
        moved = cam.transformed(rigid)
        pts = rng.normal(size=(10, 3))
        np.testing.assert_allclose(
            moved.world_to_camera.apply(rigid.apply(pts)),
            cam.world_to_camera.apply(pts), atol=1e-12)
