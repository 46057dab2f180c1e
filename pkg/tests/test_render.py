import numpy as np
import pytest

from meshsplat.camera import Camera, ProjectedSplat
from meshsplat.geometry import RigidTransform, quat_mul, quat_normalize
from meshsplat.render import (composite_pixel, render_fast, render_oracle,
                              save_image, to_display_u8)
from meshsplat.splats import GaussianKernel, SplatScene

from conftest import default_camera, random_scene

IDENTITY_Q = (1.0, 0.0, 0.0, 0.0)


def _splat(pixel_mean, opacity, color, depth=1.0, cov=None, index=0):
    cov = np.eye(2) if cov is None else np.asarray(cov, dtype=np.float64)
    return ProjectedSplat(np.asarray(pixel_mean, dtype=np.float64), cov, depth,
                          np.asarray(color, dtype=np.float64), opacity, index)


class TestCompositePixel:
    def test_single_centered_splat(self):
        c, t = composite_pixel([_splat((4, 4), 0.8, (1, 0, 0))], (4, 4))
        np.testing.assert_allclose(c, [0.8, 0.0, 0.0], atol=1e-15)
        assert t == pytest.approx(0.2, abs=1e-15)

    def test_two_centered_splats(self):
        splats = [
            _splat((0, 0), 0.5, (1, 0, 0), depth=1.0, index=0),
            _splat((0, 0), 0.5, (0, 0, 1), depth=2.0, index=1),
        ]
        c, t = composite_pixel(splats, (0, 0))
        np.testing.assert_allclose(c, [0.5, 0.0, 0.25], atol=1e-15)
        assert t == pytest.approx(0.25, abs=1e-15)

    def test_empty_list(self):
        c, t = composite_pixel([], (3, 7))
        np.testing.assert_array_equal(c, [0, 0, 0])
        assert t == 1.0

    def test_falloff_uses_mahalanobis(self):
        c, t = composite_pixel([_splat((0, 0), 1.0, (1, 1, 1))], (1, 0))
        assert c[0] == pytest.approx(np.exp(-0.5), abs=1e-12)

    def test_alpha_clamp(self):
        # opacity 1 at the center would zero transmittance; clamp keeps 0.01
        c, t = composite_pixel([_splat((0, 0), 1.0, (1, 0, 0))], (0, 0))
        assert c[0] == pytest.approx(0.99, abs=1e-15)
        assert t == pytest.approx(0.01, abs=1e-15)

    def test_transmittance_monotone(self, rng):
        splats = [
            _splat(rng.normal(scale=0.5, size=2), rng.uniform(0.1, 1.0),
                   rng.uniform(0, 1, 3), depth=float(i), index=i)
            for i in range(20)
        ]
        running = 1.0
        for i in range(1, len(splats) + 1):
            _, t = composite_pixel(splats[:i], (0, 0))
            assert t <= running + 1e-15
            running = t
            assert 0.0 <= t <= 1.0


class TestRenderers:
    def test_empty_scene_black(self):
        cam = default_camera(resolution=(32, 24))
        img = render_oracle(SplatScene.empty(), cam)
        assert np.all(img.rgb == 0.0)
        assert np.all(img.transmittance == 1.0)
        img_f = render_fast(SplatScene.empty(), cam)
        assert img.max_channel_diff(img_f) == 0.0

    def test_single_splat_brightest_at_mean(self):
        from meshsplat.camera import project_scene

        sh = np.zeros((3, 16))
        sh[:, 0] = 1.0
        scene = SplatScene.from_kernels([
            GaussianKernel([0.3, -0.2, 0], IDENTITY_Q, [0.15] * 3, 0.95, sh)])
        cam = default_camera(resolution=(96, 96))
        img = render_oracle(scene, cam)
        luminance = img.rgb.sum(axis=2)
        row, col = np.unravel_index(np.argmax(luminance), luminance.shape)
        projected = project_scene(scene, cam)
        px, py = projected.pixel_means[0]
        assert abs(col - px) <= 1.0
        assert abs(row - py) <= 1.0

    @pytest.mark.parametrize("seed,n", [(0, 50), (1, 200), (2, 400)])
    def test_fast_equals_oracle(self, seed, n):
        scene = random_scene(n, seed=seed, n_objects=3)
        cam = default_camera(resolution=(128, 128))
        a = render_oracle(scene, cam)
        b = render_fast(scene, cam)
        assert a.max_channel_diff(b) <= 1e-5
        np.testing.assert_array_equal(a.transmittance, b.transmittance)

    def test_single_tile_scene_bitwise(self):
        # everything inside one 16x16 tile
        scene = random_scene(20, seed=3, spread=0.02, scale_range=(0.005, 0.02))
        cam = default_camera(resolution=(16, 16), fov=30.0)
        a = render_oracle(scene, cam)
        b = render_fast(scene, cam)
        np.testing.assert_array_equal(a.rgb, b.rgb)

    def test_tile_boundary_no_seam(self):
        # a splat centered exactly on the column-16 tile boundary
        sh = np.zeros((3, 16))
        sh[:, 0] = 1.0
        cam = default_camera(resolution=(64, 64), fov=45.0)
        # place the kernel so its pixel mean lands near column 16
        from meshsplat.camera import project_scene

        k = GaussianKernel([0.8, 0.0, 0.0], IDENTITY_Q, [0.3] * 3, 0.9, sh)
        scene = SplatScene.from_kernels([k])
        projected = project_scene(scene, cam)
        assert 12 < projected.pixel_means[0][0] < 20  # straddles tiles 0 and 1
        a = render_oracle(scene, cam)
        b = render_fast(scene, cam)
        assert a.max_channel_diff(b) <= 1e-5
        boundary_cols = b.rgb[:, 14:18, :]
        diffs = np.abs(np.diff(boundary_cols, axis=1))
        assert diffs.max() < 0.15  # smooth falloff across the tile seam

    def test_depth_tie_break_deterministic(self):
        # two equal-depth splats at the same spot: lower index composites first
        sh_red = np.zeros((3, 16))
        sh_red[0, 0] = 2.0
        sh_red[1, 0] = -2.0
        sh_red[2, 0] = -2.0
        sh_blue = np.zeros((3, 16))
        sh_blue[2, 0] = 2.0
        sh_blue[0, 0] = -2.0
        sh_blue[1, 0] = -2.0
        k_red = GaussianKernel([0, 0, 0], IDENTITY_Q, [0.2] * 3, 0.8, sh_red)
        k_blue = GaussianKernel([0, 0, 0], IDENTITY_Q, [0.2] * 3, 0.8, sh_blue)
        cam = default_camera(resolution=(48, 48))
        img_ab = render_fast(SplatScene.from_kernels([k_red, k_blue]), cam)
        img_ab2 = render_fast(SplatScene.from_kernels([k_red, k_blue]), cam)
        np.testing.assert_array_equal(img_ab.rgb, img_ab2.rgb)
        center = img_ab.rgb[24, 24]
        assert center[0] > center[2]  # red in front (index 0 wins the tie)

    def test_run_to_run_bitwise(self):
        scene = random_scene(300, seed=5)
        cam = default_camera(resolution=(128, 96))
        a = render_fast(scene, cam)
        b = render_fast(scene, cam)
        np.testing.assert_array_equal(a.rgb, b.rgb)
        np.testing.assert_array_equal(a.transmittance, b.transmittance)

    def test_thread_count_invariance(self):
        import numba

        scene = random_scene(200, seed=6)
        cam = default_camera(resolution=(96, 96))
        n = numba.get_num_threads()
        try:
            numba.set_num_threads(1)
            a = render_fast(scene, cam)
            numba.set_num_threads(max(2, n))
            b = render_fast(scene, cam)
        finally:
            numba.set_num_threads(n)
        assert a.max_channel_diff(b) <= 1e-6

    def test_rigid_equivariance(self, rng):
        scene = random_scene(150, seed=8)
        cam = default_camera(resolution=(96, 96))
        base = render_fast(scene, cam)
        for seed in range(3):
            r = np.random.default_rng(seed)
            rigid = RigidTransform(quat_normalize(r.normal(size=4)), r.normal(size=3))
            moved = SplatScene(
                rigid.apply(scene.means),
                quat_mul(rigid.rotation, scene.rotations),
                scene.scales.copy(), scene.opacities.copy(), scene.sh.copy(),
                scene.object_ids.copy())
            img = render_fast(moved, cam.transformed(rigid))
            assert base.max_channel_diff(img) <= 1e-5

    def test_channels_in_unit_interval(self):
        scene = random_scene(300, seed=9)
        cam = default_camera(resolution=(64, 64))
        img = render_fast(scene, cam)
        assert img.rgb.min() >= 0.0 and img.rgb.max() <= 1.0
        assert img.transmittance.min() >= 0.0 and img.transmittance.max() <= 1.0


class TestImageExport:
    def test_gamma_encode(self):
        from meshsplat.render import ImageBuffer

        buf = ImageBuffer(np.full((4, 4, 3), 0.5), np.ones((4, 4)))
        u8 = to_display_u8(buf)
        assert u8.dtype == np.uint8
        assert abs(int(u8[0, 0, 0]) - round(255 * 0.5 ** (1 / 2.2))) <= 1

    def test_save_png_ppm_npy(self, tmp_path):
        from meshsplat.render import ImageBuffer

        buf = ImageBuffer(np.random.default_rng(0).uniform(size=(8, 12, 3)),
                          np.ones((8, 12)))
        png = tmp_path / "img.png"
        ppm = tmp_path / "img.ppm"
        npy = tmp_path / "img.npy"
        save_image(buf, png)
        save_image(buf, ppm)
        save_image(buf, npy)
        from PIL import Image

        arr = np.asarray(Image.open(png))
        assert arr.shape == (8, 12, 3)
        np.testing.assert_array_equal(arr, to_display_u8(buf))
        raw = np.load(npy)
        np.testing.assert_allclose(raw, buf.rgb, atol=1e-6)
        with open(ppm, "rb") as fh:
            assert fh.readline() == b"P6\n"
