import numpy as np
import pytest

from meshsplat.editing import delete_object, relabel, transform_object
from meshsplat.errors import InvalidParameterError, NotFoundError
from meshsplat.geometry import quat_from_axis_angle
from meshsplat.render import render_fast
from meshsplat.splats import covariance_from_rs

from conftest import default_camera, random_scene


class TestTransform:
    def test_identity(self):
        scene = random_scene(30, seed=0, n_objects=2)
        out = transform_object(scene, 1)
        np.testing.assert_allclose(out.means, scene.means, atol=1e-12)
        np.testing.assert_allclose(out.rotations, scene.rotations, atol=1e-12)

    def test_translation_shifts_segment(self):
        scene = random_scene(30, seed=1, n_objects=2)
        out = transform_object(scene, 1, translation=(1.0, 0.0, 0.0))
        mask = scene.object_ids == 1
        np.testing.assert_allclose(out.means[mask] - scene.means[mask],
                                   np.tile([1, 0, 0], (mask.sum(), 1)), atol=1e-12)
        np.testing.assert_array_equal(out.means[~mask], scene.means[~mask])

    def test_uniform_scale_doubles_distances_quadruples_eigenvalues(self):
        scene = random_scene(20, seed=2, n_objects=1)
        out = transform_object(scene, 0, scale=2.0)
        d_in = np.linalg.norm(scene.means[:, None] - scene.means[None], axis=2)
        d_out = np.linalg.norm(out.means[:, None] - out.means[None], axis=2)
        np.testing.assert_allclose(d_out, 2.0 * d_in, atol=1e-9)
        for i in range(len(scene)):
            eig_in = np.linalg.eigvalsh(covariance_from_rs(scene.rotations[i],
                                                           scene.scales[i]))
            eig_out = np.linalg.eigvalsh(covariance_from_rs(out.rotations[i],
                                                            out.scales[i]))
            np.testing.assert_allclose(eig_out, 4.0 * eig_in, rtol=1e-9)

    def test_scale_about_explicit_pivot(self):
        scene = random_scene(10, seed=3, n_objects=1)
        pivot = np.array([5.0, 0.0, 0.0])
        out = transform_object(scene, 0, scale=3.0, pivot=pivot)
        np.testing.assert_allclose(out.means, pivot + 3.0 * (scene.means - pivot),
                                   atol=1e-9)

    def test_rotation_premultiplies(self):
        scene = random_scene(10, seed=4, n_objects=1)
        q = quat_from_axis_angle([0, 1, 0], 0.7)
        out = transform_object(scene, 0, rotation=q)
        from meshsplat.geometry import quat_mul

        np.testing.assert_allclose(out.rotations, quat_mul(q, scene.rotations),
                                   atol=1e-12)

    def test_errors(self):
        scene = random_scene(10, seed=5, n_objects=1)
        with pytest.raises(InvalidParameterError):
            transform_object(scene, 0, scale=0.0)
        with pytest.raises(NotFoundError):
            transform_object(scene, 9, scale=1.0)

    def test_invariants_preserved(self):
        scene = random_scene(25, seed=6, n_objects=2)
        out = transform_object(scene, 0, rotation=quat_from_axis_angle([1, 1, 0], 1.0),
                               translation=(0.5, -1, 2), scale=0.5)
        out.validate()
        norms = np.linalg.norm(out.rotations, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_commutes_with_camera_inverse_motion(self):
        # single-segment scene: edit(Q, t, s=1) then render == render with the
        # inverse-moved camera
        from meshsplat.geometry import RigidTransform

        scene = random_scene(60, seed=7, n_objects=1)
        cam = default_camera(resolution=(80, 80))
        q = quat_from_axis_angle([0.3, 1.0, -0.2], 0.9)
        t = (0.2, -0.4, 0.3)
        pivot = (0.0, 0.0, 0.0)
        moved = transform_object(scene, 0, rotation=q, translation=t, pivot=pivot)
        rigid = RigidTransform(q, t)
        a = render_fast(moved, cam.transformed(rigid))
        b = render_fast(scene, cam)
        assert a.max_channel_diff(b) <= 1e-5


class TestDelete:
    def test_delete_only_segment_empties_scene(self):
        scene = random_scene(10, seed=8, n_objects=1)
        out = delete_object(scene, 0)
        assert len(out) == 0

    def test_delete_preserves_order(self):
        scene = random_scene(30, seed=9, n_objects=2)
        out = delete_object(scene, 1)
        mask = scene.object_ids == 0
        np.testing.assert_array_equal(out.means, scene.means[mask])
        assert np.all(out.object_ids == 0)

    def test_double_delete_errors(self):
        scene = random_scene(20, seed=10, n_objects=2)
        out = delete_object(scene, 1)
        with pytest.raises(NotFoundError):
            delete_object(out, 1)

    def test_masked_pixels_unchanged(self):
        # pixels the deleted object never touched must not change
        scene = random_scene(80, seed=11, n_objects=2)
        cam = default_camera(resolution=(96, 96))
        before = render_fast(scene, cam)
        removed = delete_object(scene, 1)
        after = render_fast(removed, cam)
        only_deleted = scene.select(scene.object_ids == 1)
        deleted_img = render_fast(only_deleted, cam)
        untouched = deleted_img.transmittance >= 1.0 - 1e-12
        assert untouched.any()
        diff = np.abs(before.rgb - after.rgb).max(axis=2)
        assert diff[untouched].max() <= 1e-6


class TestRelabel:
    def test_merge_segments(self):
        scene = random_scene(20, seed=12, n_objects=3)
        out = relabel(scene, 0, len(scene), 0)
        assert list(out.segment_ids()) == [0]

    def test_relabel_then_mesh_object(self):
        from meshsplat.meshing import mesh_object

        scene = random_scene(20, seed=13, n_objects=1, spread=0.3,
                             scale_range=(0.2, 0.4))
        out = relabel(scene, 0, 10, 5)
        mesh = mesh_object(out, 5, iso_level=0.05, cell_size=0.2)
        assert mesh.n_vertices > 0

    def test_render_neutral(self):
        scene = random_scene(40, seed=14, n_objects=2)
        cam = default_camera(resolution=(64, 64))
        before = render_fast(scene, cam)
        after = render_fast(relabel(scene, 0, 20, 7), cam)
        np.testing.assert_array_equal(before.rgb, after.rgb)

    def test_bad_range(self):
        scene = random_scene(10, seed=15)
        with pytest.raises(InvalidParameterError):
            relabel(scene, 5, 4, 1)
        with pytest.raises(InvalidParameterError):
            relabel(scene, 0, 99, 1)
