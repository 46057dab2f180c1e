import numpy as np
import pytest

from meshsplat.errors import EmptySceneError, InvalidParameterError, NotFoundError
from meshsplat.meshing import (TriangleMesh, connected_components, density_at,
                               edge_topology, euler_characteristic,
                               extract_mesh, mesh_object, mesh_volume,
                               sample_density_grid)
from meshsplat.splats import GaussianKernel, SplatScene

IDENTITY_Q = (1.0, 0.0, 0.0, 0.0)


def _blob(center, scale=0.5, opacity=1.0, object_id=0):
    return GaussianKernel(center, IDENTITY_Q, [scale] * 3, opacity,
                          object_id=object_id)


class TestDensity:
    def test_far_from_kernels(self):
        scene = SplatScene.from_kernels([_blob([0, 0, 0])])
        assert density_at(scene, [100, 0, 0]) < 1e-5

    def test_peak_is_opacity(self):
        scene = SplatScene.from_kernels([_blob([1, 2, 3], opacity=0.65)])
        assert density_at(scene, [1, 2, 3]) == pytest.approx(0.65, abs=1e-9)

    def test_two_kernel_midpoint(self):
        # hand evaluation: two unit-opacity kernels at +-s from the midpoint
        s = 0.8
        scene = SplatScene.from_kernels([_blob([-s, 0, 0], scale=s),
                                         _blob([s, 0, 0], scale=s)])
        assert density_at(scene, [0, 0, 0]) == pytest.approx(2 * np.exp(-0.5), abs=1e-9)
        assert 2 * np.exp(-0.5) == pytest.approx(1.2130613, abs=1e-7)

    def test_vectorized_matches_scalar(self, rng):
        from conftest import random_scene

        scene = random_scene(30, seed=11, scale_range=(0.1, 0.4))
        pts = rng.normal(size=(20, 3))
        batched = density_at(scene, pts)
        for p, expected in zip(pts, batched):
            assert density_at(scene, p) == pytest.approx(expected, abs=1e-12)

    def test_grid_matches_pointwise(self):
        scene = SplatScene.from_kernels([_blob([0.1, -0.2, 0.3], scale=0.4)])
        grid = sample_density_grid(scene, (-1, -1, -1), 0.25, (9, 9, 9))
        for idx in [(0, 0, 0), (4, 4, 4), (8, 2, 5)]:
            p = np.array([-1, -1, -1]) + 0.25 * np.array(idx)
            assert grid.samples[idx] == pytest.approx(density_at(scene, p), abs=1e-12)


class TestExtractMesh:
    def test_sphere_radius_euler_components(self):
        scene = SplatScene.from_kernels([_blob([0, 0, 0], scale=0.5, opacity=1.0)])
        mesh = extract_mesh(scene, iso_level=0.1, cell_size=0.05)
        radii = np.linalg.norm(mesh.vertices, axis=1)
        expected = 0.5 * np.sqrt(2.0 * np.log(1.0 / 0.1))
        assert expected == pytest.approx(1.0729830, abs=1e-6)
        assert abs(radii.mean() - expected) / expected < 0.05
        assert np.all(np.abs(radii - expected) < 0.05 + 1e-9)  # one cell_size
        assert euler_characteristic(mesh) == 2
        assert connected_components(mesh) == 1
        assert mesh_volume(mesh) > 0  # faces wound counter-clockwise outward

    def test_vertex_density_near_iso(self):
        scene = SplatScene.from_kernels([_blob([0, 0, 0], scale=0.5)])
        iso = 0.1
        mesh = extract_mesh(scene, iso_level=iso, cell_size=0.06)
        d = density_at(scene, mesh.vertices)
        assert np.max(np.abs(d - iso)) <= 0.05 * iso

    def test_halving_cell_size_does_not_worsen_radius(self):
        scene = SplatScene.from_kernels([_blob([0, 0, 0], scale=0.5)])
        expected = 0.5 * np.sqrt(2.0 * np.log(10.0))
        errors = []
        for cell in (0.16, 0.08, 0.04):
            mesh = extract_mesh(scene, iso_level=0.1, cell_size=cell)
            radii = np.linalg.norm(mesh.vertices, axis=1)
            errors.append(abs(radii.mean() - expected))
        assert errors[1] <= errors[0] + 1e-12
        assert errors[2] <= errors[1] + 1e-12

    def test_iso_above_peak_gives_empty_mesh(self):
        scene = SplatScene.from_kernels([_blob([0, 0, 0], scale=0.5, opacity=1.0)])
        mesh = extract_mesh(scene, iso_level=2.0, cell_size=0.1)
        assert mesh.n_vertices == 0 and mesh.n_faces == 0

    def test_two_separated_blobs(self):
        scene = SplatScene.from_kernels([_blob([-3, 0, 0], 0.4), _blob([3, 0, 0], 0.4)])
        mesh = extract_mesh(scene, iso_level=0.1, cell_size=0.08)
        assert connected_components(mesh) == 2
        assert euler_characteristic(mesh) == 4  # two topological spheres

    def test_empty_scene_error(self):
        with pytest.raises(EmptySceneError):
            extract_mesh(SplatScene.empty(), 0.1, 0.1)

    def test_bad_params(self):
        scene = SplatScene.from_kernels([_blob([0, 0, 0])])
        with pytest.raises(InvalidParameterError):
            extract_mesh(scene, iso_level=-1.0, cell_size=0.1)
        with pytest.raises(InvalidParameterError):
            extract_mesh(scene, iso_level=0.1, cell_size=-0.1)
        with pytest.raises(InvalidParameterError):
            extract_mesh(scene, iso_level=0.1, cell_size=1e-6)  # grid cap

    def test_manifold_edges(self):
        scene = SplatScene.from_kernels([_blob([0, 0, 0], scale=0.5)])
        mesh = extract_mesh(scene, iso_level=0.1, cell_size=0.07)
        edges, adjacency = edge_topology(mesh.faces)
        assert all(len(f) == 2 for f in adjacency)  # closed 2-manifold


class TestMeshObject:
    def test_filters_by_segment(self):
        scene = SplatScene.from_kernels([
            _blob([-3, 0, 0], 0.4, object_id=0),
            _blob([3, 0, 0], 0.4, object_id=1),
        ])
        mesh = mesh_object(scene, 1, iso_level=0.1, cell_size=0.08)
        assert connected_components(mesh) == 1
        assert np.all(mesh.vertices[:, 0] > 0)

    def test_unknown_object_id(self):
        scene = SplatScene.from_kernels([_blob([0, 0, 0], object_id=0),
                                         _blob([1, 0, 0], object_id=1)])
        with pytest.raises(NotFoundError):
            mesh_object(scene, 7, 0.1, 0.1)

    def test_equivalent_to_isolated_extraction(self):
        lone = _blob([3, 0, 0], 0.4, object_id=1)
        scene = SplatScene.from_kernels([_blob([-9, 0, 0], 0.3, object_id=0), lone])
        by_object = mesh_object(scene, 1, iso_level=0.1, cell_size=0.08)
        alone = extract_mesh(SplatScene.from_kernels([lone]), 0.1, 0.08)
        np.testing.assert_allclose(np.sort(np.linalg.norm(by_object.vertices - [3, 0, 0], axis=1)),
                                   np.sort(np.linalg.norm(alone.vertices - [3, 0, 0], axis=1)),
                                   atol=1e-9)


class TestTriangleMesh:
    def test_validation(self):
        with pytest.raises(InvalidParameterError):
            TriangleMesh(np.zeros((2, 3)), [[0, 1, 2]])
        with pytest.raises(InvalidParameterError):
            TriangleMesh(np.zeros((3, 3)), [[0, 1, 1]])

    def test_areas_normals(self):
        mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
        assert mesh.face_areas()[0] == pytest.approx(0.5)
        np.testing.assert_allclose(mesh.face_normals()[0], [0, 0, 1], atol=1e-15)
