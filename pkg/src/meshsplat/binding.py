"""Anchoring kernels to mesh faces and transferring mesh deformation back.

Each kernel is bound to its closest point on the mesh: the owning face, the
barycentric coordinates of the foot point, and the offset along that face's
normal. A per-face orthonormal rest frame (first edge, normal x first edge,
normal) is stored so that deformation transfers a pure rotation to the
kernel: new rotation = q(F_deformed * F_rest^T) * rest rotation. Scales and
opacities never change under deformation.

Reconstruction (foot + offset * normal) reproduces the kernel mean exactly
when the foot lies in a face interior; kernels whose closest point falls on
an edge or vertex keep only the normal component of their offset, which is
the documented approximation of this anchor model.

apply_deformation always maps the stored rest pose to the deformed pose, so
applying the same deformed mesh twice equals applying it once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InvalidParameterError
from .geometry import quat_from_matrix, quat_mul
from .meshing import TriangleMesh
from .splats import SplatScene

DEGENERATE_FACE_AREA = 1e-12


@dataclass
class SurfaceBinding:
    kernel_index: int
    face_index: int
    barycentric: np.ndarray  # (3,) non-negative, sums to 1
    normal_offset: float
    rest_frame: np.ndarray  # (3, 3) orthonormal, columns (e1, n x e1, n)

    def __post_init__(self):
        self.barycentric = np.asarray(self.barycentric, dtype=np.float64).reshape(3)
        self.rest_frame = np.asarray(self.rest_frame, dtype=np.float64).reshape(3, 3)
        if np.any(self.barycentric < -1e-12) or abs(self.barycentric.sum() - 1.0) > 1e-9:
            raise InvalidParameterError("barycentric weights must be non-negative and sum to 1")
        if np.max(np.abs(self.rest_frame @ self.rest_frame.T - np.eye(3))) > 1e-6:
            raise InvalidParameterError("rest_frame must be orthonormal")


class BindingSet:
    """All bindings of one (scene, mesh) pair plus the rest-pose data.

    Stored struct-of-arrays: bound kernel indices, face indices, barycentric
    weights, normal offsets, rest rotations of the bound kernels, and a copy
    of the rest mesh. Unbound kernel indices are reported separately.
    """

    def __init__(self, rest_mesh: TriangleMesh, kernel_indices, face_indices,
                 barycentric, normal_offsets, rest_rotations, unbound=()):
        self.rest_mesh = rest_mesh.copy()
        self.kernel_indices = np.asarray(kernel_indices, dtype=np.int64).reshape(-1)
        self.face_indices = np.asarray(face_indices, dtype=np.int64).reshape(-1)
        self.barycentric = np.asarray(barycentric, dtype=np.float64).reshape(-1, 3)
        self.normal_offsets = np.asarray(normal_offsets, dtype=np.float64).reshape(-1)
        self.rest_rotations = np.asarray(rest_rotations, dtype=np.float64).reshape(-1, 4)
        self.unbound = np.asarray(unbound, dtype=np.int64).reshape(-1)
        if len({len(self.kernel_indices), len(self.face_indices), len(self.barycentric),
                len(self.normal_offsets), len(self.rest_rotations)}) != 1:
            raise InvalidParameterError("binding arrays must have equal length")
        if len(np.unique(self.kernel_indices)) != len(self.kernel_indices):
            raise InvalidParameterError("a kernel may be bound at most once")
        if len(self.face_indices) and (self.face_indices.min() < 0
                                       or self.face_indices.max() >= rest_mesh.n_faces):
            raise InvalidParameterError("face index out of range")
        self._rest_frames = _face_frames(self.rest_mesh.vertices, self.rest_mesh.faces,
                                         self.face_indices)[0]

    def __len__(self) -> int:
        return len(self.kernel_indices)

    def binding(self, i: int) -> SurfaceBinding:
        return SurfaceBinding(
            int(self.kernel_indices[i]), int(self.face_indices[i]),
            self.barycentric[i], float(self.normal_offsets[i]), self._rest_frames[i],
        )


@njit(cache=True, nogil=True)
def _closest_point_all(points, vertices, faces, out_face, out_bary, out_dist):
    """Closest point on the mesh for every query point (Ericson's method).

    Ties on distance keep the lowest face index (strict < comparison while
    scanning faces in order).
    """
    for p in range(points.shape[0]):
        best = np.inf
        for f in range(faces.shape[0]):
            ax, ay, az = vertices[faces[f, 0], 0], vertices[faces[f, 0], 1], vertices[faces[f, 0], 2]
            bx, by, bz = vertices[faces[f, 1], 0], vertices[faces[f, 1], 1], vertices[faces[f, 1], 2]
            cx, cy, cz = vertices[faces[f, 2], 0], vertices[faces[f, 2], 1], vertices[faces[f, 2], 2]
            px, py, pz = points[p, 0], points[p, 1], points[p, 2]

            abx, aby, abz = bx - ax, by - ay, bz - az
            acx, acy, acz = cx - ax, cy - ay, cz - az
            apx, apy, apz = px - ax, py - ay, pz - az
            d1 = abx * apx + aby * apy + abz * apz
            d2 = acx * apx + acy * apy + acz * apz
            v = 0.0
            w = 0.0
            if d1 <= 0.0 and d2 <= 0.0:
                v = 0.0
                w = 0.0
            else:
                bpx, bpy, bpz = px - bx, py - by, pz - bz
                d3 = abx * bpx + aby * bpy + abz * bpz
                d4 = acx * bpx + acy * bpy + acz * bpz
                if d3 >= 0.0 and d4 <= d3:
                    v = 1.0
                    w = 0.0
                else:
                    vc = d1 * d4 - d3 * d2
                    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                        v = d1 / (d1 - d3)
                        w = 0.0
                    else:
                        cpx, cpy, cpz = px - cx, py - cy, pz - cz
                        d5 = abx * cpx + aby * cpy + abz * cpz
                        d6 = acx * cpx + acy * cpy + acz * cpz
                        if d6 >= 0.0 and d5 <= d6:
                            v = 0.0
                            w = 1.0
                        else:
                            vb = d5 * d2 - d1 * d6
                            if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                                v = 0.0
                                w = d2 / (d2 - d6)
                            else:
                                va = d3 * d6 - d5 * d4
                                if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                                    u = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                                    v = 1.0 - u
                                    w = u
                                else:
                                    denom = 1.0 / (va + vb + vc)
                                    v = vb * denom
                                    w = vc * denom
            qx = ax + v * abx + w * acx
            qy = ay + v * aby + w * acy
            qz = az + v * abz + w * acz
            dist = (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2
            if dist < best:
                best = dist
                out_face[p] = f
                out_bary[p, 0] = 1.0 - v - w
                out_bary[p, 1] = v
                out_bary[p, 2] = w
        out_dist[p] = np.sqrt(best)


def closest_point_on_mesh(mesh: TriangleMesh, points):
    """(face index, barycentric, distance) of the closest mesh point per query."""
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    faces = np.zeros(len(pts), dtype=np.int64)
    bary = np.zeros((len(pts), 3))
    dist = np.zeros(len(pts))
    if mesh.n_faces == 0:
        raise InvalidParameterError("mesh has no faces")
    _closest_point_all(pts, mesh.vertices, mesh.faces, faces, bary, dist)
    return faces, bary, dist


def _face_frames(vertices: np.ndarray, faces: np.ndarray, face_indices):
    """Orthonormal frames (columns e1, n x e1, n) and raw normals per face id.

    Returns (frames (B, 3, 3), normals (B, 3) unnormalized, degenerate mask).
    """
    f = faces[face_indices]
    v0 = vertices[f[:, 0]]
    v1 = vertices[f[:, 1]]
    v2 = vertices[f[:, 2]]
    e1 = v1 - v0
    raw_n = np.cross(e1, v2 - v0)
    area2 = np.linalg.norm(raw_n, axis=1)
    degenerate = area2 < 2.0 * DEGENERATE_FACE_AREA
    safe = np.where(degenerate, 1.0, area2)
    n = raw_n / safe[:, None]
    e1n = e1 / np.where(degenerate, 1.0, np.linalg.norm(e1, axis=1))[:, None]
    frames = np.stack([e1n, np.cross(n, e1n), n], axis=2)
    return frames, n, degenerate


def bind_kernels(scene: SplatScene, mesh: TriangleMesh,
                 max_bind_distance: float | None = None) -> BindingSet:
    """Bind every kernel within max_bind_distance of the mesh surface.

    max_bind_distance defaults to 3x the median kernel scale; kernels beyond
    it stay unbound and are reported in the returned set.
    """
    if mesh.n_faces == 0:
        raise InvalidParameterError("cannot bind to an empty mesh")
    if len(scene) == 0:
        return BindingSet(mesh, [], [], np.zeros((0, 3)), [], np.zeros((0, 4)), [])
    if max_bind_distance is None:
        max_bind_distance = 3.0 * float(np.median(scene.scales))
    faces, bary, dist = closest_point_on_mesh(mesh, scene.means)
    bound = dist <= max_bind_distance
    idx = np.nonzero(bound)[0]
    unbound = np.nonzero(~bound)[0]

    frames, normals, _ = _face_frames(mesh.vertices, mesh.faces, faces[idx])
    f = mesh.faces[faces[idx]]
    foot = np.einsum("bk,bkj->bj", bary[idx], mesh.vertices[f])
    offsets = np.einsum("bj,bj->b", scene.means[idx] - foot, normals)
    return BindingSet(mesh, idx, faces[idx], bary[idx], offsets,
                      scene.rotations[idx], unbound)


def apply_deformation(bindings: BindingSet, deformed_mesh: TriangleMesh,
                      scene: SplatScene) -> tuple[SplatScene, int]:
    """Move bound kernels of `scene` to follow the deformed mesh.

    The deformed mesh must be topologically identical to the rest mesh.
    Returns (updated scene, count of kernels frozen at degenerate faces).
    Unbound kernels pass through unchanged.
    """
    rest = bindings.rest_mesh
    if deformed_mesh.n_vertices != rest.n_vertices or \
            not np.array_equal(deformed_mesh.faces, rest.faces):
        raise InvalidParameterError("deformed mesh topology differs from the rest mesh")
    out = scene.copy()
    if len(bindings) == 0:
        return out, 0

    frames, normals, degenerate = _face_frames(
        deformed_mesh.vertices, deformed_mesh.faces, bindings.face_indices)
    ok = ~degenerate
    frozen = int(np.count_nonzero(degenerate))

    sel = bindings.kernel_indices[ok]
    f = deformed_mesh.faces[bindings.face_indices[ok]]
    foot = np.einsum("bk,bkj->bj", bindings.barycentric[ok], deformed_mesh.vertices[f])
    out.means[sel] = foot + bindings.normal_offsets[ok, None] * normals[ok]

    delta = np.einsum("bij,bkj->bik", frames[ok], bindings._rest_frames[ok])
    out.rotations[sel] = quat_mul(quat_from_matrix(delta), bindings.rest_rotations[ok])
    return out, frozen


def save_bindings(bindings: BindingSet, path) -> None:
    """Sidecar text schema: kernel_index face_index w0 w1 w2 normal_offset."""
    with open(path, "w") as fh:
        fh.write("meshsplat-bindings v1\n")
        fh.write(f"# bound {len(bindings)} unbound {len(bindings.unbound)}\n")
        for i in range(len(bindings)):
            b = bindings.barycentric[i]
            fh.write(
                f"{bindings.kernel_indices[i]} {bindings.face_indices[i]} "
                f"{b[0]:.17g} {b[1]:.17g} {b[2]:.17g} {bindings.normal_offsets[i]:.17g}\n"
            )


def load_bindings(path, rest_mesh: TriangleMesh, scene: SplatScene) -> BindingSet:
    """Rebuild a BindingSet from the sidecar file plus rest mesh and scene."""
    from .errors import ParseError

    with open(path) as fh:
        header = fh.readline().strip()
        if header != "meshsplat-bindings v1":
            raise ParseError(f"unexpected bindings header {header!r}", line=1)
        kernel_indices, face_indices, bary, offsets = [], [], [], []
        for ln, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ParseError("binding rows need 6 fields", line=ln)
            kernel_indices.append(int(parts[0]))
            face_indices.append(int(parts[1]))
            bary.append([float(parts[2]), float(parts[3]), float(parts[4])])
            offsets.append(float(parts[5]))
    kernel_indices = np.array(kernel_indices, dtype=np.int64)
    all_idx = np.arange(len(scene))
    unbound = np.setdiff1d(all_idx, kernel_indices)
    return BindingSet(rest_mesh, kernel_indices, face_indices,
                      np.array(bary).reshape(-1, 3), offsets,
                      scene.rotations[kernel_indices], unbound)
