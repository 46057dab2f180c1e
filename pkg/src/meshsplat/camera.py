"""Pinhole camera model and splat projection to the image plane.

Projection follows the affine (EWA-style) approximation: the 3D covariance
is pushed through the world-to-camera rotation and the Jacobian J of the
perspective map evaluated at the camera-space mean, giving a 2x2 screen
covariance. A small isotropic low-pass floor keeps that matrix invertible
and sub-pixel splats visible.

Pixel (row r, col c) samples the image plane at continuous point (c, r);
centered cameras therefore use principal point ((w-1)/2, (h-1)/2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from numba import njit, prange

from .errors import InvalidParameterError
from .geometry import RigidTransform, quat_from_matrix
from .sh import SH_C0, SH_C1, SH_C2, SH_C3
from .splats import SplatScene

LOW_PASS_FLOOR = 0.3  # px^2 added to both cov2d diagonal entries
SUPPORT_RADIUS = 3.0  # Mahalanobis cutoff for binning and pixel coverage


@dataclass
class Camera:
    world_to_camera: RigidTransform
    focal: tuple[float, float]
    principal_point: tuple[float, float]
    resolution: tuple[int, int]  # (width, height)
    near_clip: float = 0.01

    def __post_init__(self):
        fx, fy = self.focal
        w, h = self.resolution
        if fx <= 0 or fy <= 0:
            raise InvalidParameterError("focal lengths must be positive")
        if w <= 0 or h <= 0:
            raise InvalidParameterError("resolution must be positive")
        if self.near_clip <= 0:
            raise InvalidParameterError("near_clip must be positive")

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), fov_deg: float = 60.0,
                resolution=(640, 480), near_clip: float = 0.01) -> "Camera":
        """Camera at `eye` looking toward `target`; fov is horizontal, in degrees."""
        eye = np.asarray(eye, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        forward = target - eye
        norm = np.linalg.norm(forward)
        if norm == 0.0:
            raise InvalidParameterError("eye and target coincide")
        z = forward / norm
        upv = np.asarray(up, dtype=np.float64)
        x = np.cross(z, upv)
        if np.linalg.norm(x) < 1e-12:
            x = np.cross(z, np.array([1.0, 0.0, 0.0]))
            if np.linalg.norm(x) < 1e-12:
                x = np.cross(z, np.array([0.0, 0.0, 1.0]))
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        rot = np.stack([x, y, z])  # rows: world -> camera
        w, h = resolution
        fx = 0.5 * w / np.tan(np.radians(fov_deg) * 0.5)
        pose = RigidTransform(quat_from_matrix(rot), -rot @ eye)
        return cls(pose, (fx, fx), ((w - 1) * 0.5, (h - 1) * 0.5), (int(w), int(h)), near_clip)

    @property
    def center(self) -> np.ndarray:
        """Camera origin in world coordinates."""
        return self.world_to_camera.inverse().translation

    def transformed(self, rigid: RigidTransform) -> "Camera":
        """Camera observing a world moved by `rigid` identically to this one.

        Composing the pose with rigid^-1 makes render(move(scene), cam') equal
        render(scene, cam).
        """
        return Camera(
            self.world_to_camera.compose(rigid.inverse()),
            self.focal, self.principal_point, self.resolution, self.near_clip,
        )


@dataclass
class ProjectedSplat:
    """One kernel after projection; cov2d already includes the low-pass floor."""

    pixel_mean: np.ndarray  # (2,)
    cov2d: np.ndarray  # (2, 2) symmetric positive definite
    view_depth: float  # camera-space z of the mean
    color: np.ndarray  # rgb in [0, 1]
    opacity: float
    source_index: int


class ProjectedScene:
    """All surviving projections of one (scene, camera) pair, struct-of-arrays.

    Entries keep the source kernel order; renderers sort by (depth, index).
    """

    __slots__ = ("pixel_means", "cov2d", "conics", "depths", "colors",
                 "opacities", "source_indices", "radii")

    def __init__(self, pixel_means, cov2d, depths, colors, opacities, source_indices):
        self.pixel_means = pixel_means
        self.cov2d = cov2d
        self.depths = depths
        self.colors = colors
        self.opacities = opacities
        self.source_indices = source_indices
        a = cov2d[:, 0, 0]
        b = cov2d[:, 0, 1]
        c = cov2d[:, 1, 1]
        det = a * c - b * b
        self.conics = np.stack([c / det, -b / det, a / det], axis=1)
        self.radii = SUPPORT_RADIUS * np.sqrt(np.stack([a, c], axis=1))

    def __len__(self) -> int:
        return len(self.depths)

    def splat(self, i: int) -> ProjectedSplat:
        return ProjectedSplat(
            self.pixel_means[i], self.cov2d[i], float(self.depths[i]),
            self.colors[i], float(self.opacities[i]), int(self.source_indices[i]),
        )

    def sorted_order(self) -> np.ndarray:
        """Indices sorted ascending by depth, ties by ascending source index."""
        return np.argsort(self.depths, kind="stable")


@njit(cache=True, nogil=True, parallel=True)
def _project_all(means, rotations, scales, opacities, sh, rot, trans, center,
                 fx, fy, cx, cy, width, height, near, lp_floor,
                 keep, pixel_means, cov2d, depths, colors):
    n = means.shape[0]
    for i in prange(n):
        keep[i] = False
        tx = rot[0, 0] * means[i, 0] + rot[0, 1] * means[i, 1] + rot[0, 2] * means[i, 2] + trans[0]
        ty = rot[1, 0] * means[i, 0] + rot[1, 1] * means[i, 1] + rot[1, 2] * means[i, 2] + trans[1]
        tz = rot[2, 0] * means[i, 0] + rot[2, 1] * means[i, 1] + rot[2, 2] * means[i, 2] + trans[2]
        if tz <= near:
            continue

        # kernel rotation matrix from the unit quaternion (w, x, y, z)
        qw, qx, qy, qz = rotations[i, 0], rotations[i, 1], rotations[i, 2], rotations[i, 3]
        r00 = 1.0 - 2.0 * (qy * qy + qz * qz)
        r01 = 2.0 * (qx * qy - qw * qz)
        r02 = 2.0 * (qx * qz + qw * qy)
        r10 = 2.0 * (qx * qy + qw * qz)
        r11 = 1.0 - 2.0 * (qx * qx + qz * qz)
        r12 = 2.0 * (qy * qz - qw * qx)
        r20 = 2.0 * (qx * qz - qw * qy)
        r21 = 2.0 * (qy * qz + qw * qx)
        r22 = 1.0 - 2.0 * (qx * qx + qy * qy)
        s0 = scales[i, 0] * scales[i, 0]
        s1 = scales[i, 1] * scales[i, 1]
        s2 = scales[i, 2] * scales[i, 2]
        # sigma = R diag(s) R^T
        g00 = r00 * r00 * s0 + r01 * r01 * s1 + r02 * r02 * s2
        g01 = r00 * r10 * s0 + r01 * r11 * s1 + r02 * r12 * s2
        g02 = r00 * r20 * s0 + r01 * r21 * s1 + r02 * r22 * s2
        g11 = r10 * r10 * s0 + r11 * r11 * s1 + r12 * r12 * s2
        g12 = r10 * r20 * s0 + r11 * r21 * s1 + r12 * r22 * s2
        g22 = r20 * r20 * s0 + r21 * r21 * s1 + r22 * r22 * s2
        # camera-space covariance M = Rc sigma Rc^T; need rows 0..2 of Rc sigma
        a00 = rot[0, 0] * g00 + rot[0, 1] * g01 + rot[0, 2] * g02
        a01 = rot[0, 0] * g01 + rot[0, 1] * g11 + rot[0, 2] * g12
        a02 = rot[0, 0] * g02 + rot[0, 1] * g12 + rot[0, 2] * g22
        a10 = rot[1, 0] * g00 + rot[1, 1] * g01 + rot[1, 2] * g02
        a11 = rot[1, 0] * g01 + rot[1, 1] * g11 + rot[1, 2] * g12
        a12 = rot[1, 0] * g02 + rot[1, 1] * g12 + rot[1, 2] * g22
        a20 = rot[2, 0] * g00 + rot[2, 1] * g01 + rot[2, 2] * g02
        a21 = rot[2, 0] * g01 + rot[2, 1] * g11 + rot[2, 2] * g12
        a22 = rot[2, 0] * g02 + rot[2, 1] * g12 + rot[2, 2] * g22
        m00 = a00 * rot[0, 0] + a01 * rot[0, 1] + a02 * rot[0, 2]
        m01 = a00 * rot[1, 0] + a01 * rot[1, 1] + a02 * rot[1, 2]
        m02 = a00 * rot[2, 0] + a01 * rot[2, 1] + a02 * rot[2, 2]
        m11 = a10 * rot[1, 0] + a11 * rot[1, 1] + a12 * rot[1, 2]
        m12 = a10 * rot[2, 0] + a11 * rot[2, 1] + a12 * rot[2, 2]
        m22 = a20 * rot[2, 0] + a21 * rot[2, 1] + a22 * rot[2, 2]

        j00 = fx / tz
        j02 = -fx * tx / (tz * tz)
        j11 = fy / tz
        j12 = -fy * ty / (tz * tz)
        # cov2d = J M J^T + lp_floor I
        c00 = j00 * (j00 * m00 + j02 * m02) + j02 * (j00 * m02 + j02 * m22) + lp_floor
        c01 = j00 * (j11 * m01 + j12 * m02) + j02 * (j11 * m12 + j12 * m22)
        c11 = j11 * (j11 * m11 + j12 * m12) + j12 * (j11 * m12 + j12 * m22) + lp_floor

        px = fx * tx / tz + cx
        py = fy * ty / tz + cy
        rx = SUPPORT_RADIUS * np.sqrt(c00)
        ry = SUPPORT_RADIUS * np.sqrt(c11)
        if px + rx < 0.0 or px - rx > width - 1.0 or py + ry < 0.0 or py - ry > height - 1.0:
            continue

        # view direction in the kernel's local frame (see module docstring)
        vx = means[i, 0] - center[0]
        vy = means[i, 1] - center[1]
        vz = means[i, 2] - center[2]
        inv = 1.0 / np.sqrt(vx * vx + vy * vy + vz * vz)
        vx *= inv
        vy *= inv
        vz *= inv
        x = r00 * vx + r10 * vy + r20 * vz
        y = r01 * vx + r11 * vy + r21 * vz
        z = r02 * vx + r12 * vy + r22 * vz

        xx = x * x
        yy = y * y
        zz = z * z
        b0 = SH_C0
        b1 = -SH_C1 * y
        b2 = SH_C1 * z
        b3 = -SH_C1 * x
        b4 = SH_C2[0] * x * y
        b5 = SH_C2[1] * y * z
        b6 = SH_C2[2] * (2.0 * zz - xx - yy)
        b7 = SH_C2[3] * x * z
        b8 = SH_C2[4] * (xx - yy)
        b9 = SH_C3[0] * y * (3.0 * xx - yy)
        b10 = SH_C3[1] * x * y * z
        b11 = SH_C3[2] * y * (4.0 * zz - xx - yy)
        b12 = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        b13 = SH_C3[4] * x * (4.0 * zz - xx - yy)
        b14 = SH_C3[5] * z * (xx - yy)
        b15 = SH_C3[6] * x * (xx - 3.0 * yy)
        for ch in range(3):
            c = sh[i, ch]
            val = 0.5 + (c[0] * b0 + c[1] * b1 + c[2] * b2 + c[3] * b3
                         + c[4] * b4 + c[5] * b5 + c[6] * b6 + c[7] * b7
                         + c[8] * b8 + c[9] * b9 + c[10] * b10 + c[11] * b11
                         + c[12] * b12 + c[13] * b13 + c[14] * b14 + c[15] * b15)
            if val < 0.0:
                val = 0.0
            elif val > 1.0:
                val = 1.0
            colors[i, ch] = val

        keep[i] = True
        pixel_means[i, 0] = px
        pixel_means[i, 1] = py
        cov2d[i, 0, 0] = c00
        cov2d[i, 0, 1] = c01
        cov2d[i, 1, 0] = c01
        cov2d[i, 1, 1] = c11
        depths[i] = tz


def project_scene(scene: SplatScene, camera: Camera,
                  lp_floor: float = LOW_PASS_FLOOR) -> ProjectedScene:
    """Project every kernel; drops those behind the near plane or whose
    3-sigma screen ellipse misses the viewport."""
    n = len(scene)
    fx, fy = camera.focal
    cx, cy = camera.principal_point
    width, height = camera.resolution

    if n == 0:
        return ProjectedScene(
            np.zeros((0, 2)), np.zeros((0, 2, 2)), np.zeros(0),
            np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int32),
        )

    keep = np.zeros(n, dtype=np.bool_)
    pixel_means = np.zeros((n, 2))
    cov2d = np.zeros((n, 2, 2))
    depths = np.zeros(n)
    colors = np.zeros((n, 3))
    _project_all(scene.means, scene.rotations, scene.scales, scene.opacities,
                 scene.sh, camera.world_to_camera.matrix,
                 camera.world_to_camera.translation, camera.center,
                 float(fx), float(fy), float(cx), float(cy),
                 float(width), float(height), float(camera.near_clip),
                 float(lp_floor), keep, pixel_means, cov2d, depths, colors)
    idx = np.nonzero(keep)[0]
    return ProjectedScene(
        pixel_means[idx], cov2d[idx], depths[idx], colors[idx],
        scene.opacities[idx].copy(), idx.astype(np.int32),
    )


def project_kernel(kernel, camera: Camera,
                   lp_floor: float = LOW_PASS_FLOOR) -> ProjectedSplat | None:
    """Project a single kernel; returns None when culled."""
    scene = SplatScene.from_kernels([kernel])
    projected = project_scene(scene, camera, lp_floor)
    if len(projected) == 0:
        return None
    return projected.splat(0)
