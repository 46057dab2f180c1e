"""meshsplat: mesh-embedded Gaussian splatting with physics-driven editing."""

import os

# Prefer the OpenMP threading layer; the TBB probe warns on older TBB builds.
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from .camera import Camera, ProjectedSplat, project_kernel, project_scene
from .errors import (
    CatalogMissError,
    EmptySceneError,
    InvalidParameterError,
    MeshsplatError,
    NotFoundError,
    ParseError,
    SimulationDivergedError,
    UnsupportedVersionError,
)
from .geometry import RigidTransform, quat_from_axis_angle, quat_mul, quat_to_matrix
from .meshing import TriangleMesh, density_at, extract_mesh, mesh_object
from .metrics import psnr, ssim
from .render import ImageBuffer, composite_pixel, render, render_fast, render_oracle, save_image
from .splats import (
    GaussianKernel,
    SplatScene,
    covariance_from_rs,
    eval_kernel,
    eval_sh_color,
    mahalanobis_sq,
)

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "GaussianKernel",
    "ImageBuffer",
    "ProjectedSplat",
    "RigidTransform",
    "SplatScene",
    "TriangleMesh",
    "composite_pixel",
    "covariance_from_rs",
    "density_at",
    "eval_kernel",
    "eval_sh_color",
    "extract_mesh",
    "mahalanobis_sq",
    "mesh_object",
    "project_kernel",
    "project_scene",
    "psnr",
    "ssim",
    "render",
    "render_fast",
    "render_oracle",
    "save_image",
    "quat_from_axis_angle",
    "quat_mul",
    "quat_to_matrix",
    "MeshsplatError",
    "InvalidParameterError",
    "NotFoundError",
    "EmptySceneError",
    "CatalogMissError",
    "ParseError",
    "SimulationDivergedError",
    "UnsupportedVersionError",
]
