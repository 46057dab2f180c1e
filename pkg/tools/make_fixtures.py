"""Regenerate the committed test fixtures.

Writes tests/fixtures/fixture_scene.ply (a small deterministic two-segment
scene) and tests/fixtures/golden_render.npy (the oracle renderer's linear
output for the fixture camera, stored float32). Run from the repo root:

    python tools/make_fixtures.py
"""

import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from meshsplat.camera import Camera  # noqa: E402
from meshsplat.fixtures import surface_asset_scene  # noqa: E402
from meshsplat.ply import save_ply  # noqa: E402
from meshsplat.render import render_oracle  # noqa: E402

FIXTURE_DIR = pathlib.Path(__file__).resolve().parents[1] / "tests" / "fixtures"

FIXTURE_CAMERA = dict(eye=(1.8, 1.5, 2.6), target=(0.0, 0.3, 0.0),
                      fov_deg=52.0, resolution=(128, 96))


def main() -> None:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    scene = surface_asset_scene(n_kernels=2000, seed=11)
    ply_path = FIXTURE_DIR / "fixture_scene.ply"
    save_ply(scene, ply_path)

    camera = Camera.look_at(FIXTURE_CAMERA["eye"], FIXTURE_CAMERA["target"],
                            fov_deg=FIXTURE_CAMERA["fov_deg"],
                            resolution=FIXTURE_CAMERA["resolution"])
    golden = render_oracle(scene, camera)
    np.save(FIXTURE_DIR / "golden_render.npy", golden.rgb.astype(np.float32))
    print(f"wrote {ply_path} ({ply_path.stat().st_size} bytes) and golden "
          f"({golden.rgb.shape})")


if __name__ == "__main__":
    main()
