"""Front-to-back splat compositing: brute-force oracle and tiled fast path.

Both renderers share one projection pass and one per-pixel formula:
effective alpha = min(0.99, opacity * exp(-0.5 * d^T cov2d^-1 d)), colors
accumulate as C = sum_i T_i * a_i * c_i with T the running transmittance,
stopping early once T < 1e-4. Splats are composited in ascending view depth,
ties broken by ascending source kernel index. A splat contributes to a pixel
only within Mahalanobis radius 3 of its 2D mean.

The oracle walks every surviving splat per pixel (quadratic, reference
semantics); the fast path bins splats into 16x16 pixel tiles and composites
tiles in parallel. Per pixel both execute the identical arithmetic sequence,
so their outputs agree to the last bit; tests pin a 1e-5 tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .camera import Camera, ProjectedScene, project_scene
from .errors import InvalidParameterError
from .splats import SplatScene

TILE_SIZE = 16
ALPHA_CLAMP = 0.99
MIN_TRANSMITTANCE = 1e-4
SUPPORT_MAHALANOBIS_SQ = 9.0


@dataclass
class ImageBuffer:
    """Linear-light RGB in [0, 1] plus per-pixel final transmittance."""

    rgb: np.ndarray  # (height, width, 3) float64
    transmittance: np.ndarray  # (height, width) float64

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    def max_channel_diff(self, other: "ImageBuffer") -> float:
        if self.rgb.shape != other.rgb.shape:
            raise InvalidParameterError("image dimensions differ")
        return float(np.max(np.abs(self.rgb - other.rgb))) if self.rgb.size else 0.0


def composite_pixel(splats, pixel) -> tuple[np.ndarray, float]:
    """Reference compositing of depth-sorted splats at one pixel.

    `splats` must already be sorted ascending by view_depth; callers decide
    which splats cover the pixel. Returns (rgb, final transmittance).
    """
    pixel = np.asarray(pixel, dtype=np.float64)
    color = np.zeros(3)
    transmittance = 1.0
    for s in splats:
        d = pixel - s.pixel_mean
        a, b, c = s.cov2d[0, 0], s.cov2d[0, 1], s.cov2d[1, 1]
        det = a * c - b * b
        q = (c * d[0] * d[0] - 2.0 * b * d[0] * d[1] + a * d[1] * d[1]) / det
        alpha = min(ALPHA_CLAMP, s.opacity * np.exp(-0.5 * q))
        color += transmittance * alpha * s.color
        transmittance *= 1.0 - alpha
        if transmittance < MIN_TRANSMITTANCE:
            break
    return color, transmittance


@njit(cache=True, nogil=True, parallel=True)
def _composite_all(px, py, conics, colors, opacities32, width, height, rgb, trans):
    n = px.shape[0]
    for r in prange(height):
        for c in range(width):
            t = 1.0
            red = 0.0
            green = 0.0
            blue = 0.0
            for s in range(n):
                dx = c - px[s]
                dy = r - py[s]
                # grouped exactly as in the tiled kernel so both paths run
                # the same arithmetic sequence per pixel
                q = conics[s, 0] * dx * dx + (2.0 * conics[s, 1] * dy) * dx \
                    + conics[s, 2] * dy * dy
                if q > SUPPORT_MAHALANOBIS_SQ:
                    continue
                # falloff in single precision (the conventional rasterizer
                # precision); accumulation stays double
                alpha = float(opacities32[s] * np.exp(np.float32(-0.5 * q)))
                if alpha > ALPHA_CLAMP:
                    alpha = ALPHA_CLAMP
                ta = t * alpha
                red += ta * colors[s, 0]
                green += ta * colors[s, 1]
                blue += ta * colors[s, 2]
                t *= 1.0 - alpha
                if t < MIN_TRANSMITTANCE:
                    break
            rgb[r, c, 0] = red
            rgb[r, c, 1] = green
            rgb[r, c, 2] = blue
            trans[r, c] = t


@njit(cache=True, nogil=True)
def _bin_tiles(px, py, radii, width, height, tiles_x, tiles_y):
    """Count-then-fill binning of splats (given in composite order) into the
    tiles their support box overlaps; per-tile lists inherit the order."""
    n = px.shape[0]
    n_tiles = tiles_x * tiles_y
    t0x = np.empty(n, dtype=np.int64)
    t1x = np.empty(n, dtype=np.int64)
    t0y = np.empty(n, dtype=np.int64)
    t1y = np.empty(n, dtype=np.int64)
    counts = np.zeros(n_tiles + 1, dtype=np.int64)
    for s in range(n):
        x0 = int(np.floor((px[s] - radii[s, 0]) / TILE_SIZE))
        x1 = int(np.floor((px[s] + radii[s, 0]) / TILE_SIZE))
        y0 = int(np.floor((py[s] - radii[s, 1]) / TILE_SIZE))
        y1 = int(np.floor((py[s] + radii[s, 1]) / TILE_SIZE))
        t0x[s] = max(x0, 0)
        t1x[s] = min(x1, tiles_x - 1)
        t0y[s] = max(y0, 0)
        t1y[s] = min(y1, tiles_y - 1)
        for ty in range(t0y[s], t1y[s] + 1):
            for tx in range(t0x[s], t1x[s] + 1):
                counts[ty * tiles_x + tx + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    entries = np.empty(offsets[-1], dtype=np.int64)
    for s in range(n):
        for ty in range(t0y[s], t1y[s] + 1):
            for tx in range(t0x[s], t1x[s] + 1):
                tile = ty * tiles_x + tx
                entries[fill[tile]] = s
                fill[tile] += 1
    return offsets, entries


@njit(cache=True, nogil=True, parallel=True)
def _composite_tiles(tile_order, px, py, radii, conics, colors, opacities32,
                     offsets, entries, width, height, tiles_x, tiles_y, rgb, trans):
    """Splat-outer, pixel-inner compositing per tile.

    Each splat only visits the pixels of its own support box; because splats
    are walked in global depth order and each pixel keeps its own running
    transmittance, every pixel sees the exact arithmetic sequence of the
    per-pixel reference loop. tile_order interleaves tile indices so heavy
    (object-covering) tiles spread evenly across worker threads.
    """
    n_tiles = tiles_x * tiles_y
    for ti in prange(n_tiles):
        tile = tile_order[ti]
        ty = tile // tiles_x
        tx = tile % tiles_x
        r0 = ty * TILE_SIZE
        r1 = min(r0 + TILE_SIZE, height)
        c0 = tx * TILE_SIZE
        c1 = min(c0 + TILE_SIZE, width)
        for r in range(r0, r1):
            for c in range(c0, c1):
                rgb[r, c, 0] = 0.0
                rgb[r, c, 1] = 0.0
                rgb[r, c, 2] = 0.0
                trans[r, c] = 1.0
        live = (r1 - r0) * (c1 - c0)  # pixels still above the termination floor
        for e in range(offsets[tile], offsets[tile + 1]):
            if live == 0:
                break
            s = entries[e]
            # support box of the splat, padded one pixel, clipped to the tile
            sr0 = max(r0, int(np.ceil(py[s] - radii[s, 1])) - 1)
            sr1 = min(r1 - 1, int(np.floor(py[s] + radii[s, 1])) + 1)
            sc0 = max(c0, int(np.ceil(px[s] - radii[s, 0])) - 1)
            sc1 = min(c1 - 1, int(np.floor(px[s] + radii[s, 0])) + 1)
            # hoist per-splat attributes; the compiler cannot prove these
            # arrays distinct from the output buffers on its own
            ca = conics[s, 0]
            cb = conics[s, 1]
            cc = conics[s, 2]
            mx = px[s]
            my = py[s]
            op = opacities32[s]
            col_r = colors[s, 0]
            col_g = colors[s, 1]
            col_b = colors[s, 2]
            for r in range(sr0, sr1 + 1):
                dy = r - my
                qy = cc * dy * dy
                by = 2.0 * cb * dy
                for c in range(sc0, sc1 + 1):
                    t = trans[r, c]
                    if t < MIN_TRANSMITTANCE:
                        continue
                    dx = c - mx
                    q = ca * dx * dx + by * dx + qy
                    if q > SUPPORT_MAHALANOBIS_SQ:
                        continue
                    alpha = float(op * np.exp(np.float32(-0.5 * q)))
                    if alpha > ALPHA_CLAMP:
                        alpha = ALPHA_CLAMP
                    ta = t * alpha
                    rgb[r, c, 0] += ta * col_r
                    rgb[r, c, 1] += ta * col_g
                    rgb[r, c, 2] += ta * col_b
                    t = t * (1.0 - alpha)
                    trans[r, c] = t
                    if t < MIN_TRANSMITTANCE:
                        live -= 1
        # clamp fp residue so channels stay inside [0, 1]
        for r in range(r0, r1):
            for c in range(c0, c1):
                for ch in range(3):
                    v = rgb[r, c, ch]
                    if v < 0.0:
                        rgb[r, c, ch] = 0.0
                    elif v > 1.0:
                        rgb[r, c, ch] = 1.0


@njit(cache=True, nogil=True, parallel=True)
def _gather(order, pixel_means, conics_in, colors_in, opacities_in, radii_in,
            px, py, conics, colors, opacities, radii):
    for i in prange(order.shape[0]):
        s = order[i]
        px[i] = pixel_means[s, 0]
        py[i] = pixel_means[s, 1]
        for k in range(3):
            conics[i, k] = conics_in[s, k]
            colors[i, k] = colors_in[s, k]
        opacities[i] = opacities_in[s]
        radii[i, 0] = radii_in[s, 0]
        radii[i, 1] = radii_in[s, 1]


def _sorted_arrays(projected: ProjectedScene):
    order = projected.sorted_order()
    n = len(order)
    px = np.empty(n)
    py = np.empty(n)
    conics = np.empty((n, 3))
    colors = np.empty((n, 3))
    opacities = np.empty(n)
    radii = np.empty((n, 2))
    _gather(order, projected.pixel_means, projected.conics, projected.colors,
            projected.opacities, projected.radii, px, py, conics, colors,
            opacities, radii)
    return px, py, conics, colors, opacities, radii


def render_oracle(scene: SplatScene, camera: Camera) -> ImageBuffer:
    """Reference renderer: every pixel tests every surviving splat."""
    width, height = camera.resolution
    rgb = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    projected = project_scene(scene, camera)
    if len(projected):
        px, py, conics, colors, opacities, _ = _sorted_arrays(projected)
        _composite_all(px, py, conics, colors, opacities.astype(np.float32),
                       width, height, rgb, trans)
    np.clip(rgb, 0.0, 1.0, out=rgb)
    return ImageBuffer(rgb, trans)


def render_fast(scene: SplatScene, camera: Camera) -> ImageBuffer:
    """Tile-binned renderer; same contract and math as render_oracle."""
    width, height = camera.resolution
    projected = project_scene(scene, camera)
    if not len(projected):
        return ImageBuffer(np.zeros((height, width, 3)), np.ones((height, width)))
    rgb = np.empty((height, width, 3))
    trans = np.empty((height, width))
    px, py, conics, colors, opacities, radii = _sorted_arrays(projected)
    tiles_x = (width + TILE_SIZE - 1) // TILE_SIZE
    tiles_y = (height + TILE_SIZE - 1) // TILE_SIZE
    offsets, entries = _bin_tiles(px, py, radii, width, height, tiles_x, tiles_y)
    n_tiles = tiles_x * tiles_y
    stride = min(16, n_tiles)
    tile_order = np.concatenate([np.arange(s, n_tiles, stride)
                                 for s in range(stride)])
    _composite_tiles(tile_order, px, py, radii, conics, colors,
                     opacities.astype(np.float32), offsets, entries,
                     width, height, tiles_x, tiles_y, rgb, trans)
    return ImageBuffer(rgb, trans)


def render(scene: SplatScene, camera: Camera, mode: str = "fast") -> ImageBuffer:
    if mode == "fast":
        return render_fast(scene, camera)
    if mode == "oracle":
        return render_oracle(scene, camera)
    raise InvalidParameterError(f"unknown render mode {mode!r}")


def to_display_u8(buffer: ImageBuffer) -> np.ndarray:
    """Gamma-2.2 encode to 8-bit; applied only at file export."""
    encoded = np.clip(buffer.rgb, 0.0, 1.0) ** (1.0 / 2.2)
    return (np.round(encoded * 255.0)).astype(np.uint8)


def save_image(buffer: ImageBuffer, path) -> None:
    """Write an 8-bit image file; .png and .ppm supported, .npy saves the
    raw linear float buffer instead (no gamma)."""
    path = str(path)
    if path.endswith(".npy"):
        np.save(path, buffer.rgb.astype(np.float32))
        return
    data = to_display_u8(buffer)
    if path.endswith(".ppm"):
        with open(path, "wb") as f:
            f.write(b"P6\n%d %d\n255\n" % (buffer.width, buffer.height))
            f.write(data.tobytes())
        return
    if path.endswith(".png"):
        from PIL import Image

        Image.fromarray(data, mode="RGB").save(path)
        return
    raise InvalidParameterError(f"unsupported image extension: {path}")
