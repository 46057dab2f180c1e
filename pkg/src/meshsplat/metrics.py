"""Image quality metrics over linear-light buffers.

Both metrics treat inputs as unit-dynamic-range arrays (H, W) or (H, W, C)
and are computed before any gamma encode.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidParameterError

PSNR_CAP_DB = 99.0  # reported for identical images instead of infinity

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _as_image(a) -> np.ndarray:
    if hasattr(a, "rgb"):
        a = a.rgb
    return np.asarray(a, dtype=np.float64)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB, MAX = 1.0; capped at 99 dB."""
    a = _as_image(a)
    b = _as_image(b)
    if a.shape != b.shape:
        raise InvalidParameterError(f"image dimensions differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 20.0 * np.log10(1.0 / np.sqrt(mse)))


def _gaussian_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * SSIM_SIGMA**2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Valid-mode 2D correlation of img with the window."""
    view = np.lib.stride_tricks.sliding_window_view(img, window.shape)
    return np.einsum("ijkl,kl->ij", view, window)


def ssim(a, b) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Uses C1 = 0.01^2 and C2 = 0.03^2 at unit dynamic range, averaged over
    windows and channels. Images must be at least the window size.
    """
    a = _as_image(a)
    b = _as_image(b)
    if a.shape != b.shape:
        raise InvalidParameterError(f"image dimensions differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise InvalidParameterError(
            f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM"
        )
    window = _gaussian_window()
    values = []
    for ch in range(a.shape[2]):
        x = a[:, :, ch]
        y = b[:, :, ch]
        mu_x = _windowed(x, window)
        mu_y = _windowed(y, window)
        xx = _windowed(x * x, window) - mu_x**2
        yy = _windowed(y * y, window) - mu_y**2
        xy = _windowed(x * y, window) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * xy + SSIM_C2)
        den = (mu_x**2 + mu_y**2 + SSIM_C1) * (xx + yy + SSIM_C2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


def metrics_line(name: str, **values) -> str:
    """Machine-readable one-line report: `metrics name key=value ...`."""
    parts = [f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in values.items()]
    return f"metrics {name} " + " ".join(parts)
