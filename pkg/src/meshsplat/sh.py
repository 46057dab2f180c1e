"""Real spherical-harmonic color evaluation.

Basis and coefficient layout follow the de-facto splat-asset convention:
coefficients are ordered by (l, m) as index l*(l+1)+m for l = 0..3, and a
channel value is 0.5 + sum(c_lm * Y_lm(d)), clamped to [0, 1]. The basis
signs fold the Condon-Shortley phase, i.e. Y_lm here equals
sqrt(2)*Re(Y_l^m) for m>0, sqrt(2)*Im(Y_l^|m|) for m<0 and Y_l^0 for m=0.
"""

from __future__ import annotations

import numpy as np

MAX_SH_DEGREE = 3
N_SH_COEFFS = (MAX_SH_DEGREE + 1) ** 2  # 16 per channel

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def sh_basis(dirs) -> np.ndarray:
    """Evaluate all 16 basis functions at unit direction(s); (..., 3) -> (..., 16)."""
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    b = np.empty(d.shape[:-1] + (N_SH_COEFFS,), dtype=np.float64)
    b[..., 0] = SH_C0
    b[..., 1] = -SH_C1 * y
    b[..., 2] = SH_C1 * z
    b[..., 3] = -SH_C1 * x
    b[..., 4] = SH_C2[0] * xy
    b[..., 5] = SH_C2[1] * yz
    b[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
    b[..., 7] = SH_C2[3] * xz
    b[..., 8] = SH_C2[4] * (xx - yy)
    b[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
    b[..., 10] = SH_C3[1] * xy * z
    b[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
    b[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    b[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
    b[..., 14] = SH_C3[5] * z * (xx - yy)
    b[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return b


def eval_sh(coeffs, dirs) -> np.ndarray:
    """Color(s) from per-channel coefficients (..., 3, 16) and direction(s) (..., 3).

    Returns values in [0, 1] after the 0.5 offset and clamp.
    """
    basis = sh_basis(dirs)
    raw = 0.5 + np.einsum("...ck,...k->...c", np.asarray(coeffs, dtype=np.float64), basis)
    return np.clip(raw, 0.0, 1.0)
