"""Binary little-endian PLY I/O in the de-facto splat-asset layout.

Per-vertex properties: x y z, f_dc_0..2 (degree-0 SH per channel),
f_rest_0..44 (higher-order SH, channel-major), opacity (stored as a logit),
scale_0..2 (stored as logs), rot_0..3 (quaternion w x y z, normalized on
load). Assets with fewer f_rest properties (degrees 0..2) load zero-padded.
An optional uchar object_id property carries segment labels; without it a
`<path>.segments` sidecar (one id per line) is consulted, else all zeros.

Unknown extra properties (e.g. nx ny nz) are tolerated and skipped. Parse
failures raise ParseError with a byte offset.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ParseError
from .sh import N_SH_COEFFS
from .splats import SplatScene

_PLY_DTYPES = {
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "ushort": "<u2", "uint16": "<u2", "short": "<i2", "int16": "<i2",
    "uint": "<u4", "uint32": "<u4", "int": "<i4", "int32": "<i4",
}

_REST_COUNTS = {0: 0, 3: 1, 8: 2, 15: 3}  # per-channel rest coeffs -> degree


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    return np.log(p / (1.0 - p))


def sidecar_path(path) -> str:
    return str(path) + ".segments"


def load_ply(path) -> SplatScene:
    """Parse a splat PLY file into a SplatScene (kernel order preserved)."""
    with open(path, "rb") as fh:
        data = fh.read()

    offset = 0
    lines = []
    while True:
        end = data.find(b"\n", offset)
        if end < 0:
            raise ParseError("header never terminated with end_header", offset=offset)
        line = data[offset:end].decode("ascii", errors="replace").strip()
        lines.append((offset, line))
        offset = end + 1
        if line == "end_header":
            break
        if offset > 65536:
            raise ParseError("header unreasonably large", offset=offset)

    if not lines or lines[0][1] != "ply":
        raise ParseError("missing 'ply' magic", offset=0)

    fmt = None
    n_vertices = None
    properties: list[tuple[str, str]] = []
    in_vertex_element = False
    for at, line in lines[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
            if fmt != "binary_little_endian":
                raise ParseError(f"unsupported PLY format {fmt!r} "
                                 "(binary_little_endian required)", offset=at)
        elif parts[0] == "element":
            in_vertex_element = parts[1] == "vertex"
            if in_vertex_element:
                try:
                    n_vertices = int(parts[2])
                except (IndexError, ValueError):
                    raise ParseError("bad element vertex count", offset=at) from None
            elif n_vertices is None:
                raise ParseError(f"unexpected element {parts[1]!r} before vertex",
                                 offset=at)
        elif parts[0] == "property" and in_vertex_element:
            if parts[1] == "list":
                raise ParseError("list properties not supported for vertices", offset=at)
            if parts[1] not in _PLY_DTYPES:
                raise ParseError(f"unknown property type {parts[1]!r}", offset=at)
            properties.append((parts[2], _PLY_DTYPES[parts[1]]))

    if fmt is None:
        raise ParseError("missing format line", offset=0)
    if n_vertices is None:
        raise ParseError("missing 'element vertex' declaration", offset=0)

    names = [p[0] for p in properties]
    mandatory = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                 "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    for name in mandatory:
        if name not in names:
            raise ParseError(f"mandatory property {name!r} missing from header", offset=0)

    n_rest = sum(1 for n in names if n.startswith("f_rest_"))
    if n_rest % 3 != 0 or (n_rest // 3) not in _REST_COUNTS:
        raise ParseError(f"unsupported f_rest property count {n_rest} "
                         "(expected 0, 9, 24 or 45)", offset=0)

    dtype = np.dtype(properties)
    body = data[offset:]
    need = dtype.itemsize * n_vertices
    if len(body) < need:
        raise ParseError(
            f"truncated body: need {need} bytes for {n_vertices} vertices, "
            f"have {len(body)}", offset=offset + len(body))
    rows = np.frombuffer(body[:need], dtype=dtype)

    means = np.stack([rows["x"], rows["y"], rows["z"]], axis=1).astype(np.float64)
    opacities = _sigmoid(rows["opacity"].astype(np.float64))
    scales = np.exp(np.stack([rows["scale_0"], rows["scale_1"], rows["scale_2"]],
                             axis=1).astype(np.float64))
    rotations = np.stack([rows[f"rot_{i}"] for i in range(4)], axis=1).astype(np.float64)

    sh = np.zeros((n_vertices, 3, N_SH_COEFFS))
    for ch in range(3):
        sh[:, ch, 0] = rows[f"f_dc_{ch}"]
    per_channel = n_rest // 3
    for ch in range(3):
        for j in range(per_channel):
            sh[:, ch, 1 + j] = rows[f"f_rest_{ch * per_channel + j}"]

    if "object_id" in names:
        object_ids = rows["object_id"].astype(np.int32)
    else:
        object_ids = _load_sidecar(path, n_vertices)

    return SplatScene(means, rotations, scales, opacities, sh, object_ids)


def _load_sidecar(path, n_vertices: int) -> np.ndarray:
    side = sidecar_path(path)
    if not os.path.exists(side):
        return np.zeros(n_vertices, dtype=np.int32)
    with open(side) as fh:
        values = [line.strip() for line in fh if line.strip() and not line.startswith("#")]
    if len(values) != n_vertices:
        raise ParseError(f"segment sidecar has {len(values)} rows for "
                         f"{n_vertices} kernels", line=len(values))
    try:
        return np.array([int(v) for v in values], dtype=np.int32)
    except ValueError as exc:
        raise ParseError(f"bad segment sidecar entry: {exc}") from None


def save_ply(scene: SplatScene, path) -> None:
    """Write the canonical layout; segment ids go into a uchar property when
    they fit, otherwise into the sidecar file."""
    n = len(scene)
    ids_fit = n == 0 or int(scene.object_ids.max(initial=0)) <= 255
    fields = (
        [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
        + [(f"f_dc_{c}", "<f4") for c in range(3)]
        + [(f"f_rest_{j}", "<f4") for j in range(45)]
        + [("opacity", "<f4")]
        + [(f"scale_{a}", "<f4") for a in range(3)]
        + [(f"rot_{i}", "<f4") for i in range(4)]
    )
    if ids_fit:
        fields.append(("object_id", "u1"))
    rows = np.zeros(n, dtype=np.dtype(fields))
    if n:
        rows["x"], rows["y"], rows["z"] = scene.means.T
        for ch in range(3):
            rows[f"f_dc_{ch}"] = scene.sh[:, ch, 0]
            for j in range(15):
                rows[f"f_rest_{ch * 15 + j}"] = scene.sh[:, ch, 1 + j]
        rows["opacity"] = _logit(np.minimum(scene.opacities, 1.0 - 1e-7))
        for a in range(3):
            rows[f"scale_{a}"] = np.log(scene.scales[:, a])
        for i in range(4):
            rows[f"rot_{i}"] = scene.rotations[:, i]
        if ids_fit:
            rows["object_id"] = scene.object_ids.astype(np.uint8)

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    type_names = {"<f4": "float", "u1": "uchar"}
    header += [f"property {type_names[dt]} {name}" for name, dt in fields]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rows.tobytes())
    if not ids_fit:
        with open(sidecar_path(path), "w") as fh:
            fh.write("\n".join(str(i) for i in scene.object_ids) + "\n")
