"""Wavefront OBJ mesh I/O: vertices and triangular faces only."""

from __future__ import annotations

import numpy as np

from .errors import ParseError
from .meshing import TriangleMesh


def load_obj(path) -> TriangleMesh:
    vertices = []
    faces = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ParseError("vertex line needs 3 coordinates", line=ln)
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError:
                    raise ParseError("bad vertex coordinate", line=ln) from None
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ParseError("only triangular faces supported", line=ln)
                try:
                    # "f 1", "f 1/2", "f 1/2/3", "f 1//3" all reference vertex 1
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                except ValueError:
                    raise ParseError("bad face index", line=ln) from None
                faces.append([i - 1 if i > 0 else len(vertices) + i for i in idx])
            # vn/vt/usemtl and friends are ignored
    vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise ParseError("face references a vertex that was never defined")
    return TriangleMesh(vertices, faces)


def save_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# meshsplat mesh: {mesh.n_vertices} vertices, {mesh.n_faces} faces\n")
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
