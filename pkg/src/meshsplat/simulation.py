"""Extended position-based dynamics on triangle meshes.

Per substep h: predicted positions x~ = x + h*v + h^2*g for vertices with
positive inverse mass, per-constraint Lagrange multipliers reset, then a
fixed number of sequential Gauss-Seidel passes applying

    dlambda = (-C - alpha_t * lambda) / (sum_i w_i |grad_i C|^2 + alpha_t)

with alpha_t = compliance / h^2, position updates x_i += w_i * dlambda *
grad_i C, and finally v = (x - x_prev) / h (times an optional damping
factor). Constraints project in construction order, which makes
trajectories bitwise reproducible.

Constraint kinds:
  distance  C = |x_a - x_b| - rest
  bending   C = dihedral(x_a..x_d) - rest angle, over the two triangles of
            an interior edge; gradients are derived analytically and sum to
            zero, so internal projections conserve momentum exactly
  pin       C = |x - anchor| with kinematic unit weight (the pinned vertex
            has inverse mass zero for everything else); zero compliance
            snaps the vertex to the anchor, this is the live drag path
  ground    C = y - height >= 0, zero compliance, multiplier clamped >= 0

Stiffness maps to compliance via thin-shell membrane/plate formulas:
distance alpha = 1/(E*t) and bending alpha = 12*(1-nu^2)/(E*t^3).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import InvalidParameterError, NotFoundError, SimulationDivergedError
from .meshing import TriangleMesh, edge_topology

KIND_DISTANCE = 0
KIND_BENDING = 1
KIND_PIN = 2
KIND_GROUND = 3

DEFAULT_DAMPING = 0.999  # velocity factor per substep; disable for momentum studies


@dataclass
class MaterialProperties:
    name: str
    density: float  # kg/m^3
    youngs_modulus: float  # Pa
    poisson_ratio: float  # in (-1, 0.5)
    thickness: float  # m, shell parameter

    def __post_init__(self):
        if self.density <= 0:
            raise InvalidParameterError("density must be positive")
        if self.youngs_modulus <= 0:
            raise InvalidParameterError("youngs_modulus must be positive")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise InvalidParameterError("poisson_ratio must lie in (-1, 0.5)")
        if self.thickness <= 0:
            raise InvalidParameterError("thickness must be positive")


@dataclass
class Constraint:
    kind: int
    indices: tuple  # participating vertex indices
    rest: float  # length (m) / dihedral angle (rad) / 0 / ground height
    compliance: float  # m/N for distance; >= 0
    anchor: np.ndarray | None = None  # pins only
    stored_inverse_mass: float = 0.0  # pins: inverse mass to restore on release

    def __post_init__(self):
        if self.compliance < 0:
            raise InvalidParameterError("compliance must be >= 0")
        if self.kind == KIND_DISTANCE and self.rest <= 0:
            raise InvalidParameterError("distance rest length must be > 0")
        if self.anchor is not None:
            self.anchor = np.asarray(self.anchor, dtype=np.float64).reshape(3)


class ConstraintSet:
    """Ordered constraints plus their packed numba-side arrays."""

    def __init__(self):
        self.items: list[Constraint] = []
        self._packed = None
        self._pin_by_vertex: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.items)

    def _invalidate(self):
        self._packed = None

    def add(self, constraint: Constraint) -> int:
        self.items.append(constraint)
        self._invalidate()
        if constraint.kind == KIND_PIN:
            self._pin_by_vertex[constraint.indices[0]] = len(self.items) - 1
        return len(self.items) - 1

    def add_distance(self, a: int, b: int, rest: float, compliance: float) -> int:
        return self.add(Constraint(KIND_DISTANCE, (int(a), int(b)), float(rest), float(compliance)))

    def add_bending(self, edge_a: int, edge_b: int, wing_a: int, wing_b: int,
                    rest_angle: float, compliance: float) -> int:
        return self.add(Constraint(KIND_BENDING, (int(edge_a), int(edge_b), int(wing_a), int(wing_b)),
                                   float(rest_angle), float(compliance)))

    def add_ground(self, n_vertices: int, height: float = 0.0) -> None:
        for v in range(n_vertices):
            self.add(Constraint(KIND_GROUND, (v,), float(height), 0.0))

    def pin_index(self, vertex: int) -> int | None:
        return self._pin_by_vertex.get(int(vertex))

    def packed(self):
        if self._packed is None:
            n = len(self.items)
            kinds = np.zeros(n, dtype=np.int64)
            indices = np.full((n, 4), -1, dtype=np.int64)
            rest = np.zeros(n)
            compliance = np.zeros(n)
            anchors = np.zeros((n, 3))
            for i, c in enumerate(self.items):
                kinds[i] = c.kind
                indices[i, :len(c.indices)] = c.indices
                rest[i] = c.rest
                compliance[i] = c.compliance
                if c.anchor is not None:
                    anchors[i] = c.anchor
            self._packed = (kinds, indices, rest, compliance, anchors)
        return self._packed


@dataclass
class SimState:
    positions: np.ndarray  # (V, 3)
    prev_positions: np.ndarray  # (V, 3)
    velocities: np.ndarray  # (V, 3)
    inverse_masses: np.ndarray  # (V,) >= 0; 0 = pinned
    lambdas: np.ndarray  # per-constraint accumulators of the last substep
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.prev_positions = np.ascontiguousarray(self.prev_positions, dtype=np.float64).reshape(n, 3)
        self.velocities = np.ascontiguousarray(self.velocities, dtype=np.float64).reshape(n, 3)
        self.inverse_masses = np.ascontiguousarray(self.inverse_masses, dtype=np.float64).reshape(n)
        self.lambdas = np.ascontiguousarray(self.lambdas, dtype=np.float64)
        if np.any(self.inverse_masses < 0) or not np.all(np.isfinite(self.inverse_masses)):
            raise InvalidParameterError("inverse masses must be finite and >= 0")

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    def snapshot_positions(self) -> np.ndarray:
        return self.positions.copy()

    def copy(self) -> "SimState":
        return SimState(self.positions.copy(), self.prev_positions.copy(),
                        self.velocities.copy(), self.inverse_masses.copy(),
                        self.lambdas.copy(), self.time)


def vertex_masses(mesh: TriangleMesh, material: MaterialProperties) -> np.ndarray:
    """Lumped shell masses: density * thickness * (incident face area sum)/3."""
    areas = mesh.face_areas()
    per_vertex = np.zeros(mesh.n_vertices)
    for corner in range(3):
        np.add.at(per_vertex, mesh.faces[:, corner], areas)
    return material.density * material.thickness * per_vertex / 3.0


def build_sim(mesh: TriangleMesh, material: MaterialProperties) -> tuple[SimState, ConstraintSet]:
    """Create particles from mesh vertices and distance/bending constraints.

    One distance constraint per unique edge, one bending constraint per
    interior edge (the dihedral over its two adjacent triangles, rest angle
    measured from the rest mesh). Writes the computed inverse masses back to
    mesh.inverse_mass.
    """
    if mesh.n_faces == 0:
        raise InvalidParameterError("mesh has no faces")
    masses = vertex_masses(mesh, material)
    if np.any(masses <= 0.0):
        raise InvalidParameterError("mesh has zero-area regions; vertex masses must be positive")
    inv_mass = 1.0 / masses
    mesh.inverse_mass = inv_mass.copy()

    constraints = ConstraintSet()
    alpha_d = 1.0 / (material.youngs_modulus * material.thickness)
    alpha_b = 12.0 * (1.0 - material.poisson_ratio**2) / (
        material.youngs_modulus * material.thickness**3)

    edges, adjacency = edge_topology(mesh.faces)
    v = mesh.vertices
    for (a, b), facelist in zip(edges, adjacency):
        rest = float(np.linalg.norm(v[a] - v[b]))
        if rest <= 0.0:
            raise InvalidParameterError(f"zero-length edge between vertices {a} and {b}")
        constraints.add_distance(a, b, rest, alpha_d)
    for (a, b), facelist in zip(edges, adjacency):
        if len(facelist) != 2:
            continue
        wing1 = _opposite_vertex(mesh.faces[facelist[0]], a, b)
        wing2 = _opposite_vertex(mesh.faces[facelist[1]], a, b)
        rest_angle = _dihedral(v[a], v[b], v[wing1], v[wing2])
        constraints.add_bending(a, b, wing1, wing2, rest_angle, alpha_b)

    state = SimState(
        positions=v.copy(), prev_positions=v.copy(),
        velocities=np.zeros_like(v), inverse_masses=inv_mass,
        lambdas=np.zeros(len(constraints)),
    )
    return state, constraints


def _opposite_vertex(face, a, b) -> int:
    for vid in face:
        if vid != a and vid != b:
            return int(vid)
    raise InvalidParameterError("face does not span the edge")


def _dihedral(xa, xb, xw1, xw2) -> float:
    e = xb - xa
    n1 = np.cross(e, xw1 - xa)
    n2 = np.cross(e, xw2 - xa)
    n1 = n1 / np.linalg.norm(n1)
    n2 = n2 / np.linalg.norm(n2)
    return float(np.arccos(np.clip(n1 @ n2, -1.0, 1.0)))


def pin_vertex(state: SimState, constraints: ConstraintSet, vertex: int,
               anchor=None, compliance: float = 0.0) -> int:
    """Freeze a vertex and anchor it; returns the pin constraint index."""
    vertex = int(vertex)
    if not 0 <= vertex < state.n_vertices:
        raise NotFoundError(f"vertex {vertex} out of range")
    existing = constraints.pin_index(vertex)
    if existing is not None:
        move_pin(state, constraints, vertex, anchor if anchor is not None
                 else state.positions[vertex])
        return existing
    anchor = np.array(state.positions[vertex] if anchor is None else anchor, dtype=np.float64)
    c = Constraint(KIND_PIN, (vertex,), 0.0, compliance, anchor,
                   stored_inverse_mass=float(state.inverse_masses[vertex]))
    idx = constraints.add(c)
    state.inverse_masses[vertex] = 0.0
    return idx


def move_pin(state: SimState, constraints: ConstraintSet, vertex: int, new_anchor) -> None:
    """Retarget an existing pin; this is the live drag path."""
    idx = constraints.pin_index(int(vertex))
    if idx is None:
        raise NotFoundError(f"vertex {vertex} is not pinned")
    constraints.items[idx].anchor = np.asarray(new_anchor, dtype=np.float64).reshape(3)
    constraints._invalidate()


def release_pin(state: SimState, constraints: ConstraintSet, vertex: int) -> None:
    """Remove a pin and restore the vertex's inverse mass."""
    vertex = int(vertex)
    idx = constraints.pin_index(vertex)
    if idx is None:
        raise NotFoundError(f"vertex {vertex} is not pinned")
    pin = constraints.items.pop(idx)
    state.inverse_masses[vertex] = pin.stored_inverse_mass
    constraints._pin_by_vertex.pop(vertex)
    for v, i in list(constraints._pin_by_vertex.items()):
        if i > idx:
            constraints._pin_by_vertex[v] = i - 1
    constraints._invalidate()


@njit(cache=True, nogil=True)
def _run_substeps(x, xprev, v, w, kinds, indices, rest, compliance, anchors,
                  lam, h, n_substeps, iterations, gx, gy, gz, damping):
    """Returns the 0-based substep index that produced non-finite positions,
    or -1 on success."""
    n = x.shape[0]
    n_c = kinds.shape[0]
    for sub in range(n_substeps):
        for i in range(n):
            xprev[i, 0] = x[i, 0]
            xprev[i, 1] = x[i, 1]
            xprev[i, 2] = x[i, 2]
            if w[i] > 0.0:
                x[i, 0] += h * v[i, 0] + h * h * gx
                x[i, 1] += h * v[i, 1] + h * h * gy
                x[i, 2] += h * v[i, 2] + h * h * gz
        for c in range(n_c):
            lam[c] = 0.0
        for _ in range(iterations):
            for c in range(n_c):
                kind = kinds[c]
                alpha_t = compliance[c] / (h * h)
                if kind == KIND_DISTANCE:
                    a = indices[c, 0]
                    b = indices[c, 1]
                    dx = x[a, 0] - x[b, 0]
                    dy = x[a, 1] - x[b, 1]
                    dz = x[a, 2] - x[b, 2]
                    length = np.sqrt(dx * dx + dy * dy + dz * dz)
                    if length < 1e-12:
                        continue
                    wsum = w[a] + w[b]
                    denom = wsum + alpha_t
                    if denom == 0.0:
                        continue
                    cval = length - rest[c]
                    dlam = (-cval - alpha_t * lam[c]) / denom
                    lam[c] += dlam
                    s = dlam / length
                    x[a, 0] += w[a] * s * dx
                    x[a, 1] += w[a] * s * dy
                    x[a, 2] += w[a] * s * dz
                    x[b, 0] -= w[b] * s * dx
                    x[b, 1] -= w[b] * s * dy
                    x[b, 2] -= w[b] * s * dz
                elif kind == KIND_BENDING:
                    i0 = indices[c, 0]
                    i1 = indices[c, 1]
                    i2 = indices[c, 2]
                    i3 = indices[c, 3]
                    ex = x[i1, 0] - x[i0, 0]
                    ey = x[i1, 1] - x[i0, 1]
                    ez = x[i1, 2] - x[i0, 2]
                    r3x = x[i2, 0] - x[i0, 0]
                    r3y = x[i2, 1] - x[i0, 1]
                    r3z = x[i2, 2] - x[i0, 2]
                    r4x = x[i3, 0] - x[i0, 0]
                    r4y = x[i3, 1] - x[i0, 1]
                    r4z = x[i3, 2] - x[i0, 2]
                    # raw normals of the two wings
                    n1x = ey * r3z - ez * r3y
                    n1y = ez * r3x - ex * r3z
                    n1z = ex * r3y - ey * r3x
                    n2x = ey * r4z - ez * r4y
                    n2y = ez * r4x - ex * r4z
                    n2z = ex * r4y - ey * r4x
                    l1 = np.sqrt(n1x * n1x + n1y * n1y + n1z * n1z)
                    l2 = np.sqrt(n2x * n2x + n2y * n2y + n2z * n2z)
                    if l1 < 1e-12 or l2 < 1e-12:
                        continue
                    n1x /= l1
                    n1y /= l1
                    n1z /= l1
                    n2x /= l2
                    n2y /= l2
                    n2z /= l2
                    d = n1x * n2x + n1y * n2y + n1z * n2z
                    if d > 1.0:
                        d = 1.0
                    elif d < -1.0:
                        d = -1.0
                    sin_sq = 1.0 - d * d
                    if sin_sq < 1e-9:
                        continue
                    inv_sin = 1.0 / np.sqrt(sin_sq)
                    # g1 = d(d)/d(n1_raw), g2 = d(d)/d(n2_raw)
                    g1x = (n2x - d * n1x) / l1
                    g1y = (n2y - d * n1y) / l1
                    g1z = (n2z - d * n1z) / l1
                    g2x = (n1x - d * n2x) / l2
                    g2y = (n1y - d * n2y) / l2
                    g2z = (n1z - d * n2z) / l2
                    # d(d)/dx1 = r3 x g1 + r4 x g2; d(d)/dx2 = g1 x e; d(d)/dx3 = g2 x e
                    de1x = r3y * g1z - r3z * g1y + r4y * g2z - r4z * g2y
                    de1y = r3z * g1x - r3x * g1z + r4z * g2x - r4x * g2z
                    de1z = r3x * g1y - r3y * g1x + r4x * g2y - r4y * g2x
                    d3x = g1y * ez - g1z * ey
                    d3y = g1z * ex - g1x * ez
                    d3z = g1x * ey - g1y * ex
                    d4x = g2y * ez - g2z * ey
                    d4y = g2z * ex - g2x * ez
                    d4z = g2x * ey - g2y * ex
                    d0x = -(de1x + d3x + d4x)
                    d0y = -(de1y + d3y + d4y)
                    d0z = -(de1z + d3z + d4z)
                    # grad C = -grad(d) / sqrt(1 - d^2)
                    gc0x = -d0x * inv_sin
                    gc0y = -d0y * inv_sin
                    gc0z = -d0z * inv_sin
                    gc1x = -de1x * inv_sin
                    gc1y = -de1y * inv_sin
                    gc1z = -de1z * inv_sin
                    gc2x = -d3x * inv_sin
                    gc2y = -d3y * inv_sin
                    gc2z = -d3z * inv_sin
                    gc3x = -d4x * inv_sin
                    gc3y = -d4y * inv_sin
                    gc3z = -d4z * inv_sin
                    wsum = (
                        w[i0] * (gc0x * gc0x + gc0y * gc0y + gc0z * gc0z)
                        + w[i1] * (gc1x * gc1x + gc1y * gc1y + gc1z * gc1z)
                        + w[i2] * (gc2x * gc2x + gc2y * gc2y + gc2z * gc2z)
                        + w[i3] * (gc3x * gc3x + gc3y * gc3y + gc3z * gc3z)
                    )
                    denom = wsum + alpha_t
                    if denom < 1e-12:
                        continue
                    cval = np.arccos(d) - rest[c]
                    dlam = (-cval - alpha_t * lam[c]) / denom
                    lam[c] += dlam
                    x[i0, 0] += w[i0] * dlam * gc0x
                    x[i0, 1] += w[i0] * dlam * gc0y
                    x[i0, 2] += w[i0] * dlam * gc0z
                    x[i1, 0] += w[i1] * dlam * gc1x
                    x[i1, 1] += w[i1] * dlam * gc1y
                    x[i1, 2] += w[i1] * dlam * gc1z
                    x[i2, 0] += w[i2] * dlam * gc2x
                    x[i2, 1] += w[i2] * dlam * gc2y
                    x[i2, 2] += w[i2] * dlam * gc2z
                    x[i3, 0] += w[i3] * dlam * gc3x
                    x[i3, 1] += w[i3] * dlam * gc3y
                    x[i3, 2] += w[i3] * dlam * gc3z
                elif kind == KIND_PIN:
                    # kinematic: unit weight, the vertex is mass-frozen otherwise
                    a = indices[c, 0]
                    dx = x[a, 0] - anchors[c, 0]
                    dy = x[a, 1] - anchors[c, 1]
                    dz = x[a, 2] - anchors[c, 2]
                    length = np.sqrt(dx * dx + dy * dy + dz * dz)
                    if length < 1e-15:
                        continue
                    dlam = (-length - alpha_t * lam[c]) / (1.0 + alpha_t)
                    lam[c] += dlam
                    s = dlam / length
                    x[a, 0] += s * dx
                    x[a, 1] += s * dy
                    x[a, 2] += s * dz
                else:  # KIND_GROUND, unilateral y >= height
                    a = indices[c, 0]
                    if w[a] == 0.0:
                        continue
                    cval = x[a, 1] - rest[c]
                    if cval >= 0.0 and lam[c] == 0.0:
                        continue
                    denom = w[a] + alpha_t
                    dlam = (-cval - alpha_t * lam[c]) / denom
                    new_lam = lam[c] + dlam
                    if new_lam < 0.0:
                        new_lam = 0.0
                    applied = new_lam - lam[c]
                    lam[c] = new_lam
                    x[a, 1] += w[a] * applied
        inv_h = 1.0 / h
        for i in range(n):
            v[i, 0] = (x[i, 0] - xprev[i, 0]) * inv_h * damping
            v[i, 1] = (x[i, 1] - xprev[i, 1]) * inv_h * damping
            v[i, 2] = (x[i, 2] - xprev[i, 2]) * inv_h * damping
        for i in range(n):
            if not (np.isfinite(x[i, 0]) and np.isfinite(x[i, 1]) and np.isfinite(x[i, 2])):
                return sub
    return -1


def step(state: SimState, constraints: ConstraintSet, dt: float, substeps: int = 10,
         iterations: int = 10, gravity=(0.0, -9.81, 0.0),
         damping: float = DEFAULT_DAMPING) -> SimState:
    """Advance the simulation by dt, mutating and returning `state`."""
    if dt <= 0:
        raise InvalidParameterError("dt must be positive")
    if substeps < 1 or iterations < 1:
        raise InvalidParameterError("substeps and iterations must be >= 1")
    kinds, indices, rest, compliance, anchors = constraints.packed()
    if len(state.lambdas) != len(constraints):
        state.lambdas = np.zeros(len(constraints))
    gx, gy, gz = (float(g) for g in gravity)
    h = dt / substeps
    bad = _run_substeps(state.positions, state.prev_positions, state.velocities,
                        state.inverse_masses, kinds, indices, rest, compliance,
                        anchors, state.lambdas, h, int(substeps), int(iterations),
                        gx, gy, gz, float(damping))
    if bad >= 0:
        t_fail = state.time + (bad + 1) * h
        blame = _first_bad_constraint(state, constraints)
        raise SimulationDivergedError(
            f"non-finite positions after substep {bad} (t={t_fail:.6g}s, constraint {blame})",
            time=t_fail, constraint=blame)
    state.time += dt
    return state


def _first_bad_constraint(state: SimState, constraints: ConstraintSet) -> int:
    bad_vertices = set(np.nonzero(~np.isfinite(state.positions).all(axis=1))[0].tolist())
    for i, c in enumerate(constraints.items):
        if any(v in bad_vertices for v in c.indices):
            return i
    return -1


def constraint_residuals(state: SimState, constraints: ConstraintSet) -> np.ndarray:
    """Current |C| per constraint (0 for satisfied ground contacts)."""
    x = state.positions
    out = np.zeros(len(constraints))
    for i, c in enumerate(constraints.items):
        if c.kind == KIND_DISTANCE:
            a, b = c.indices
            out[i] = abs(np.linalg.norm(x[a] - x[b]) - c.rest)
        elif c.kind == KIND_BENDING:
            a, b, w1, w2 = c.indices
            out[i] = abs(_dihedral(x[a], x[b], x[w1], x[w2]) - c.rest)
        elif c.kind == KIND_PIN:
            out[i] = float(np.linalg.norm(x[c.indices[0]] - c.anchor))
        else:
            out[i] = max(0.0, c.rest - x[c.indices[0], 1])
    return out
