"""Session state and the headless script runner.

A Session owns the authoritative scene, cameras, material assignments and at
most one active deformable: an extracted mesh whose XPBD state drives the
splats bound to it. Rendering always goes through `deformed_scene()`, which
maps bound kernels from their rest pose to the current mesh pose.

Editing a segment while it is the active deformable co-transforms the rest
mesh, simulation state and bindings, so rigid/uniform-scale edits stay
consistent with a running simulation. Deleting any other segment remaps the
binding indices. Deleting the deformable dissolves it.
"""

from __future__ import annotations

import io
import json
import time as _time
import zipfile
from dataclasses import dataclass, field

import numpy as np

from . import editing
from .binding import BindingSet, apply_deformation, bind_kernels
from .camera import Camera
from .errors import (InvalidParameterError, NotFoundError, ParseError,
                     UnsupportedVersionError)
from .geometry import RigidTransform, quat_from_axis_angle, quat_mul, quat_normalize, quat_to_matrix
from .materials import MaterialAssignments, MaterialCatalog
from .meshing import TriangleMesh, mesh_object
from .ply import load_ply
from .render import ImageBuffer, render, save_image
from .script import AnimationScript, CameraSpec
from .simulation import (KIND_DISTANCE, KIND_PIN, Constraint, ConstraintSet,
                         SimState, build_sim, move_pin, pin_vertex, release_pin,
                         step)

SESSION_FORMAT = "meshsplat-session"
SESSION_VERSION = 1

DEFAULT_SIM = {"dt": 1.0 / 60.0, "substeps": 15, "iterations": 20, "damping": 0.998}


def camera_from_spec(spec: CameraSpec) -> Camera:
    return Camera.look_at(spec.eye, spec.look, spec.up, spec.fov_deg, spec.resolution)


def camera_to_dict(cam: Camera) -> dict:
    return {
        "rotation": cam.world_to_camera.rotation.tolist(),
        "translation": cam.world_to_camera.translation.tolist(),
        "focal": list(cam.focal),
        "principal_point": list(cam.principal_point),
        "resolution": list(cam.resolution),
        "near_clip": cam.near_clip,
    }


def camera_from_dict(d: dict) -> Camera:
    return Camera(
        RigidTransform(d["rotation"], d["translation"]),
        tuple(d["focal"]), tuple(d["principal_point"]),
        (int(d["resolution"][0]), int(d["resolution"][1])), d["near_clip"],
    )


@dataclass
class PinDrag:
    """Scripted anchor interpolation for one pinned vertex."""

    vertex: int
    t0: float
    t1: float
    start: np.ndarray
    target: np.ndarray

    def anchor_at(self, t: float) -> np.ndarray:
        if self.t1 <= self.t0 or t >= self.t1:
            return self.target
        u = max(0.0, (t - self.t0) / (self.t1 - self.t0))
        return self.start + u * (self.target - self.start)


@dataclass
class FrameTiming:
    time: float
    sim_ms: float = 0.0
    binding_ms: float = 0.0
    render_ms: float = 0.0
    path: str = ""


class Session:
    def __init__(self, scene, catalog: MaterialCatalog | None = None):
        self.scene = scene
        self.cameras: dict[str, Camera] = {}
        self.assignments = MaterialAssignments(catalog)
        self.gravity = np.array([0.0, -9.81, 0.0])
        self.sim_config = dict(DEFAULT_SIM)
        self.clock = 0.0

        self.bound_object: int | None = None
        self.rest_mesh: TriangleMesh | None = None
        self.bindings: BindingSet | None = None
        self.sim_state: SimState | None = None
        self.constraints: ConstraintSet | None = None
        self.ground_height: float | None = None

        self.drags: list[PinDrag] = []
        self.frozen_kernels = 0

    # -- deformable lifecycle ------------------------------------------------

    def build_deformable(self, object_id: int, iso: float = 0.1,
                         cell: float | None = None) -> TriangleMesh:
        """Extract an isosurface mesh for one segment, build its XPBD state
        from the assigned material and bind the segment's kernels to it."""
        mesh = mesh_object(self.scene, object_id, iso, cell)
        if mesh.n_faces == 0:
            raise InvalidParameterError(
                f"iso level {iso} produced an empty mesh for object {object_id}")
        material = self.assignments.material_for(object_id)
        state, constraints = build_sim(mesh, material)
        if self.ground_height is not None:
            constraints.add_ground(state.n_vertices, self.ground_height)

        mask = self.scene.object_ids == object_id
        global_idx = np.nonzero(mask)[0]
        sub = self.scene.select(mask)
        bs = bind_kernels(sub, mesh)
        self.bindings = BindingSet(
            bs.rest_mesh, global_idx[bs.kernel_indices], bs.face_indices,
            bs.barycentric, bs.normal_offsets, bs.rest_rotations,
            global_idx[bs.unbound])
        self.bound_object = int(object_id)
        self.rest_mesh = mesh
        self.sim_state = state
        self.constraints = constraints
        return mesh

    def set_ground(self, height: float = 0.0) -> None:
        self.ground_height = float(height)
        if self.sim_state is not None:
            self.constraints.add_ground(self.sim_state.n_vertices, height)

    def dissolve_deformable(self) -> None:
        self.bound_object = None
        self.rest_mesh = None
        self.bindings = None
        self.sim_state = None
        self.constraints = None
        self.drags = []

    # -- simulation ----------------------------------------------------------

    def _apply_drags(self) -> None:
        t = self.sim_state.time
        done = []
        for drag in self.drags:
            move_pin(self.sim_state, self.constraints, drag.vertex, drag.anchor_at(t))
            if t >= drag.t1:
                done.append(drag)
        for drag in done:
            self.drags.remove(drag)

    def step_sim(self, dt: float | None = None) -> None:
        if self.sim_state is None:
            raise InvalidParameterError("no deformable is built; nothing to simulate")
        cfg = self.sim_config
        dt = cfg["dt"] if dt is None else dt
        self._apply_drags()
        step(self.sim_state, self.constraints, dt, cfg["substeps"],
             cfg["iterations"], tuple(self.gravity), cfg["damping"])
        self.clock = self.sim_state.time

    def advance_to(self, target: float) -> int:
        """Step the simulation (if any) in dt increments up to `target`."""
        steps = 0
        dt = self.sim_config["dt"]
        if self.sim_state is None:
            self.clock = max(self.clock, target)
            return 0
        while self.sim_state.time + dt <= target + 1e-9:
            self.step_sim(dt)
            steps += 1
        return steps

    def pin(self, vertex: int, anchor=None) -> int:
        if self.sim_state is None:
            raise InvalidParameterError("no deformable is built; nothing to pin")
        return pin_vertex(self.sim_state, self.constraints, vertex, anchor)

    def start_drag(self, vertex: int, target, span: float = 0.0) -> None:
        if self.constraints is None or self.constraints.pin_index(int(vertex)) is None:
            raise NotFoundError(f"vertex {vertex} is not pinned")
        t = self.sim_state.time
        idx = self.constraints.pin_index(int(vertex))
        start = self.constraints.items[idx].anchor.copy()
        target = np.asarray(target, dtype=np.float64)
        if span <= 0.0:
            move_pin(self.sim_state, self.constraints, vertex, target)
        else:
            self.drags = [d for d in self.drags if d.vertex != int(vertex)]
            self.drags.append(PinDrag(int(vertex), t, t + span, start, target))

    def move_pin(self, vertex: int, anchor) -> None:
        if self.sim_state is None:
            raise InvalidParameterError("no deformable is built")
        move_pin(self.sim_state, self.constraints, vertex, anchor)

    def release_pin(self, vertex: int) -> None:
        if self.sim_state is None:
            raise InvalidParameterError("no deformable is built")
        self.drags = [d for d in self.drags if d.vertex != int(vertex)]
        release_pin(self.sim_state, self.constraints, vertex)

    def current_mesh(self) -> TriangleMesh | None:
        if self.sim_state is None:
            return self.rest_mesh
        return TriangleMesh(self.sim_state.snapshot_positions(),
                            self.rest_mesh.faces, self.rest_mesh.inverse_mass)

    # -- rendering -----------------------------------------------------------

    def deformed_scene(self):
        if self.bindings is None or self.sim_state is None:
            return self.scene
        mesh_now = self.current_mesh()
        scene, frozen = apply_deformation(self.bindings, mesh_now, self.scene)
        self.frozen_kernels = frozen
        return scene

    def render(self, camera, mode: str = "fast") -> ImageBuffer:
        if isinstance(camera, str):
            if camera not in self.cameras:
                raise NotFoundError(f"camera {camera!r} not defined")
            camera = self.cameras[camera]
        return render(self.deformed_scene(), camera, mode)

    # -- edits ---------------------------------------------------------------

    def transform_object(self, object_id: int, rotation=(1.0, 0.0, 0.0, 0.0),
                         translation=(0.0, 0.0, 0.0), scale: float = 1.0,
                         pivot=None) -> None:
        object_id = int(object_id)
        if pivot is None:
            mask = self.scene.object_ids == object_id
            if not np.any(mask):
                raise NotFoundError(f"scene has no kernels with object_id {object_id}")
            pivot = self.scene.means[mask].mean(axis=0)
        pivot = np.asarray(pivot, dtype=np.float64)
        self.scene = editing.transform_object(self.scene, object_id, rotation,
                                              translation, scale, pivot)
        if object_id == self.bound_object and self.sim_state is not None:
            self._co_transform_deformable(rotation, translation, float(scale), pivot)

    def _co_transform_deformable(self, rotation, translation, scale, pivot):
        q = quat_normalize(np.asarray(rotation, dtype=np.float64))
        rot = quat_to_matrix(q)
        t = np.asarray(translation, dtype=np.float64)

        def xform(pts):
            return pivot + scale * (pts - pivot) @ rot.T + t

        st = self.sim_state
        st.positions = np.ascontiguousarray(xform(st.positions))
        st.prev_positions = np.ascontiguousarray(xform(st.prev_positions))
        st.velocities = np.ascontiguousarray(scale * st.velocities @ rot.T)
        self.rest_mesh = TriangleMesh(xform(self.rest_mesh.vertices),
                                      self.rest_mesh.faces, self.rest_mesh.inverse_mass)
        for c in self.constraints.items:
            if c.kind == KIND_PIN:
                c.anchor = xform(c.anchor[None])[0]
            elif c.kind == KIND_DISTANCE:
                c.rest *= scale
        self.constraints._invalidate()
        b = self.bindings
        self.bindings = BindingSet(
            self.rest_mesh, b.kernel_indices, b.face_indices, b.barycentric,
            b.normal_offsets * scale, quat_mul(q, b.rest_rotations), b.unbound)

    def delete_object(self, object_id: int) -> None:
        object_id = int(object_id)
        keep = self.scene.object_ids != object_id
        self.scene = editing.delete_object(self.scene, object_id)
        if object_id == self.bound_object:
            self.dissolve_deformable()
            return
        if self.bindings is not None:
            remap = np.cumsum(keep) - 1
            b = self.bindings
            self.bindings = BindingSet(
                b.rest_mesh, remap[b.kernel_indices], b.face_indices, b.barycentric,
                b.normal_offsets, b.rest_rotations, remap[b.unbound])

    def assign_material(self, object_id: int, material: str | None = None,
                        classifier=None, image=None):
        return self.assignments.assign(self.scene, object_id, material, classifier, image)

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "format": SESSION_FORMAT,
            "version": SESSION_VERSION,
            "clock": self.clock,
            "gravity": self.gravity.tolist(),
            "sim_config": self.sim_config,
            "ground_height": self.ground_height,
            "bound_object": self.bound_object,
            "cameras": {name: camera_to_dict(cam) for name, cam in self.cameras.items()},
            "assignments": [
                {"object_id": r.object_id, "material": r.material,
                 "confidence": r.confidence, "source": r.source}
                for r in self.assignments.records.values()
            ],
            "catalog": {
                name: {"density": m.density, "youngs_modulus": m.youngs_modulus,
                       "poisson_ratio": m.poisson_ratio, "thickness": m.thickness}
                for name, m in self.assignments.catalog.entries.items()
            },
            "drags": [
                {"vertex": d.vertex, "t0": d.t0, "t1": d.t1,
                 "start": d.start.tolist(), "target": d.target.tolist()}
                for d in self.drags
            ],
        }
        arrays = {
            "scene_means": self.scene.means, "scene_rotations": self.scene.rotations,
            "scene_scales": self.scene.scales, "scene_opacities": self.scene.opacities,
            "scene_sh": self.scene.sh, "scene_object_ids": self.scene.object_ids,
        }
        if self.bound_object is not None:
            b = self.bindings
            st = self.sim_state
            arrays.update({
                "mesh_vertices": self.rest_mesh.vertices,
                "mesh_faces": self.rest_mesh.faces,
                "mesh_inverse_mass": self.rest_mesh.inverse_mass,
                "bind_kernel_indices": b.kernel_indices,
                "bind_face_indices": b.face_indices,
                "bind_barycentric": b.barycentric,
                "bind_normal_offsets": b.normal_offsets,
                "bind_rest_rotations": b.rest_rotations,
                "bind_unbound": b.unbound,
                "sim_positions": st.positions, "sim_prev": st.prev_positions,
                "sim_velocities": st.velocities, "sim_inverse_masses": st.inverse_masses,
                "sim_lambdas": st.lambdas, "sim_time": np.array(st.time),
            })
            kinds, indices, rest, compliance, anchors = self.constraints.packed()
            stored = np.array([c.stored_inverse_mass for c in self.constraints.items])
            arrays.update({
                "con_kinds": kinds, "con_indices": indices, "con_rest": rest,
                "con_compliance": compliance, "con_anchors": anchors,
                "con_stored_w": stored,
            })
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
            zf.writestr("meta.json", json.dumps(meta, indent=1, sort_keys=True))
            zf.writestr("arrays.npz", buf.getvalue())

    @classmethod
    def load(cls, path) -> "Session":
        from .simulation import MaterialProperties
        from .splats import SplatScene

        with zipfile.ZipFile(path) as zf:
            try:
                meta = json.loads(zf.read("meta.json"))
            except KeyError:
                raise ParseError("session archive lacks meta.json") from None
            if meta.get("format") != SESSION_FORMAT:
                raise ParseError(f"not a {SESSION_FORMAT} file")
            if meta.get("version") != SESSION_VERSION:
                raise UnsupportedVersionError(
                    f"session version {meta.get('version')} not supported "
                    f"(this build reads version {SESSION_VERSION})")
            with zf.open("arrays.npz") as fh:
                arrays = dict(np.load(io.BytesIO(fh.read())))

        catalog = MaterialCatalog({
            name: MaterialProperties(name, c["density"], c["youngs_modulus"],
                                     c["poisson_ratio"], c["thickness"])
            for name, c in meta["catalog"].items()
        })
        scene = SplatScene(arrays["scene_means"], arrays["scene_rotations"],
                           arrays["scene_scales"], arrays["scene_opacities"],
                           arrays["scene_sh"], arrays["scene_object_ids"])
        sess = cls(scene, catalog)
        sess.clock = float(meta["clock"])
        sess.gravity = np.array(meta["gravity"])
        sess.sim_config = dict(meta["sim_config"])
        sess.ground_height = meta["ground_height"]
        sess.cameras = {name: camera_from_dict(d) for name, d in meta["cameras"].items()}
        from .materials import AssignmentRecord

        for rec in meta["assignments"]:
            sess.assignments.records[int(rec["object_id"])] = AssignmentRecord(
                int(rec["object_id"]), rec["material"], rec["confidence"], rec["source"])

        if meta["bound_object"] is not None:
            sess.bound_object = int(meta["bound_object"])
            sess.rest_mesh = TriangleMesh(arrays["mesh_vertices"], arrays["mesh_faces"],
                                          arrays["mesh_inverse_mass"])
            sess.bindings = BindingSet(
                sess.rest_mesh, arrays["bind_kernel_indices"], arrays["bind_face_indices"],
                arrays["bind_barycentric"], arrays["bind_normal_offsets"],
                arrays["bind_rest_rotations"], arrays["bind_unbound"])
            sess.sim_state = SimState(
                arrays["sim_positions"], arrays["sim_prev"], arrays["sim_velocities"],
                arrays["sim_inverse_masses"], arrays["sim_lambdas"],
                float(arrays["sim_time"]))
            sess.constraints = _constraints_from_arrays(arrays)
            sess.drags = [
                PinDrag(d["vertex"], d["t0"], d["t1"], np.array(d["start"]),
                        np.array(d["target"]))
                for d in meta.get("drags", [])
            ]
        return sess


def _constraints_from_arrays(arrays) -> ConstraintSet:
    cs = ConstraintSet()
    kinds = arrays["con_kinds"]
    indices = arrays["con_indices"]
    rest = arrays["con_rest"]
    compliance = arrays["con_compliance"]
    anchors = arrays["con_anchors"]
    stored = arrays["con_stored_w"]
    n_participants = {0: 2, 1: 4, 2: 1, 3: 1}
    for i in range(len(kinds)):
        kind = int(kinds[i])
        idx = tuple(int(v) for v in indices[i, :n_participants[kind]])
        anchor = anchors[i].copy() if kind == KIND_PIN else None
        cs.add(Constraint(kind, idx, float(rest[i]), float(compliance[i]),
                          anchor, float(stored[i])))
    return cs


def save_session(session: Session, path) -> None:
    session.save(path)


def load_session(path) -> Session:
    return Session.load(path)


def session_from_scene_file(path, catalog: MaterialCatalog | None = None) -> Session:
    return Session(load_ply(path), catalog)


class ScriptRunner:
    """Executes an AnimationScript deterministically against a fresh Session."""

    def __init__(self, script: AnimationScript, session: Session | None = None,
                 render_mode: str = "fast"):
        self.script = script
        self.render_mode = render_mode
        if session is None:
            if not script.scene_path:
                raise ParseError("script defines no scene")
            session = session_from_scene_file(script.resolve(script.scene_path))
        self.session = session
        self.timings: list[FrameTiming] = []
        self.rendered: list[str] = []
        self._setup()

    def _setup(self) -> None:
        s = self.session
        for name, spec in self.script.cameras.items():
            s.cameras[name] = camera_from_spec(spec)
        s.sim_config.update(self.script.sim_config)
        for oid, name in self.script.materials:
            s.assign_material(oid, name)
        if self.script.ground is not None:
            s.set_ground(self.script.ground)
        if self.script.bind is not None:
            b = self.script.bind
            s.build_deformable(b["object_id"], b["iso"], b["cell"])

    def run(self) -> list[FrameTiming]:
        for cmd in self.script.commands:
            t0 = _time.perf_counter()
            self.session.advance_to(cmd.time)
            sim_ms = (_time.perf_counter() - t0) * 1e3
            self._apply(cmd, sim_ms)
        return self.timings

    def _apply(self, cmd, sim_ms: float) -> None:
        s = self.session
        a = cmd.args
        if cmd.op == "step_to":
            self.timings.append(FrameTiming(cmd.time, sim_ms=sim_ms))
        elif cmd.op == "pin":
            s.pin(a["vertex"], a.get("anchor"))
        elif cmd.op == "move_pin":
            s.start_drag(a["vertex"], a["target"], a.get("span", 0.0))
        elif cmd.op == "release_pin":
            s.release_pin(a["vertex"])
        elif cmd.op == "set_gravity":
            s.gravity = np.array(a["gravity"], dtype=np.float64)
        elif cmd.op == "transform":
            rotation = (1.0, 0.0, 0.0, 0.0)
            if "rotate" in a:
                ax, ay, az, deg = a["rotate"]
                rotation = quat_from_axis_angle([ax, ay, az], np.radians(deg))
            scale = a.get("scale", 1.0)
            if isinstance(scale, (tuple, list)):
                scale = scale[0]
            s.transform_object(a["object_id"], rotation,
                               a.get("translate", (0.0, 0.0, 0.0)), scale,
                               a.get("pivot"))
        elif cmd.op == "delete":
            s.delete_object(a["object_id"])
        elif cmd.op == "assign_material":
            s.assign_material(a["object_id"], a["material"])
        elif cmd.op == "render":
            t0 = _time.perf_counter()
            scene_view = s.deformed_scene()
            binding_ms = (_time.perf_counter() - t0) * 1e3
            t0 = _time.perf_counter()
            image = render(scene_view, s.cameras[a["camera"]], self.render_mode)
            render_ms = (_time.perf_counter() - t0) * 1e3
            out_path = self.script.resolve(a["path"])
            save_image(image, out_path)
            self.rendered.append(out_path)
            self.timings.append(FrameTiming(cmd.time, sim_ms, binding_ms,
                                            render_ms, out_path))
        else:
            raise ParseError(f"unknown command {cmd.op!r}")
