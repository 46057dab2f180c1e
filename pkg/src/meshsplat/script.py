"""Headless animation scripts: a line-oriented, versioned text format.

Layout (see docs/formats.md for the full grammar):

    meshsplat-script v1
    scene <ply path>
    camera <name> eye X Y Z look X Y Z [up X Y Z] [fov DEG] [res W H]
    sim dt <s> [substeps N] [iterations N] [damping F]
    material <object_id> <name>
    bind <object_id> [iso V] [cell V]
    ground [height]
    at <t> pin <vertex> [to X Y Z]
    at <t> move_pin <vertex> to X Y Z [over <seconds>]
    at <t> release_pin <vertex>
    at <t> set_gravity X Y Z
    at <t> transform <object_id> [translate X Y Z] [rotate AX AY AZ DEG]
                                 [scale S] [pivot X Y Z]
    at <t> delete <object_id>
    at <t> assign_material <object_id> <name>
    at <t> render <camera> <output path>
    step_to <t>

Setup lines (scene/camera/sim/material/bind/ground) precede timed commands.
Timed command times must be non-decreasing; `step_to T` is shorthand for an
empty command at time T. Relative paths resolve against the script file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, UnsupportedVersionError

HEADER = "meshsplat-script v1"

TIMED_OPS = {"pin", "move_pin", "release_pin", "set_gravity", "transform",
             "delete", "assign_material", "render", "step_to"}


@dataclass
class CameraSpec:
    name: str
    eye: tuple
    look: tuple
    up: tuple = (0.0, 1.0, 0.0)
    fov_deg: float = 60.0
    resolution: tuple = (640, 480)


@dataclass
class ScriptCommand:
    time: float
    op: str
    args: dict = field(default_factory=dict)


@dataclass
class AnimationScript:
    scene_path: str | None
    cameras: dict[str, CameraSpec]
    sim_config: dict
    materials: list[tuple[int, str]]  # setup-time assignments
    bind: dict | None  # {"object_id", "iso", "cell"}
    ground: float | None
    commands: list[ScriptCommand]
    base_dir: str = "."

    def resolve(self, path: str) -> str:
        p = Path(path)
        return str(p if p.is_absolute() else Path(self.base_dir) / p)

    @property
    def duration(self) -> float:
        return self.commands[-1].time if self.commands else 0.0


def _floats(parts, n, ln):
    if len(parts) < n:
        raise ParseError(f"expected {n} numbers, got {len(parts)}", line=ln)
    try:
        return tuple(float(p) for p in parts[:n])
    except ValueError:
        raise ParseError(f"bad number in {parts[:n]}", line=ln) from None


def _keyword_values(parts, spec, ln):
    """Parse `key v1 v2 ...` groups; spec maps key -> arity (0 = single token)."""
    out = {}
    i = 0
    while i < len(parts):
        key = parts[i]
        if key not in spec:
            raise ParseError(f"unknown keyword {key!r}", line=ln)
        arity = spec[key]
        if arity == 0:
            out[key] = parts[i + 1]
            i += 2
        else:
            out[key] = _floats(parts[i + 1:], arity, ln)
            i += 1 + arity
    return out


def parse_script(text: str, base_dir: str = ".") -> AnimationScript:
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        head = lines[0].strip() if lines else ""
        if head.startswith("meshsplat-script"):
            raise UnsupportedVersionError(f"unsupported script version: {head!r}")
        raise ParseError(f"missing header {HEADER!r}", line=1)

    script = AnimationScript(None, {}, {}, [], None, None, [], base_dir)
    current_time = 0.0
    for ln, raw in enumerate(lines[1:], start=2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        op = parts[0]
        rest = parts[1:]

        if op == "at":
            t = _floats(rest, 1, ln)[0]
            if t < current_time - 1e-12:
                raise ParseError(f"command time {t} precedes {current_time}", line=ln)
            current_time = t
            if len(rest) < 2:
                raise ParseError("'at' needs a command", line=ln)
            op = rest[1]
            rest = rest[2:]
            if op not in TIMED_OPS:
                raise ParseError(f"unknown timed command {op!r}", line=ln)
        elif op == "step_to":
            t = _floats(rest, 1, ln)[0]
            if t < current_time - 1e-12:
                raise ParseError(f"step_to time {t} precedes {current_time}", line=ln)
            current_time = t
            script.commands.append(ScriptCommand(current_time, "step_to", {}))
            continue

        if op == "scene":
            if not rest:
                raise ParseError("scene needs a path", line=ln)
            script.scene_path = " ".join(rest)
        elif op == "camera":
            if len(rest) < 1:
                raise ParseError("camera needs a name", line=ln)
            kw = _keyword_values(rest[1:], {"eye": 3, "look": 3, "up": 3,
                                            "fov": 1, "res": 2}, ln)
            if "eye" not in kw or "look" not in kw:
                raise ParseError("camera needs eye and look", line=ln)
            spec = CameraSpec(rest[0], kw["eye"], kw["look"])
            if "up" in kw:
                spec.up = kw["up"]
            if "fov" in kw:
                spec.fov_deg = kw["fov"][0]
            if "res" in kw:
                spec.resolution = (int(kw["res"][0]), int(kw["res"][1]))
            script.cameras[spec.name] = spec
        elif op == "sim":
            kw = _keyword_values(rest, {"dt": 1, "substeps": 1, "iterations": 1,
                                        "damping": 1}, ln)
            for key, val in kw.items():
                script.sim_config[key] = val[0] if key in ("dt", "damping") else int(val[0])
        elif op == "material":
            if len(rest) != 2:
                raise ParseError("material needs: object_id name", line=ln)
            script.materials.append((int(rest[0]), rest[1]))
        elif op == "bind":
            if len(rest) < 1:
                raise ParseError("bind needs an object_id", line=ln)
            kw = _keyword_values(rest[1:], {"iso": 1, "cell": 1}, ln)
            script.bind = {"object_id": int(rest[0]),
                           "iso": kw.get("iso", (0.1,))[0],
                           "cell": kw.get("cell", (None,))[0]}
        elif op == "ground":
            script.ground = _floats(rest, 1, ln)[0] if rest else 0.0
        elif op == "gravity":
            script.commands.append(ScriptCommand(
                current_time, "set_gravity", {"gravity": _floats(rest, 3, ln)}))
        elif op in TIMED_OPS:
            script.commands.append(_timed(op, rest, current_time, ln))
        else:
            raise ParseError(f"unknown directive {op!r}", line=ln)

    for cmd in script.commands:
        if cmd.op == "render" and cmd.args["camera"] not in script.cameras:
            raise ParseError(f"render references undefined camera "
                             f"{cmd.args['camera']!r}")
    return script


def _timed(op: str, rest: list[str], t: float, ln: int) -> ScriptCommand:
    if op == "pin":
        if not rest:
            raise ParseError("pin needs a vertex index", line=ln)
        args = {"vertex": int(rest[0])}
        if len(rest) > 1:
            if rest[1] != "to":
                raise ParseError("pin syntax: pin V [to X Y Z]", line=ln)
            args["anchor"] = _floats(rest[2:], 3, ln)
        return ScriptCommand(t, "pin", args)
    if op == "move_pin":
        if len(rest) < 5 or rest[1] != "to":
            raise ParseError("move_pin syntax: move_pin V to X Y Z [over S]", line=ln)
        args = {"vertex": int(rest[0]), "target": _floats(rest[2:5], 3, ln)}
        if len(rest) > 5:
            if rest[5] != "over":
                raise ParseError("expected 'over <seconds>'", line=ln)
            args["span"] = _floats(rest[6:], 1, ln)[0]
        else:
            args["span"] = 0.0
        return ScriptCommand(t, "move_pin", args)
    if op == "release_pin":
        return ScriptCommand(t, "release_pin", {"vertex": int(rest[0])})
    if op == "set_gravity":
        return ScriptCommand(t, "set_gravity", {"gravity": _floats(rest, 3, ln)})
    if op == "transform":
        if not rest:
            raise ParseError("transform needs an object_id", line=ln)
        kw = _keyword_values(rest[1:], {"translate": 3, "rotate": 4, "scale": 1,
                                        "pivot": 3}, ln)
        return ScriptCommand(t, "transform", {"object_id": int(rest[0]), **kw})
    if op == "delete":
        return ScriptCommand(t, "delete", {"object_id": int(rest[0])})
    if op == "assign_material":
        if len(rest) != 2:
            raise ParseError("assign_material needs: object_id name", line=ln)
        return ScriptCommand(t, "assign_material",
                             {"object_id": int(rest[0]), "material": rest[1]})
    if op == "render":
        if len(rest) < 2:
            raise ParseError("render needs: camera path", line=ln)
        return ScriptCommand(t, "render", {"camera": rest[0], "path": " ".join(rest[1:])})
    raise ParseError(f"unknown timed command {op!r}", line=ln)


def load_script(path) -> AnimationScript:
    path = Path(path)
    return parse_script(path.read_text(), base_dir=str(path.parent))


def save_script(script: AnimationScript, path) -> None:
    lines = [HEADER]
    if script.scene_path:
        lines.append(f"scene {script.scene_path}")
    for cam in script.cameras.values():
        lines.append(
            f"camera {cam.name} eye {cam.eye[0]:g} {cam.eye[1]:g} {cam.eye[2]:g} "
            f"look {cam.look[0]:g} {cam.look[1]:g} {cam.look[2]:g} "
            f"up {cam.up[0]:g} {cam.up[1]:g} {cam.up[2]:g} "
            f"fov {cam.fov_deg:g} res {cam.resolution[0]} {cam.resolution[1]}")
    if script.sim_config:
        pieces = " ".join(f"{k} {v:g}" for k, v in script.sim_config.items())
        lines.append(f"sim {pieces}")
    for oid, name in script.materials:
        lines.append(f"material {oid} {name}")
    if script.bind:
        extra = f" iso {script.bind['iso']:g}"
        if script.bind.get("cell"):
            extra += f" cell {script.bind['cell']:g}"
        lines.append(f"bind {script.bind['object_id']}{extra}")
    if script.ground is not None:
        lines.append(f"ground {script.ground:g}")
    for cmd in script.commands:
        lines.append(_format_command(cmd))
    Path(path).write_text("\n".join(lines) + "\n")


def _format_command(cmd: ScriptCommand) -> str:
    a = cmd.args
    if cmd.op == "step_to":
        return f"step_to {cmd.time:g}"
    prefix = f"at {cmd.time:g} "
    if cmd.op == "pin":
        s = f"pin {a['vertex']}"
        if "anchor" in a:
            s += " to " + " ".join(f"{v:g}" for v in a["anchor"])
        return prefix + s
    if cmd.op == "move_pin":
        s = f"move_pin {a['vertex']} to " + " ".join(f"{v:g}" for v in a["target"])
        if a.get("span"):
            s += f" over {a['span']:g}"
        return prefix + s
    if cmd.op == "release_pin":
        return prefix + f"release_pin {a['vertex']}"
    if cmd.op == "set_gravity":
        return prefix + "set_gravity " + " ".join(f"{v:g}" for v in a["gravity"])
    if cmd.op == "transform":
        s = f"transform {a['object_id']}"
        for key in ("translate", "rotate", "scale", "pivot"):
            if key in a:
                vals = a[key]
                s += f" {key} " + " ".join(f"{v:g}" for v in vals)
        return prefix + s
    if cmd.op == "delete":
        return prefix + f"delete {a['object_id']}"
    if cmd.op == "assign_material":
        return prefix + f"assign_material {a['object_id']} {a['material']}"
    if cmd.op == "render":
        return prefix + f"render {a['camera']} {a['path']}"
    raise ValueError(f"unknown command {cmd.op!r}")
