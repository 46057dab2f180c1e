"""Command-line surface.

Exit codes: 0 success; 2 missing or unparseable input (files, ids, script
errors); 3 invalid parameter values; 4 simulation divergence; 1 any other
failure. `render --reference` prints a machine-readable metrics line.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .camera import Camera
from .editing import relabel
from .engine import ScriptRunner, Session, load_session, session_from_scene_file
from .errors import (CatalogMissError, EmptySceneError, InvalidParameterError,
                     MeshsplatError, NotFoundError, ParseError,
                     SimulationDivergedError, UnsupportedVersionError)
from .meshing import extract_mesh, mesh_object
from .metrics import metrics_line, psnr, ssim
from .objmesh import save_obj
from .ply import load_ply, save_ply
from .render import ImageBuffer, render, save_image
from .script import load_script

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INPUT = 2
EXIT_PARAMS = 3
EXIT_DIVERGED = 4


def _camera_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--eye", type=float, nargs=3, default=(0.0, 0.0, -5.0))
    parser.add_argument("--look", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    parser.add_argument("--up", type=float, nargs=3, default=(0.0, 1.0, 0.0))
    parser.add_argument("--fov", type=float, default=60.0, help="horizontal fov, degrees")
    parser.add_argument("--res", type=int, nargs=2, default=(640, 480), metavar=("W", "H"))


def _camera_from_args(args) -> Camera:
    return Camera.look_at(args.eye, args.look, args.up, args.fov, tuple(args.res))


def cmd_render(args) -> int:
    scene = load_ply(args.scene)
    camera = _camera_from_args(args)
    mode = "oracle" if args.oracle else "fast"
    image = render(scene, camera, mode)
    save_image(image, args.out)
    print(f"rendered {len(scene)} kernels to {args.out} ({mode})")
    if args.reference:
        ref = ImageBuffer(np.load(args.reference).astype(np.float64),
                          np.ones(image.rgb.shape[:2]))
        print(metrics_line("render", psnr_db=psnr(image, ref), ssim=ssim(image, ref)))
    return EXIT_OK


def cmd_simulate(args) -> int:
    script = load_script(args.script)
    runner = ScriptRunner(script, render_mode="oracle" if args.oracle else "fast")
    timings = runner.run()
    for ft in timings:
        line = f"frame t={ft.time:.4f}s sim={ft.sim_ms:.2f}ms"
        if ft.path:
            line += f" binding={ft.binding_ms:.2f}ms render={ft.render_ms:.2f}ms -> {ft.path}"
        print(line)
    if runner.session.sim_state is not None:
        from .simulation import constraint_residuals

        residual = constraint_residuals(runner.session.sim_state,
                                        runner.session.constraints)
        speed = float(np.abs(runner.session.sim_state.velocities).max())
        print(metrics_line("simulate", frames=len(timings),
                           steady_residual=float(residual.max()) if len(residual) else 0.0,
                           max_speed=speed))
    if args.session_out:
        runner.session.save(args.session_out)
        print(f"session saved to {args.session_out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    scene = load_ply(args.scene)
    if args.object is not None:
        mesh = mesh_object(scene, args.object, args.iso, args.cell)
    else:
        mesh = extract_mesh(scene, args.iso, args.cell)
    save_obj(mesh, args.out)
    print(f"extracted {mesh.n_vertices} vertices / {mesh.n_faces} faces to {args.out}")
    return EXIT_OK


def cmd_edit(args) -> int:
    scene = load_ply(args.scene)
    session = Session(scene)
    if args.delete is not None:
        session.delete_object(args.delete)
    elif args.relabel is not None:
        start, stop, new_id = args.relabel
        session.scene = relabel(session.scene, start, stop, new_id)
    else:
        if args.object is None:
            raise InvalidParameterError("--object is required for transforms")
        rotation = (1.0, 0.0, 0.0, 0.0)
        if args.rotate is not None:
            from .geometry import quat_from_axis_angle

            ax, ay, az, deg = args.rotate
            rotation = quat_from_axis_angle([ax, ay, az], np.radians(deg))
        session.transform_object(args.object, rotation, tuple(args.translate),
                                 args.scale, args.pivot)
    save_ply(session.scene, args.out)
    print(f"wrote {len(session.scene)} kernels to {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .server import serve

    if args.session.endswith(".ply"):
        session = session_from_scene_file(args.session)
        if args.object is not None:
            if args.material:
                session.assign_material(args.object, args.material)
            session.build_deformable(args.object, args.iso, args.cell)
    else:
        session = load_session(args.session)
    server = serve(session, args.port, host=args.host)
    print(f"serving on ws://{args.host}:{server.port} (ctrl-c to stop)")
    try:
        server.wait()
    except KeyboardInterrupt:
        server.close()
    return EXIT_OK


def cmd_info(args) -> int:
    scene = load_ply(args.scene)
    lo, hi = scene.bounds
    print(f"kernels: {len(scene)}")
    print(f"segments: {', '.join(str(i) for i in scene.segment_ids())}")
    print(f"bounds: [{lo[0]:.4g} {lo[1]:.4g} {lo[2]:.4g}] .. [{hi[0]:.4g} {hi[1]:.4g} {hi[2]:.4g}]")
    print(f"scale range: {scene.scales.min():.4g} .. {scene.scales.max():.4g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshsplat",
        description="Mesh-embedded Gaussian splatting: render, mesh, simulate, edit, serve.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render one frame of a splat scene")
    p.add_argument("scene", help="input .ply")
    p.add_argument("--out", required=True, help="output image (.png/.ppm/.npy)")
    p.add_argument("--oracle", action="store_true", help="use the reference renderer")
    p.add_argument("--reference", help="linear .npy to compare against (prints metrics)")
    _camera_args(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("simulate", help="run an animation script headlessly")
    p.add_argument("script")
    p.add_argument("--oracle", action="store_true", help="render with the reference path")
    p.add_argument("--session-out", help="save the final session state")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("extract", help="extract a density isosurface mesh")
    p.add_argument("scene")
    p.add_argument("--out", required=True, help="output .obj")
    p.add_argument("--iso", type=float, default=0.1)
    p.add_argument("--cell", type=float, default=None)
    p.add_argument("--object", type=int, default=None, help="restrict to one segment")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("edit", help="transform, delete or relabel a segment")
    p.add_argument("scene")
    p.add_argument("--out", required=True)
    p.add_argument("--object", type=int, help="segment to transform")
    p.add_argument("--translate", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    p.add_argument("--rotate", type=float, nargs=4, metavar=("AX", "AY", "AZ", "DEG"))
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--pivot", type=float, nargs=3)
    p.add_argument("--delete", type=int, help="segment to remove")
    p.add_argument("--relabel", type=int, nargs=3, metavar=("START", "STOP", "ID"))
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("serve", help="run the live editing session server")
    p.add_argument("session", help=".msession file or a .ply to wrap")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--object", type=int, help="segment to make deformable (.ply input)")
    p.add_argument("--material", help="material for that segment")
    p.add_argument("--iso", type=float, default=0.1)
    p.add_argument("--cell", type=float, default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("info", help="print scene statistics")
    p.add_argument("scene")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_INPUT
    except (ParseError, NotFoundError, EmptySceneError, CatalogMissError,
            UnsupportedVersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InvalidParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAMS
    except SimulationDivergedError as exc:
        print(f"error: simulation diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except MeshsplatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
