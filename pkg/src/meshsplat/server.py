"""Live editing session server.

One simulation thread owns the session: it drains the command queue between
steps (so every mutation happens on the sim thread), advances the clock at
the configured rate while running, and triggers a render whenever state or
camera changed. Rendering is best effort: each client holds a single
newest-frame slot, so slow consumers drop intermediate frames but always see
the latest state. Acks are sent after the command has been applied, and a
frame is never delivered to a client after an ack unless it already reflects
that command (cmd_seq ordering), which gives the documented staleness bound.

The first client to complete the hello exchange gets the write role; later
clients are read-only and receive error replies for mutating commands.
Malformed messages get an error reply and count toward a three-strike
disconnect.
"""

from __future__ import annotations

import queue
import threading
import time

import numpy as np

from . import protocol
from .camera import Camera
from .engine import Session
from .errors import MeshsplatError
from .render import render_fast, to_display_u8

DEFAULT_STEP_RATE = 60.0
MAX_STRIKES = 3


class _Client:
    _ids = 0

    def __init__(self, ws):
        _Client._ids += 1
        self.id = _Client._ids
        self.ws = ws
        self.outbox: queue.Queue = queue.Queue()
        self.frame_slot = [None]  # newest-wins
        self.frame_event = threading.Event()
        self.last_acked = 0
        self.last_frame_seq = 0
        self.strikes = 0
        self.role = "read"
        self.alive = True

    def push_text(self, text: str) -> None:
        self.outbox.put(text)

    def push_frame(self, frame) -> None:
        self.frame_slot[0] = frame
        self.frame_event.set()


class _Frame:
    __slots__ = ("frame_seq", "cmd_seq", "data")

    def __init__(self, frame_seq, cmd_seq, data):
        self.frame_seq = frame_seq
        self.cmd_seq = cmd_seq
        self.data = data


class SessionServer:
    def __init__(self, session: Session, port: int = 8765, host: str = "127.0.0.1",
                 step_rate: float = DEFAULT_STEP_RATE):
        from websockets.sync.server import serve as ws_serve

        self.session = session
        self.step_rate = float(step_rate)
        self.paused = False
        self.running = True

        self.commands: queue.Queue = queue.Queue()
        self.clients: list[_Client] = []
        self.clients_lock = threading.Lock()
        self.writer: _Client | None = None

        self.camera = session.cameras.get("live") or Camera.look_at(
            (1.8, 1.5, 2.6), (0.0, 0.4, 0.0), fov_deg=55, resolution=(320, 240))
        self.frame_seq = 0
        self.applied_seq = 0
        self.state_version = 1
        self.rendered_version = 0
        self.render_wakeup = threading.Event()
        self.last_step_ms = 0.0

        # warm the render path before accepting connections: first-frame
        # latency must not include JIT compilation
        render_fast(self.session.deformed_scene(), self.camera)

        self._server = ws_serve(self._handle_client, host, port, max_size=None)
        self.port = self._server.socket.getsockname()[1]
        self.host = host
        self._threads = [
            threading.Thread(target=self._server.serve_forever, daemon=True),
            threading.Thread(target=self._sim_loop, daemon=True),
            threading.Thread(target=self._render_loop, daemon=True),
        ]
        for t in self._threads:
            t.start()

    # -- client I/O ----------------------------------------------------------

    def _handle_client(self, ws) -> None:
        import socket as _socket

        try:
            # bounded send buffer keeps the newest-wins policy meaningful:
            # a slow reader backpressures the sender instead of the kernel
            # buffering many stale frames
            ws.socket.setsockopt(_socket.SOL_SOCKET, _socket.SO_SNDBUF, 1 << 19)
        except OSError:
            pass
        client = _Client(ws)
        with self.clients_lock:
            self.clients.append(client)
        sender = threading.Thread(target=self._sender_loop, args=(client,),
                                  daemon=True)
        sender.start()
        try:
            for raw in ws:
                if not self.running:
                    break
                if isinstance(raw, bytes):
                    client.strikes += 1
                    client.push_text(protocol.error(None, "binary frames are server to client only"))
                else:
                    try:
                        msg = protocol.decode_command(raw)
                    except ValueError as exc:
                        client.strikes += 1
                        client.push_text(protocol.error(None, str(exc)))
                        msg = None
                    if msg is not None:
                        self.commands.put((client, msg))
                if client.strikes >= MAX_STRIKES:
                    client.push_text(protocol.error(None, "too many protocol violations"))
                    break
        finally:
            client.alive = False
            client.outbox.put(None)
            client.frame_event.set()
            sender.join(timeout=1.0)  # flush queued replies before closing
            with self.clients_lock:
                if client in self.clients:
                    self.clients.remove(client)
                if self.writer is client:
                    self.writer = None

    def _sender_loop(self, client: _Client) -> None:
        # runs until the None sentinel arrives, so queued error replies are
        # flushed even when the receive side has already shut the client down
        while self.running:
            try:
                while True:  # drain all pending acks/errors/stats, in order
                    text = client.outbox.get_nowait()
                    if text is None:
                        return
                    client.ws.send(text)
            except queue.Empty:
                pass
            except Exception:
                return
            if client.frame_event.is_set():
                client.frame_event.clear()
                frame = client.frame_slot[0]
                if frame is None or frame.frame_seq <= client.last_frame_seq:
                    continue
                # staleness bound: never send a frame older than an ack
                if frame.cmd_seq < client.last_acked:
                    continue
                try:
                    client.ws.send(frame.data)
                    client.last_frame_seq = frame.frame_seq
                except Exception:
                    return
            else:
                client.frame_event.wait(timeout=0.02)

    # -- simulation owner ----------------------------------------------------

    def _sim_loop(self) -> None:
        period = 1.0 / self.step_rate
        next_tick = time.monotonic()
        last_stats = 0.0
        while self.running:
            changed = self._drain_commands()
            if not self.paused and self.session.sim_state is not None:
                t0 = time.perf_counter()
                try:
                    self.session.step_sim(1.0 / self.step_rate)
                except MeshsplatError as exc:
                    self._broadcast(protocol.error(None, f"simulation error: {exc}"))
                    self.paused = True
                self.last_step_ms = (time.perf_counter() - t0) * 1e3
                changed = True
            if changed:
                self.state_version += 1
                self.render_wakeup.set()
            st = self.session.sim_state
            now = time.monotonic()
            if st is not None and now - last_stats > 0.25:
                last_stats = now
                self._broadcast(protocol.sim_stats(
                    st.time, self.last_step_ms, st.n_vertices, self.paused))
            next_tick += period
            delay = next_tick - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            else:
                next_tick = time.monotonic()

    def _drain_commands(self) -> bool:
        changed = False
        while True:
            try:
                client, msg = self.commands.get_nowait()
            except queue.Empty:
                return changed
            changed = self._apply_command(client, msg) or changed

    def _apply_command(self, client: _Client, msg: dict) -> bool:
        seq = msg["seq"]
        cmd = msg["cmd"]
        try:
            if cmd == "hello":
                return self._apply_hello(client, msg)
            if client.role != "write" and cmd not in protocol.READ_ONLY_COMMANDS:
                raise MeshsplatError("read-only client; a writer is already connected")
            changed = self._dispatch(client, cmd, msg)
        except (MeshsplatError, KeyError, TypeError, ValueError) as exc:
            client.push_text(protocol.error(seq, str(exc)))
            return False
        client.push_text(protocol.ack(seq))
        client.last_acked = max(client.last_acked, seq)
        self.applied_seq = max(self.applied_seq, seq)
        return changed

    def _apply_hello(self, client: _Client, msg: dict) -> bool:
        if msg.get("version") != protocol.PROTOCOL_VERSION:
            client.push_text(protocol.error(
                msg["seq"], f"protocol version mismatch: server speaks "
                            f"{protocol.PROTOCOL_VERSION}"))
            return False
        with self.clients_lock:
            if self.writer is None:
                self.writer = client
                client.role = "write"
        mesh = self.session.current_mesh()
        # handles are [vertex_index, x, y, z] so pin commands can reference
        # server-side vertex ids even when subsampled
        handles = [] if mesh is None else _subsample(mesh.vertices, 1024)
        width, height = self.camera.resolution
        client.push_text(protocol.ack(
            msg["seq"],
            hello={
                "version": protocol.PROTOCOL_VERSION,
                "role": client.role,
                "materials": self.session.assignments.catalog.names(),
                "segments": [int(i) for i in self.session.scene.segment_ids()],
                "handles": handles,
                "width": width,
                "height": height,
                "pinned": self._pinned_vertices(),
            }))
        client.last_acked = max(client.last_acked, msg["seq"])
        self.applied_seq = max(self.applied_seq, msg["seq"])
        return True  # triggers an initial frame

    def _pinned_vertices(self) -> list:
        if self.session.constraints is None:
            return []
        return sorted(self.session.constraints._pin_by_vertex)

    def _dispatch(self, client: _Client, cmd: str, msg: dict) -> bool:
        s = self.session
        if cmd == "set_camera":
            self.camera = Camera.look_at(
                msg["eye"], msg["look"], msg.get("up", (0, 1, 0)),
                msg.get("fov", 55.0),
                (int(msg.get("width", 320)), int(msg.get("height", 240))))
            return True
        if cmd == "pin":
            s.pin(int(msg["vertex"]), msg.get("anchor"))
            return True
        if cmd == "move_pin":
            s.move_pin(int(msg["vertex"]), msg["anchor"])
            return True
        if cmd == "release_pin":
            s.release_pin(int(msg["vertex"]))
            return True
        if cmd == "transform_object":
            rotation = (1.0, 0.0, 0.0, 0.0)
            if "rotate" in msg:
                from .geometry import quat_from_axis_angle

                rotation = quat_from_axis_angle(
                    msg["rotate"]["axis"], np.radians(msg["rotate"]["deg"]))
            scale = float(msg.get("scale", 1.0))
            s.transform_object(int(msg["object"]), rotation,
                               msg.get("translate", (0.0, 0.0, 0.0)), scale,
                               msg.get("pivot"))
            return True
        if cmd == "delete_object":
            s.delete_object(int(msg["object"]))
            return True
        if cmd == "assign_material":
            s.assign_material(int(msg["object"]), msg["material"])
            return True
        if cmd == "pause":
            self.paused = True
            return False
        if cmd == "resume":
            self.paused = False
            return False
        if cmd == "step_rate":
            hz = float(msg["hz"])
            if not 1.0 <= hz <= 240.0:
                raise MeshsplatError(f"step_rate {hz} outside [1, 240]")
            self.step_rate = hz
            return False
        raise MeshsplatError(f"unhandled command {cmd!r}")

    # -- rendering -----------------------------------------------------------

    def _render_loop(self) -> None:
        while self.running:
            self.render_wakeup.wait(timeout=0.1)
            self.render_wakeup.clear()
            if not self.running:
                break
            version = self.state_version
            if version == self.rendered_version:
                continue
            cmd_seq = self.applied_seq
            scene = self.session.deformed_scene()
            camera = self.camera
            image = render_fast(scene, camera)
            rgba = np.dstack([to_display_u8(image),
                              np.full(image.rgb.shape[:2], 255, dtype=np.uint8)])
            self.frame_seq += 1
            frame = _Frame(self.frame_seq, cmd_seq, protocol.pack_frame(
                self.frame_seq, cmd_seq, image.width, image.height,
                rgba.tobytes()))
            self.rendered_version = version
            with self.clients_lock:
                for client in self.clients:
                    client.push_frame(frame)

    def _broadcast(self, text: str) -> None:
        with self.clients_lock:
            for client in self.clients:
                client.push_text(text)

    # -- lifecycle -----------------------------------------------------------

    def wait(self) -> None:
        while self.running:
            time.sleep(0.2)

    def close(self) -> None:
        self.running = False
        self.render_wakeup.set()
        self._server.shutdown()


def _subsample(vertices: np.ndarray, limit: int) -> list:
    stride = max(1, int(np.ceil(len(vertices) / limit)))
    return [[int(i), float(v[0]), float(v[1]), float(v[2])]
            for i, v in zip(range(0, len(vertices), stride), vertices[::stride])]


def serve(session: Session, port: int = 8765, host: str = "127.0.0.1",
          step_rate: float = DEFAULT_STEP_RATE) -> SessionServer:
    return SessionServer(session, port, host, step_rate)
