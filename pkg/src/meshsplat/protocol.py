"""Wire protocol shared by the session server and its clients.

Text frames carry JSON. Client commands all have "cmd" and a client-chosen
strictly increasing "seq"; the server answers every command with either
{"type": "ack", "seq": n, ...} or {"type": "error", "seq": n, "message": m}.
The hello ack's payload describes the session (version, materials, segments,
pinnable handle positions, frame size, granted role).

Binary frames are rendered images: a 16-byte little-endian header
(frame_seq u32, cmd_seq u32, width u16, height u16, encoding u8, flags u8,
reserved u16) followed by the payload. Encoding 0 is raw RGBA8 row-major,
gamma-encoded; cmd_seq is the newest command already applied to the state
the frame was rendered from. See docs/protocol.md.
"""

from __future__ import annotations

import json
import struct

PROTOCOL_VERSION = 1

FRAME_HEADER = struct.Struct("<IIHHBBH")
ENCODING_RAW_RGBA = 0
ENCODING_PNG = 1

CLIENT_COMMANDS = frozenset({
    "hello", "set_camera", "pin", "move_pin", "release_pin",
    "transform_object", "delete_object", "assign_material",
    "pause", "resume", "step_rate",
})

# commands a read-only client may still issue
READ_ONLY_COMMANDS = frozenset({"hello", "set_camera"})


def encode_message(payload: dict) -> str:
    return json.dumps(payload, separators=(",", ":"))


def decode_command(text: str) -> dict:
    """Parse and structurally validate one client command."""
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"not valid JSON: {exc}") from None
    if not isinstance(msg, dict):
        raise ValueError("command must be a JSON object")
    cmd = msg.get("cmd")
    if cmd not in CLIENT_COMMANDS:
        raise ValueError(f"unknown command {cmd!r}")
    seq = msg.get("seq")
    if not isinstance(seq, int) or seq < 1:
        raise ValueError("command needs a positive integer 'seq'")
    return msg


def ack(seq: int, **extra) -> str:
    out = {"type": "ack", "seq": seq}
    out.update(extra)
    return encode_message(out)


def error(seq, message: str) -> str:
    return encode_message({"type": "error", "seq": seq, "message": message})


def sim_stats(time_s: float, step_ms: float, vertices: int, paused: bool) -> str:
    return encode_message({"type": "sim_stats", "time": time_s,
                           "step_ms": step_ms, "vertices": vertices,
                           "paused": paused})


def pack_frame(frame_seq: int, cmd_seq: int, width: int, height: int,
               payload: bytes, encoding: int = ENCODING_RAW_RGBA) -> bytes:
    header = FRAME_HEADER.pack(frame_seq & 0xFFFFFFFF, cmd_seq & 0xFFFFFFFF,
                               width, height, encoding, 0, 0)
    return header + payload


def unpack_frame(data: bytes):
    """Returns (frame_seq, cmd_seq, width, height, encoding, payload)."""
    if len(data) < FRAME_HEADER.size:
        raise ValueError(f"frame shorter than header: {len(data)} bytes")
    frame_seq, cmd_seq, width, height, encoding, _flags, _r = \
        FRAME_HEADER.unpack_from(data)
    return frame_seq, cmd_seq, width, height, encoding, data[FRAME_HEADER.size:]
