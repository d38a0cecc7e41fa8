"""Framed worker protocol: wire format, frame helpers, canonical digests.

The orchestrator talks to the stage-host worker over the worker's standard
input/output. Each frame is a 4-byte big-endian unsigned length followed by
a UTF-8 JSON object. Frame types and fields are documented in PROTOCOL.md
at the repository root; both sides of the boundary implement that document
independently.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Any, BinaryIO

PROTOCOL_VERSION = 1

#: Frames may not exceed this size in either direction.
MAX_FRAME_BYTES = 64 * 1024 * 1024

#: Largest canonical final-output encoding sent inline in a RESULT frame.
DEFAULT_OUTPUT_CAP_BYTES = 16 * 1024 * 1024

HELLO = "HELLO"
HELLO_ACK = "HELLO_ACK"
LOAD = "LOAD"
LOAD_OK = "LOAD_OK"
RUN = "RUN"
RESULT = "RESULT"
STAGE_ERROR = "STAGE_ERROR"
WRITE_OUTPUT = "WRITE_OUTPUT"
OUTPUT_WRITTEN = "OUTPUT_WRITTEN"
PROTOCOL_VIOLATION = "PROTOCOL_VIOLATION"
TERMINATE = "TERMINATE"


class FrameError(Exception):
    """Malformed frame on the wire (bad length, bad JSON, or not an object)."""


def encode_frame(frame: dict[str, Any]) -> bytes:
    payload = json.dumps(frame, ensure_ascii=False).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise FrameError(f"frame of {len(payload)} bytes exceeds the {MAX_FRAME_BYTES}-byte limit")
    return struct.pack(">I", len(payload)) + payload


def write_frame(stream: BinaryIO, frame: dict[str, Any]) -> None:
    stream.write(encode_frame(frame))
    stream.flush()


def read_frame(stream: BinaryIO) -> dict[str, Any] | None:
    """Read one frame; returns None on a clean end of stream."""
    header = stream.read(4)
    if not header:
        return None
    if len(header) < 4:
        raise FrameError("truncated frame header")
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise FrameError(f"declared frame length {length} exceeds the {MAX_FRAME_BYTES}-byte limit")
    payload = b""
    while len(payload) < length:
        chunk = stream.read(length - len(payload))
        if not chunk:
            raise FrameError("truncated frame payload")
        payload += chunk
    try:
        frame = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"frame payload is not UTF-8 JSON: {exc}") from exc
    if not isinstance(frame, dict):
        raise FrameError(f"frame payload must be a JSON object, got {type(frame).__name__}")
    return frame


def canonical_output_encoding(value: Any) -> tuple[bytes, str]:
    """Stable byte encoding of a stage output, plus its encoding tag.

    JSON-representable values get a sorted-key compact JSON encoding, so
    equal values digest equally across processes. Anything else falls back
    to ``repr``, which is only guaranteed stable within one process.
    """
    try:
        text = json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    except (TypeError, ValueError):
        return b"repr:" + repr(value).encode("utf-8"), "repr"
    return b"json:" + text.encode("utf-8"), "json"


def canonical_output_digest(value: Any) -> str:
    """``sha256:<hex>`` over the canonical encoding of a stage output."""
    encoded, _ = canonical_output_encoding(value)
    return "sha256:" + hashlib.sha256(encoded).hexdigest()


def output_preview(value: Any, limit: int = 160) -> str:
    text = repr(value)
    if len(text) > limit:
        return text[: limit - 3] + "..."
    return text
