"""Wire format per PROTOCOL.md: length-prefixed JSON frames and canonical
output digests. Implemented from the protocol document; deliberately shares
no code with the runtime on the other side of the pipe."""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Any, BinaryIO

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 64 * 1024 * 1024
DEFAULT_OUTPUT_CAP_BYTES = 16 * 1024 * 1024


class FrameError(Exception):
    pass


def write_frame(stream: BinaryIO, frame: dict[str, Any]) -> None:
    payload = json.dumps(frame, ensure_ascii=False).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise FrameError(f"frame of {len(payload)} bytes exceeds the limit")
    stream.write(struct.pack(">I", len(payload)) + payload)
    stream.flush()


def read_frame(stream: BinaryIO) -> dict[str, Any] | None:
    header = stream.read(4)
    if not header:
        return None
    if len(header) < 4:
        raise FrameError("truncated frame header")
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise FrameError(f"declared frame length {length} exceeds the limit")
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
        raise FrameError("frame payload must be a JSON object")
    return frame


def canonical_encoding(value: Any) -> tuple[bytes, str]:
    """(bytes, tag): json-tagged sorted-key encoding, or repr fallback."""
    try:
        text = json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    except (TypeError, ValueError):
        return b"repr:" + repr(value).encode("utf-8"), "repr"
    return b"json:" + text.encode("utf-8"), "json"


def output_digest(value: Any) -> str:
    encoded, _ = canonical_encoding(value)
    return "sha256:" + hashlib.sha256(encoded).hexdigest()


def output_preview(value: Any, limit: int = 160) -> str:
    text = repr(value)
    if len(text) > limit:
        return text[: limit - 3] + "..."
    return text
