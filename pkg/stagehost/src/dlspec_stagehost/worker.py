"""Frame loop: HELLO → LOAD(stages, ctx) → RUN(initial_data)* → TERMINATE.

One LOAD may serve many RUNs. Out-of-order or malformed frames get a
PROTOCOL_VIOLATION reply and a non-zero exit. Inter-stage data stays in
this process; RESULT carries digests, previews, metrics, and the final
output only when its canonical JSON encoding fits under the cap.
"""

from __future__ import annotations

import hashlib
import os
import sys
from pathlib import Path
from typing import Any, BinaryIO

from .framing import (
    DEFAULT_OUTPUT_CAP_BYTES,
    PROTOCOL_VERSION,
    FrameError,
    canonical_encoding,
    read_frame,
    write_frame,
)
from .pipeline import PipelineResult, StageFailure, compile_stages, execute_pipeline

_UNSET = object()


def _output_cap() -> int:
    raw = os.environ.get("DLSPEC_STAGE_OUTPUT_CAP", "")
    try:
        return int(raw) if raw else DEFAULT_OUTPUT_CAP_BYTES
    except ValueError:
        return DEFAULT_OUTPUT_CAP_BYTES


def _result_frame(result: PipelineResult) -> dict[str, Any]:
    encoded, encoding = canonical_encoding(result.final_output)
    frame: dict[str, Any] = {
        "type": "RESULT",
        "final_output_encoding": encoding,
        "final_output_digest": "sha256:" + hashlib.sha256(encoded).hexdigest(),
        "truncated": False,
        "stage_results": [outcome.to_frame() for outcome in result.outcomes],
        "metrics": {**result.metrics, "pipeline_wall_time_ms": result.pipeline_wall_time_ms},
    }
    if encoding == "json":
        if len(encoded) <= _output_cap():
            frame["final_output"] = result.final_output
        else:
            frame["truncated"] = True
    return frame


class _Session:
    def __init__(self, stdout: BinaryIO):
        self.stdout = stdout
        self.greeted = False
        self.functions = None
        self.ctx: dict[str, Any] = {}
        self.last_output: Any = _UNSET

    def reply(self, frame: dict[str, Any]) -> None:
        write_frame(self.stdout, frame)

    def violation(self, message: str) -> int:
        self.reply({"type": "PROTOCOL_VIOLATION", "message": message})
        return 1

    def on_hello(self, frame: dict[str, Any]) -> int | None:
        if frame.get("protocol_version") != PROTOCOL_VERSION:
            return self.violation(f"unsupported protocol version {frame.get('protocol_version')!r}")
        self.greeted = True
        self.reply({"type": "HELLO_ACK", "protocol_version": PROTOCOL_VERSION})
        return None

    def on_load(self, frame: dict[str, Any]) -> int | None:
        stages = frame.get("stages")
        if not isinstance(stages, dict):
            return self.violation("LOAD frame has no stages mapping")
        ctx = frame.get("ctx")
        if not isinstance(ctx, dict):
            return self.violation("LOAD frame has no ctx object")
        try:
            self.functions = compile_stages(stages)
        except StageFailure as failure:
            self.reply(failure.to_frame())
            return None
        self.ctx = ctx
        self.last_output = _UNSET
        self.reply({"type": "LOAD_OK"})
        return None

    def on_run(self, frame: dict[str, Any]) -> int | None:
        if self.functions is None:
            return self.violation("RUN before LOAD")
        try:
            result = execute_pipeline(self.functions, self.ctx, frame.get("initial_data", []))
        except StageFailure as failure:
            self.reply(failure.to_frame())
            return None
        self.last_output = result.final_output
        self.reply(_result_frame(result))
        return None

    def on_write_output(self, frame: dict[str, Any]) -> int | None:
        if self.last_output is _UNSET:
            return self.violation("WRITE_OUTPUT before a successful RUN")
        scratch = self.ctx.get("scratch_dir")
        if not isinstance(scratch, str) or not scratch:
            return self.violation("ctx has no scratch_dir to write into")
        filename = frame.get("filename") or "final-output.bin"
        target = Path(scratch) / Path(filename).name
        encoded, _ = canonical_encoding(self.last_output)
        target.write_bytes(encoded)
        self.reply({"type": "OUTPUT_WRITTEN", "path": str(target)})
        return None


def serve(stdin: BinaryIO, stdout: BinaryIO) -> int:
    """Process frames until TERMINATE or end of stream."""
    session = _Session(stdout)
    handlers = {
        "LOAD": session.on_load,
        "RUN": session.on_run,
        "WRITE_OUTPUT": session.on_write_output,
    }
    while True:
        try:
            frame = read_frame(stdin)
        except FrameError as exc:
            return session.violation(str(exc))
        if frame is None:
            return 0
        frame_type = frame.get("type")
        if frame_type == "HELLO":
            status = session.on_hello(frame)
        elif frame_type == "TERMINATE":
            return 0
        elif not session.greeted:
            status = session.violation("HELLO must come first")
        elif frame_type in handlers:
            status = handlers[frame_type](frame)
        else:
            status = session.violation(f"unknown frame type {frame_type!r}")
        if status is not None:
            return status


def main() -> int:
    return serve(sys.stdin.buffer, sys.stdout.buffer)


if __name__ == "__main__":
    sys.exit(main())
