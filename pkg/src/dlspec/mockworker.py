"""Protocol-conformant mock worker.

Stands in for the real stage host when exercising the orchestrator without
the stage-host package or a container engine. It handshakes, syntax-checks
stage sources at LOAD (so compile errors surface exactly like the real
host's), and answers RUN with a canned RESULT instead of executing anything.

Environment knobs:

* ``DLSPEC_MOCK_OUTPUT``: JSON value returned as the final output
  (default: the RUN frame's initial_data echoed back).
* ``DLSPEC_MOCK_METRICS``: JSON object merged into RESULT metrics.
* ``DLSPEC_MOCK_SENTINEL``: path touched on every RUN, so tests can prove
  whether any task dispatch happened.
"""

from __future__ import annotations

import json
import os
import sys
import traceback
from typing import Any, BinaryIO

from . import protocol
from .model import STAGE_NAMES


def _canned_output(initial_data: Any) -> Any:
    raw = os.environ.get("DLSPEC_MOCK_OUTPUT")
    if raw is None:
        return initial_data
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _canned_metrics() -> dict[str, float]:
    raw = os.environ.get("DLSPEC_MOCK_METRICS")
    if not raw:
        return {}
    try:
        parsed = json.loads(raw)
    except json.JSONDecodeError:
        return {}
    if not isinstance(parsed, dict):
        return {}
    return {k: v for k, v in parsed.items() if isinstance(v, (int, float)) and not isinstance(v, bool)}


def _compile_check(stages: dict[str, Any]) -> dict[str, Any] | None:
    """STAGE_ERROR frame for the first stage that does not compile, else None."""
    for stage_name in STAGE_NAMES:
        stage = stages.get(stage_name)
        if not isinstance(stage, dict):
            return {
                "type": protocol.STAGE_ERROR,
                "kind": "compile",
                "stage": stage_name,
                "traceback": f"missing stage {stage_name!r} in LOAD frame",
            }
        if stage.get("language", "python") != "python":
            return {
                "type": protocol.STAGE_ERROR,
                "kind": "compile",
                "stage": stage_name,
                "traceback": f"unsupported language {stage.get('language')!r}",
            }
        try:
            compile(stage.get("source", ""), f"<{stage_name}>", "exec")
        except SyntaxError:
            return {
                "type": protocol.STAGE_ERROR,
                "kind": "compile",
                "stage": stage_name,
                "traceback": traceback.format_exc(),
            }
    return None


def _result_frame(initial_data: Any) -> dict[str, Any]:
    sentinel = os.environ.get("DLSPEC_MOCK_SENTINEL")
    if sentinel:
        with open(sentinel, "a", encoding="utf-8") as handle:
            handle.write("run\n")
    final_output = _canned_output(initial_data)
    digest = protocol.canonical_output_digest(final_output)
    stage_results = []
    carried = initial_data
    for stage_name in STAGE_NAMES:
        carried = final_output if stage_name == "post_processing" else carried
        stage_results.append(
            {
                "stage": stage_name,
                "wall_time_ms": 0.0,
                "output_digest": protocol.canonical_output_digest(carried),
                "output_preview": protocol.output_preview(carried),
            }
        )
    return {
        "type": protocol.RESULT,
        "final_output": final_output,
        "final_output_encoding": "json",
        "final_output_digest": digest,
        "truncated": False,
        "stage_results": stage_results,
        "metrics": _canned_metrics(),
    }


def serve(stdin: BinaryIO, stdout: BinaryIO) -> int:
    loaded = False
    greeted = False
    while True:
        try:
            frame = protocol.read_frame(stdin)
        except protocol.FrameError as exc:
            protocol.write_frame(stdout, {"type": protocol.PROTOCOL_VIOLATION, "message": str(exc)})
            return 1
        if frame is None:
            return 0
        frame_type = frame.get("type")
        if frame_type == protocol.HELLO:
            if frame.get("protocol_version") != protocol.PROTOCOL_VERSION:
                protocol.write_frame(
                    stdout,
                    {
                        "type": protocol.PROTOCOL_VIOLATION,
                        "message": f"unsupported protocol version {frame.get('protocol_version')!r}",
                    },
                )
                return 1
            greeted = True
            protocol.write_frame(
                stdout, {"type": protocol.HELLO_ACK, "protocol_version": protocol.PROTOCOL_VERSION}
            )
        elif frame_type == protocol.TERMINATE:
            return 0
        elif not greeted:
            protocol.write_frame(
                stdout, {"type": protocol.PROTOCOL_VIOLATION, "message": "HELLO must come first"}
            )
            return 1
        elif frame_type == protocol.LOAD:
            stages = frame.get("stages")
            error = _compile_check(stages if isinstance(stages, dict) else {})
            if error is not None:
                protocol.write_frame(stdout, error)
                continue
            loaded = True
            protocol.write_frame(stdout, {"type": protocol.LOAD_OK})
        elif frame_type == protocol.RUN:
            if not loaded:
                protocol.write_frame(
                    stdout, {"type": protocol.PROTOCOL_VIOLATION, "message": "RUN before LOAD"}
                )
                return 1
            protocol.write_frame(stdout, _result_frame(frame.get("initial_data", [])))
        else:
            protocol.write_frame(
                stdout,
                {"type": protocol.PROTOCOL_VIOLATION, "message": f"unknown frame type {frame_type!r}"},
            )
            return 1


def main() -> int:
    return serve(sys.stdin.buffer, sys.stdout.buffer)


if __name__ == "__main__":
    sys.exit(main())
