"""Three-stage pipeline execution, fully in process memory.

Stage sources arrive as text defining `fun(ctx, data)`. Every stage is
compiled before anything runs, executes in a fresh module namespace, and
receives its own deep copy of the context, so nothing a stage does can
bleed into the next one. The data argument is whatever the previous stage
returned; only digests and previews of it ever leave this process.
"""

from __future__ import annotations

import copy
import time
import traceback
from dataclasses import dataclass
from typing import Any, Callable, Mapping

from .framing import output_digest, output_preview

STAGE_ORDER = ("pre_processing", "run", "post_processing")


@dataclass(frozen=True)
class StageOutcome:
    stage: str
    wall_time_ms: float
    output_digest: str
    output_preview: str

    def to_frame(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "wall_time_ms": self.wall_time_ms,
            "output_digest": self.output_digest,
            "output_preview": self.output_preview,
        }


class StageFailure(Exception):
    """One stage could not compile or raised while running."""

    def __init__(self, kind: str, stage: str, detail: str, completed: tuple[StageOutcome, ...] = ()):
        self.kind = kind  # "compile" | "runtime"
        self.stage = stage
        self.detail = detail
        self.completed = completed
        super().__init__(f"{kind} failure in stage {stage!r}")

    def to_frame(self) -> dict[str, Any]:
        return {
            "type": "STAGE_ERROR",
            "kind": self.kind,
            "stage": self.stage,
            "traceback": self.detail,
            "stage_results": [outcome.to_frame() for outcome in self.completed],
        }


@dataclass(frozen=True)
class PipelineResult:
    final_output: Any
    outcomes: tuple[StageOutcome, ...]
    metrics: dict[str, float]
    pipeline_wall_time_ms: float


def compile_stages(stages: Mapping[str, Mapping[str, Any]]) -> dict[str, Callable]:
    """Compile all three stages up front; a broken stage is reported before
    any stage executes."""
    functions: dict[str, Callable] = {}
    for stage_name in STAGE_ORDER:
        spec = stages.get(stage_name)
        if not isinstance(spec, Mapping):
            raise StageFailure("compile", stage_name, f"LOAD frame is missing stage {stage_name!r}")
        language = spec.get("language", "python")
        if language != "python":
            raise StageFailure("compile", stage_name, f"unsupported stage language {language!r}")
        source = spec.get("source", "")
        try:
            code = compile(source, f"<{stage_name}>", "exec")
        except SyntaxError:
            raise StageFailure("compile", stage_name, traceback.format_exc()) from None
        namespace: dict[str, Any] = {}
        try:
            exec(code, namespace)  # noqa: S102 - stage code is trusted by design
        except Exception:
            raise StageFailure("compile", stage_name, traceback.format_exc()) from None
        fun = namespace.get("fun")
        if not callable(fun):
            raise StageFailure("compile", stage_name, "stage defines no callable named 'fun'")
        functions[stage_name] = fun
    return functions


def execute_pipeline(
    functions: Mapping[str, Callable],
    ctx: Mapping[str, Any],
    initial_data: Any,
) -> PipelineResult:
    """Run pre→run→post with in-memory handoff.

    Each stage sees a deep copy of ``ctx``; numeric values a stage leaves
    in its copy's ``metrics`` are merged into the run metrics afterwards.
    """
    outcomes: list[StageOutcome] = []
    metrics: dict[str, float] = {}
    data = initial_data
    pipeline_started = time.perf_counter()
    for stage_name in STAGE_ORDER:
        stage_ctx = copy.deepcopy(dict(ctx))
        stage_ctx.setdefault("metrics", {})
        started = time.perf_counter()
        try:
            data = functions[stage_name](stage_ctx, data)
        except Exception:
            raise StageFailure(
                "runtime", stage_name, traceback.format_exc(), tuple(outcomes)
            ) from None
        wall_time_ms = (time.perf_counter() - started) * 1000
        outcomes.append(
            StageOutcome(
                stage=stage_name,
                wall_time_ms=wall_time_ms,
                output_digest=output_digest(data),
                output_preview=output_preview(data),
            )
        )
        harvested = stage_ctx.get("metrics")
        if isinstance(harvested, dict):
            for key, value in harvested.items():
                if isinstance(value, (int, float)) and not isinstance(value, bool):
                    metrics[str(key)] = float(value)
    pipeline_wall_time_ms = (time.perf_counter() - pipeline_started) * 1000
    return PipelineResult(
        final_output=data,
        outcomes=tuple(outcomes),
        metrics=metrics,
        pipeline_wall_time_ms=pipeline_wall_time_ms,
    )
