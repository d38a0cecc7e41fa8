"""Runtime flow for one task bundle: plan, execute, record, compare.

A plan is a deterministic, ordered list of steps grouped into the canonical
phases (gating, host setup, environment launch, dataset staging, element
listing, stage loading, task dispatch, post collection). Each step carries
the circled tag numbers the dry-run printer shows; tags are strictly
increasing across phases. Executing a plan produces a RunRecord whether it
succeeds or not; failures are recorded data, not exceptions, so teardown
always runs and callers can map failure kinds to exit codes.
"""

from __future__ import annotations

import hashlib
import json
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Sequence

from . import backend as backend_mod
from . import fetcher as fetcher_mod
from . import gate as gate_mod
from . import parser, protocol
from .model import Checksum, MalformedChecksum, ManifestId, ReferenceLog, TaskBundle

STEP_GLYPHS = "①②③④⑤⑥⑦⑧⑨⑩⑪⑫"

PHASES = ("gate", "setup", "launch", "dataset", "pre-input", "io-match", "task-dispatch", "post")

RECORD_FILENAME = "record.dlspec.yml"
REFERENCE_LOG_FILENAME = "reference-log.dlspec.yml"

#: Default absolute tolerance for accuracy-like metrics in compare_logs.
DEFAULT_METRIC_TOLERANCE = 1e-6

_TIME_SUFFIXES = ("_ms", "_ns", "_us", "_s")
_TIME_MARKERS = ("time", "latency", "duration")


class OrchestratorError(Exception):
    pass


class RecordFailed(OrchestratorError):
    """A failed run cannot be published as a reference log."""


def format_tags(tags: tuple[int, ...]) -> str:
    return "".join(STEP_GLYPHS[t - 1] for t in tags)


@dataclass(frozen=True)
class PlanStep:
    action: str
    tags: tuple[int, ...]
    phase: str
    detail: str = ""

    def describe(self) -> str:
        glyphs = format_tags(self.tags)
        prefix = f"{glyphs} " if glyphs else "  "
        return f"{prefix}{self.action}" + (f": {self.detail}" if self.detail else "")


@dataclass(frozen=True)
class ExecutionPlan:
    bundle: TaskBundle
    steps: tuple[PlanStep, ...]

    @property
    def bundle_ids(self) -> dict[str, str]:
        return {kind: str(mid) for kind, mid in self.bundle.ids.items()}

    def describe(self) -> str:
        return "\n".join(step.describe() for step in self.steps)


def plan(bundle: TaskBundle) -> ExecutionPlan:
    """Deterministic execution plan for a validated bundle.

    The model-artifact fetch step exists exactly when artifacts are
    declared; dispatching an inference task is what makes the model
    download happen, so the step sits in the task-dispatch phase.
    """
    model = bundle.model
    steps: list[PlanStep] = [
        PlanStep("gate", (1,), "gate", f"{len(bundle.hardware.constraints)} constraint(s) on {bundle.hardware.id}"),
        PlanStep("setup", (2,), "setup", f"{len(bundle.hardware.setup)} host command(s)"),
        PlanStep("launch", (3,), "launch", bundle.software.container_image),
        PlanStep("fetch-dataset", (4, 5), "dataset", f"{len(bundle.dataset.resources)} resource(s)"),
        PlanStep("list-elements", (6,), "pre-input", f"pattern {bundle.dataset.element_listing!r}"),
        PlanStep("load-stages", (7,), "io-match",
                 f"{len(model.inputs)} input(s), {len(model.outputs)} output(s)"),
    ]
    if model.artifacts:
        tags = (8, 10) if model.task_kind == "inference" else (10,)
        steps.append(PlanStep("fetch-model", tags, "task-dispatch", f"{len(model.artifacts)} artifact(s)"))
    steps.append(PlanStep("run", (9,), "task-dispatch", f"{model.task_kind} task {model.id}"))
    steps.append(PlanStep("post", (11, 12), "post", "digest final output against declared outputs"))
    steps.append(PlanStep("collect", (), "post", "persist record, release environment"))
    return ExecutionPlan(bundle=bundle, steps=tuple(steps))


@dataclass
class StepRecord:
    action: str
    tags: tuple[int, ...]
    phase: str
    status: str = "pending"  # ok | failed | skipped | planned | pending
    wall_time_ms: float = 0.0
    detail: str = ""


@dataclass
class StageResultRecord:
    stage: str
    wall_time_ms: float
    output_digest: str = ""
    output_preview: str = ""
    error: str = ""


@dataclass
class RunFailure:
    kind: str  # gate-failed | setup-failed | launch-failed | fetch-failed | stage-failed
    step: str
    tags: tuple[int, ...]
    message: str


@dataclass
class RunRecord:
    bundle_ids: dict[str, str]
    status: str  # ok | failed | dry-run
    created_at: str
    environment: dict[str, str]
    steps: list[StepRecord] = field(default_factory=list)
    stage_results: list[StageResultRecord] = field(default_factory=list)
    final_output_digest: str = ""
    metrics: dict[str, float] = field(default_factory=dict)
    failure: RunFailure | None = None
    path: Path | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class RunOptions:
    """Execution knobs; injectable pieces keep the suite engine-free."""

    backend: str = "process"
    cache_root: Path | str | None = None
    cache: fetcher_mod.ResourceCache | None = None
    host: gate_mod.HostDescription | None = None
    host_file: Path | str | None = None
    allow_unknown: bool = False
    dry_run: bool = False
    worker_cmd: Sequence[str] = backend_mod.DEFAULT_WORKER_CMD
    engine: str = backend_mod.DEFAULT_ENGINE
    engine_args: Sequence[str] = ()
    engine_cli: backend_mod.EngineCli | None = None
    run_dir: Path | str | None = None
    handshake_timeout: float = backend_mod.DEFAULT_HANDSHAKE_TIMEOUT
    io_timeout: float = 600.0
    grace: float = backend_mod.DEFAULT_GRACE_SECONDS
    parallelism: int = 4


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds").replace("+00:00", "Z")


def _bundle_short_digest(bundle_ids: dict[str, str]) -> str:
    canonical = json.dumps(bundle_ids, sort_keys=True).encode("utf-8")
    return hashlib.sha256(canonical).hexdigest()[:8]


def _host_digest(host: gate_mod.HostDescription) -> str:
    canonical = json.dumps(host.values, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(canonical).hexdigest()[:16]


def _iospec_dicts(specs) -> list[dict[str, Any]]:
    out = []
    for spec in specs:
        out.append(
            {
                "name": spec.name,
                "element_type": spec.element_type,
                "shape": list(spec.shape) if spec.shape is not None else None,
                "layout": spec.layout,
            }
        )
    return out


class _Execution:
    """State for one run; drives steps in plan order with fail-fast."""

    def __init__(self, plan_: ExecutionPlan, opts: RunOptions):
        self.plan = plan_
        self.opts = opts
        self.bundle = plan_.bundle
        self.record = RunRecord(
            bundle_ids=plan_.bundle_ids,
            status="ok",
            created_at=_utc_now(),
            environment={},
            steps=[StepRecord(s.action, s.tags, s.phase, detail=s.detail) for s in plan_.steps],
        )
        self.cache = opts.cache or fetcher_mod.ResourceCache(
            opts.cache_root or fetcher_mod.default_cache_root()
        )
        self.host: gate_mod.HostDescription | None = None
        self.handle: backend_mod.EnvironmentHandle | None = None
        self.channel: backend_mod.WorkerChannel | None = None
        self.scratch: Path | None = None
        self.dataset_paths: list[Path] = []
        self.elements: list[str] = []
        self.successful_setups = 0
        self.worker_result: dict[str, Any] | None = None

    def step_record(self, action: str) -> StepRecord:
        for step in self.record.steps:
            if step.action == action:
                return step
        raise KeyError(action)

    def fail(self, step: PlanStep, kind: str, message: str) -> None:
        self.record.status = "failed"
        self.record.failure = RunFailure(kind=kind, step=step.action, tags=step.tags, message=message)

    def run_step(self, step: PlanStep, fn: Callable[[], str | None]) -> bool:
        """Execute one step; returns False to abort downstream steps."""
        record = self.step_record(step.action)
        started = time.perf_counter()
        try:
            detail = fn()
        except _StepFailure as exc:
            record.status = "failed"
            record.detail = exc.message
            record.wall_time_ms = (time.perf_counter() - started) * 1000
            self.fail(step, exc.kind, exc.message)
            return False
        record.status = "ok"
        record.wall_time_ms = (time.perf_counter() - started) * 1000
        if detail:
            record.detail = detail
        return True

    # -- step bodies ---------------------------------------------------------

    def do_gate(self) -> str:
        opts = self.opts
        if opts.host is not None:
            self.host = opts.host
        elif opts.host_file is not None:
            try:
                self.host = gate_mod.parse_host_file(Path(opts.host_file).read_text(encoding="utf-8"))
            except (OSError, parser.ManifestParseError) as exc:
                raise _StepFailure("gate-failed", f"unusable host file: {exc}") from exc
        else:
            self.host = gate_mod.probe_host()
        report = gate_mod.evaluate(self.bundle.hardware.constraints, self.host, opts.allow_unknown)
        self.record.environment = {
            "backend": opts.backend,
            "image": self.bundle.software.container_image,
            "host_digest": _host_digest(self.host),
            "host_source": self.host.source,
        }
        if not report.passed:
            raise _StepFailure("gate-failed", report.summary())
        return report.summary()

    def do_setup(self) -> str:
        try:
            report = gate_mod.run_setup(self.bundle.hardware.setup)
        except gate_mod.SetupCommandError as exc:
            self.successful_setups = exc.report.succeeded
            raise _StepFailure("setup-failed", str(exc)) from exc
        self.successful_setups = report.succeeded
        return f"{report.succeeded} command(s) ok"

    def do_launch(self) -> str:
        opts = self.opts
        self.scratch = Path(tempfile.mkdtemp(prefix="dlspec-scratch-"))
        software = self.bundle.software
        if opts.backend == "container":
            mounts = (
                backend_mod.Mount(self.cache.root, "/dlspec/cache", read_only=True),
                backend_mod.Mount(self.scratch, "/dlspec/scratch", read_only=False),
            )
            spec = backend_mod.ExecutionSpec(
                backend="container",
                image=software.container_image,
                env=dict(software.env),
                mounts=mounts,
                workdir="/dlspec/scratch",
            )
        else:
            spec = backend_mod.ExecutionSpec(
                backend="process",
                env=dict(software.env),
                workdir=str(self.scratch),
            )
        engine = opts.engine_cli or backend_mod.EngineCli(opts.engine, opts.engine_args)
        try:
            self.cache.root.mkdir(parents=True, exist_ok=True)
            self.handle = backend_mod.launch(spec, engine=engine)
            self.channel = self.handle.start_worker(
                tuple(opts.worker_cmd), handshake_timeout=opts.handshake_timeout
            )
        except backend_mod.BackendError as exc:
            raise _StepFailure("launch-failed", str(exc)) from exc
        return f"{opts.backend} environment {self.handle.id}"

    def do_fetch_dataset(self) -> str:
        try:
            self.dataset_paths = self.cache.fetch_all(
                list(self.bundle.dataset.resources), parallelism=self.opts.parallelism
            )
        except fetcher_mod.FetchError as exc:
            raise _StepFailure("fetch-failed", str(exc)) from exc
        return f"{len(self.dataset_paths)} resource(s) staged"

    def do_list_elements(self) -> str:
        assert self.handle is not None
        paths = fetcher_mod.list_elements(self.dataset_paths, self.bundle.dataset.element_listing)
        self.elements = [self.handle.env_path(p) for p in paths]
        return f"{len(self.elements)} element(s)"

    def build_ctx(self) -> dict[str, Any]:
        assert self.handle is not None and self.scratch is not None
        model = self.bundle.model
        artifact_paths = [
            self.handle.env_path(self.cache.resource_path(ref)) for ref in model.artifacts
        ]
        return {
            "bundle_ids": self.plan.bundle_ids,
            "task_kind": model.task_kind,
            "model": {
                "inputs": _iospec_dicts(model.inputs),
                "outputs": _iospec_dicts(model.outputs),
            },
            "hyperparameters": dict(model.hyperparameters),
            "artifact_paths": artifact_paths,
            "scratch_dir": self.handle.env_path(self.scratch),
            "metrics": {},
        }

    def _recv(self) -> dict[str, Any]:
        assert self.channel is not None
        try:
            reply = self.channel.recv(timeout=self.opts.io_timeout)
        except backend_mod.BackendError as exc:
            raise _StepFailure("stage-failed", str(exc)) from exc
        if reply is None:
            raise _StepFailure(
                "stage-failed",
                f"worker closed the channel unexpectedly; stderr: {self.channel.stderr_text[-2000:]}",
            )
        return reply

    def _harvest_stage_results(self, frames: list[dict[str, Any]]) -> None:
        for item in frames:
            if not isinstance(item, dict):
                continue
            self.record.stage_results.append(
                StageResultRecord(
                    stage=str(item.get("stage", "")),
                    wall_time_ms=float(item.get("wall_time_ms", 0.0)),
                    output_digest=str(item.get("output_digest", "")),
                    output_preview=str(item.get("output_preview", "")),
                    error=str(item.get("error", "") or ""),
                )
            )

    def do_load_stages(self) -> str:
        assert self.channel is not None
        stages = {
            name: {"language": code.language, "source": code.source}
            for name, code in self.bundle.model.stages().items()
        }
        self.channel.send({"type": protocol.LOAD, "stages": stages, "ctx": self.build_ctx()})
        reply = self._recv()
        reply_type = reply.get("type")
        if reply_type == protocol.LOAD_OK:
            return "stages compiled"
        if reply_type == protocol.STAGE_ERROR:
            self._harvest_stage_results(reply.get("stage_results", []))
            raise _StepFailure(
                "stage-failed",
                f"{reply.get('kind', 'compile')} error in stage {reply.get('stage')!r}: "
                f"{reply.get('traceback', '').strip()}",
            )
        raise _StepFailure("stage-failed", f"unexpected reply to LOAD: {reply!r}")

    def do_fetch_model(self) -> str:
        try:
            paths = self.cache.fetch_all(list(self.bundle.model.artifacts), parallelism=self.opts.parallelism)
        except fetcher_mod.FetchError as exc:
            raise _StepFailure("fetch-failed", str(exc)) from exc
        planned = [self.cache.resource_path(ref) for ref in self.bundle.model.artifacts]
        if paths != planned:
            raise _StepFailure("fetch-failed", "artifact paths diverged from the planned cache layout")
        return f"{len(paths)} artifact(s) staged"

    def do_run(self) -> str:
        assert self.channel is not None
        self.channel.send({"type": protocol.RUN, "initial_data": self.elements})
        reply = self._recv()
        reply_type = reply.get("type")
        if reply_type == protocol.STAGE_ERROR:
            self._harvest_stage_results(reply.get("stage_results", []))
            raise _StepFailure(
                "stage-failed",
                f"{reply.get('kind', 'runtime')} error in stage {reply.get('stage')!r}: "
                f"{reply.get('traceback', '').strip()}",
            )
        if reply_type != protocol.RESULT:
            raise _StepFailure("stage-failed", f"unexpected reply to RUN: {reply!r}")
        self.worker_result = reply
        self._harvest_stage_results(reply.get("stage_results", []))
        return "worker returned RESULT"

    def do_post(self) -> str:
        assert self.worker_result is not None
        result = self.worker_result
        digest = str(result.get("final_output_digest", ""))
        if not result.get("truncated") and "final_output" in result and result.get("final_output_encoding") == "json":
            recomputed = protocol.canonical_output_digest(result["final_output"])
            if recomputed != digest:
                raise _StepFailure(
                    "stage-failed",
                    f"worker digest {digest} does not match canonical digest {recomputed}",
                )
        try:
            Checksum.parse(digest)
        except MalformedChecksum as exc:
            raise _StepFailure("stage-failed", f"worker sent an invalid output digest: {exc}") from exc
        self.record.final_output_digest = digest
        metrics: dict[str, float] = {}
        raw_metrics = result.get("metrics", {})
        if isinstance(raw_metrics, dict):
            for key, value in raw_metrics.items():
                if isinstance(value, (int, float)) and not isinstance(value, bool):
                    metrics[str(key)] = float(value)
        for item in self.record.stage_results:
            metrics[f"{item.stage}_wall_time_ms"] = item.wall_time_ms
        self.record.metrics = metrics
        outputs = len(self.bundle.model.outputs)
        return f"digest {digest[:23]}..., checked against {outputs} declared output(s)"

    # -- finalization ---------------------------------------------------------

    def finalize(self, aborted: bool) -> None:
        record = self.step_record("collect")
        started = time.perf_counter()
        problems: list[str] = []
        if self.handle is not None:
            try:
                self.handle.shutdown(grace=self.opts.grace)
            except Exception as exc:  # noqa: BLE001 - best-effort teardown
                problems.append(f"shutdown: {exc}")
        if self.successful_setups and not self.opts.dry_run:
            teardown_report = gate_mod.run_teardown(self.bundle.hardware.teardown, self.successful_setups)
            failed = [o for o in teardown_report.outcomes if o.status == "failed"]
            if failed:
                problems.append(f"{len(failed)} teardown command(s) failed")
        persisted = self.persist()
        record.wall_time_ms = (time.perf_counter() - started) * 1000
        record.status = "ok" if not problems else "failed"
        detail = persisted if persisted else "record not persisted (no run dir)"
        if problems:
            detail += "; " + "; ".join(problems)
        record.detail = detail
        if aborted:
            record.detail += " (after failure)"

    def persist(self) -> str:
        if self.opts.run_dir is None or self.opts.dry_run:
            return ""
        base = Path(self.opts.run_dir)
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
        short = _bundle_short_digest(self.record.bundle_ids)
        directory = base / f"{stamp}-{short}"
        suffix = 1
        while directory.exists():
            suffix += 1
            directory = base / f"{stamp}-{short}-{suffix}"
        directory.mkdir(parents=True)
        path = directory / RECORD_FILENAME
        path.write_text(serialize_record(self.record), encoding="utf-8")
        self.record.path = path
        return str(path)


class _StepFailure(Exception):
    def __init__(self, kind: str, message: str):
        self.kind = kind
        self.message = message
        super().__init__(message)


def execute(plan_: ExecutionPlan, opts: RunOptions | None = None) -> RunRecord:
    """Run the plan's steps in order; any failure skips the remaining steps
    but teardown and record persistence still happen. Dry runs evaluate the
    gate and report the plan without touching network or environment."""
    opts = opts or RunOptions()
    execution = _Execution(plan_, opts)
    bodies: dict[str, Callable[[], str | None]] = {
        "gate": execution.do_gate,
        "setup": execution.do_setup,
        "launch": execution.do_launch,
        "fetch-dataset": execution.do_fetch_dataset,
        "list-elements": execution.do_list_elements,
        "load-stages": execution.do_load_stages,
        "fetch-model": execution.do_fetch_model,
        "run": execution.do_run,
        "post": execution.do_post,
    }
    aborted = False
    for step in plan_.steps:
        if step.action == "collect":
            continue
        if aborted or (opts.dry_run and step.action != "gate"):
            execution.step_record(step.action).status = "planned" if opts.dry_run else "skipped"
            continue
        if not execution.run_step(step, bodies[step.action]):
            aborted = True
    if opts.dry_run and not aborted:
        execution.record.status = "dry-run"
    execution.finalize(aborted)
    return execution.record


# ---------------------------------------------------------------------------
# records on disk


def serialize_record(record: RunRecord) -> str:
    data: dict[str, Any] = {
        "kind": "run-record",
        "status": record.status,
        "created_at": parser.QuotedString(record.created_at),
        "bundle": {k: parser.QuotedString(v) for k, v in sorted(record.bundle_ids.items())},
        "environment": {k: str(v) for k, v in sorted(record.environment.items())},
    }
    if record.failure is not None:
        data["failure"] = {
            "kind": record.failure.kind,
            "step": record.failure.step,
            "tags": list(record.failure.tags),
            "message": record.failure.message,
        }
    data["steps"] = [
        {
            "action": s.action,
            "tags": list(s.tags),
            "phase": s.phase,
            "status": s.status,
            "wall_time_ms": round(s.wall_time_ms, 3),
            "detail": s.detail,
        }
        for s in record.steps
    ]
    if record.stage_results:
        data["stage_results"] = [
            {
                "stage": s.stage,
                "wall_time_ms": round(s.wall_time_ms, 3),
                "output_digest": s.output_digest,
                "output_preview": s.output_preview,
                **({"error": s.error} if s.error else {}),
            }
            for s in record.stage_results
        ]
    if record.final_output_digest:
        data["final_output_digest"] = record.final_output_digest
    if record.metrics:
        data["metrics"] = dict(sorted(record.metrics.items()))
    return parser.dump_canonical(data)


def load_record(text: str) -> RunRecord:
    """Read a persisted run record back; tolerant of detail fields but
    strict about the parts compare_logs needs."""
    data = parser.load_strict_data(text)
    violations = []
    if data.get("kind") != "run-record":
        violations.append(parser.Violation("kind", "unknown-kind", "expected kind: run-record"))
    bundle = data.get("bundle")
    if not isinstance(bundle, dict):
        violations.append(parser.Violation("run-record.bundle", "type-mismatch", "bundle must be a mapping"))
        bundle = {}
    metrics_raw = data.get("metrics", {})
    if not isinstance(metrics_raw, dict):
        violations.append(parser.Violation("run-record.metrics", "type-mismatch", "metrics must be a mapping"))
        metrics_raw = {}
    if violations:
        raise parser.ManifestParseError(violations)
    record = RunRecord(
        bundle_ids={str(k): str(v) for k, v in bundle.items()},
        status=str(data.get("status", "")),
        created_at=str(data.get("created_at", "")),
        environment={str(k): str(v) for k, v in (data.get("environment") or {}).items()},
        final_output_digest=str(data.get("final_output_digest", "")),
        metrics={
            str(k): float(v)
            for k, v in metrics_raw.items()
            if isinstance(v, (int, float)) and not isinstance(v, bool)
        },
    )
    for item in data.get("steps") or []:
        if isinstance(item, dict):
            record.steps.append(
                StepRecord(
                    action=str(item.get("action", "")),
                    tags=tuple(int(t) for t in item.get("tags", [])),
                    phase=str(item.get("phase", "")),
                    status=str(item.get("status", "")),
                    wall_time_ms=float(item.get("wall_time_ms", 0.0)),
                    detail=str(item.get("detail", "")),
                )
            )
    for item in data.get("stage_results") or []:
        if isinstance(item, dict):
            record.stage_results.append(
                StageResultRecord(
                    stage=str(item.get("stage", "")),
                    wall_time_ms=float(item.get("wall_time_ms", 0.0)),
                    output_digest=str(item.get("output_digest", "")),
                    output_preview=str(item.get("output_preview", "")),
                    error=str(item.get("error", "")),
                )
            )
    failure = data.get("failure")
    if isinstance(failure, dict):
        record.failure = RunFailure(
            kind=str(failure.get("kind", "")),
            step=str(failure.get("step", "")),
            tags=tuple(int(t) for t in failure.get("tags", [])),
            message=str(failure.get("message", "")),
        )
    return record


# ---------------------------------------------------------------------------
# reference logs and comparison


def emit_reference_log(record: RunRecord, author_info: dict[str, Any] | None = None) -> ReferenceLog:
    """Publishable log of a successful run: ids, metrics, output digest."""
    if record.status != "ok":
        raise RecordFailed(f"cannot publish a reference log for a {record.status!r} run")
    expected = None
    if record.final_output_digest:
        expected = Checksum.parse(record.final_output_digest)
    return ReferenceLog(
        bundle_ids={kind: ManifestId.parse(text) for kind, text in record.bundle_ids.items()},
        metrics=dict(record.metrics),
        created_at=_utc_now(),
        expected_outputs=expected,
        author_info=dict(author_info or {}),
    )


def is_time_like_metric(name: str) -> bool:
    """Machine-dependent timing metrics are skipped unless given an explicit
    tolerance: names with a time-unit suffix or a latency/duration marker."""
    lowered = name.lower()
    if lowered.endswith(_TIME_SUFFIXES):
        return True
    return any(marker in lowered for marker in _TIME_MARKERS)


@dataclass(frozen=True)
class ComparisonEntry:
    field: str
    status: str  # pass | fail | skip | info
    detail: str


@dataclass(frozen=True)
class ComparisonReport:
    entries: tuple[ComparisonEntry, ...]

    @property
    def passed(self) -> bool:
        return all(e.status != "fail" for e in self.entries)

    def describe(self) -> str:
        width = max((len(e.field) for e in self.entries), default=5)
        lines = [f"{e.field.ljust(width)}  {e.status.upper():5}  {e.detail}" for e in self.entries]
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def compare_logs(
    achieved: RunRecord,
    reference: ReferenceLog,
    tolerances: dict[str, float] | None = None,
) -> ComparisonReport:
    """Check an achieved run against a published reference log.

    Bundle ids and output digests compare exactly. Metric deltas compare
    against a per-metric absolute tolerance (inclusive); accuracy-like
    metrics default to 1e-6, time-like metrics are skipped unless a
    tolerance is given explicitly. Reference metrics missing from the
    achieved run fail; extra achieved metrics are informational.
    """
    tolerances = tolerances or {}
    entries: list[ComparisonEntry] = []
    for kind in ("hardware", "software", "dataset", "model"):
        expected = str(reference.bundle_ids[kind]) if kind in reference.bundle_ids else ""
        actual = achieved.bundle_ids.get(kind, "")
        if expected and actual == expected:
            entries.append(ComparisonEntry(f"bundle.{kind}", "pass", actual))
        else:
            entries.append(
                ComparisonEntry(f"bundle.{kind}", "fail", f"achieved {actual or '(none)'} != reference {expected or '(none)'}")
            )
    if reference.expected_outputs is not None:
        expected_digest = str(reference.expected_outputs)
        if achieved.final_output_digest == expected_digest:
            entries.append(ComparisonEntry("expected_outputs", "pass", expected_digest))
        else:
            entries.append(
                ComparisonEntry(
                    "expected_outputs",
                    "fail",
                    f"achieved {achieved.final_output_digest or '(none)'} != reference {expected_digest}",
                )
            )
    else:
        entries.append(ComparisonEntry("expected_outputs", "skip", "reference declares no output digest"))
    for name in sorted(reference.metrics):
        expected_value = reference.metrics[name]
        field_name = f"metrics.{name}"
        if name not in achieved.metrics:
            entries.append(ComparisonEntry(field_name, "fail", "missing from achieved run"))
            continue
        actual_value = achieved.metrics[name]
        tolerance = tolerances.get(name)
        if tolerance is None:
            if is_time_like_metric(name):
                entries.append(
                    ComparisonEntry(field_name, "skip",
                                    f"time-like metric (achieved {actual_value}, reference {expected_value})")
                )
                continue
            tolerance = DEFAULT_METRIC_TOLERANCE
        delta = abs(actual_value - expected_value)
        status = "pass" if delta <= tolerance else "fail"
        entries.append(
            ComparisonEntry(field_name, status, f"|{actual_value} - {expected_value}| = {delta:g} vs tol {tolerance:g}")
        )
    for name in sorted(set(achieved.metrics) - set(reference.metrics)):
        entries.append(ComparisonEntry(f"metrics.{name}", "info", f"achieved-only metric = {achieved.metrics[name]}"))
    return ComparisonReport(entries=tuple(entries))
