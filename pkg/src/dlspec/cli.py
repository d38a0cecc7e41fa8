"""Command-line entry point: validate, resolve, fetch, run, compare, probe.

Exit codes are a stable contract:

====  =========================================
0     success
1     validation violations (or unparseable inputs)
2     hardware gate or host setup failure
3     fetch/checksum failure
4     execution failure (resolution, launch, stages)
5     comparison failure
64    usage error (bad arguments, unreadable file)
====  =========================================
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path
from typing import Any, Sequence

from . import fetcher as fetcher_mod
from . import gate as gate_mod
from . import orchestrator, parser
from . import registry as registry_mod
from .backend import DEFAULT_ENGINE, DEFAULT_WORKER_CMD
from .model import Checksum, MalformedChecksum, MalformedRange, MalformedVersion, ResourceRef

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_GATE = 2
EXIT_FETCH = 3
EXIT_EXECUTION = 4
EXIT_COMPARISON = 5
EXIT_USAGE = 64

_FAILURE_EXIT_CODES = {
    "gate-failed": EXIT_GATE,
    "setup-failed": EXIT_GATE,
    "fetch-failed": EXIT_FETCH,
    "launch-failed": EXIT_EXECUTION,
    "stage-failed": EXIT_EXECUTION,
}

_BUNDLE_KEYS = ("kind", "hardware", "software", "dataset", "model")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _emit_json(payload: Any) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _violation_payload(file: str, violation: parser.Violation) -> dict[str, Any]:
    return {
        "file": file,
        "path": violation.path,
        "code": violation.code,
        "severity": violation.severity,
        "message": violation.message,
        "line": violation.line,
        "column": violation.column,
    }


def cmd_validate(args: argparse.Namespace) -> int:
    reports: list[dict[str, Any]] = []
    any_error = False
    for file_name in args.paths:
        try:
            text = Path(file_name).read_text(encoding="utf-8")
        except OSError as exc:
            print(f"{file_name}: unreadable: {exc}", file=sys.stderr)
            return EXIT_USAGE
        violations = parser.lint_text(text)
        for violation in violations:
            if violation.severity == "error":
                any_error = True
            reports.append(_violation_payload(file_name, violation))
            if args.format == "text":
                print(f"{file_name}:{violation.path}:{violation.code}:{violation.message}")
    if args.format == "json":
        _emit_json(reports)
    return EXIT_VALIDATION if any_error else EXIT_OK


def cmd_resolve(args: argparse.Namespace) -> int:
    registry = registry_mod.Registry(args.registry)
    try:
        kind, name, rng = registry_mod.parse_ref(args.ref)
    except (registry_mod.RegistryError, MalformedRange, MalformedVersion) as exc:
        print(f"bad ref: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        manifest = registry.resolve(kind, name, rng)
    except registry_mod.RegistryError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_EXECUTION
    except parser.ManifestParseError as exc:
        print(f"stored manifest is unreadable: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    path = registry.path_for(manifest.id)
    if args.format == "json":
        _emit_json({"id": str(manifest.id), "path": str(path)})
    else:
        print(f"{manifest.id} {path}")
    return EXIT_OK


def cmd_fetch(args: argparse.Namespace) -> int:
    try:
        checksum = Checksum.parse(args.checksum)
    except MalformedChecksum as exc:
        print(f"bad checksum: {exc}", file=sys.stderr)
        return EXIT_USAGE
    ref = ResourceRef(url=args.url, checksum=checksum, unpack=args.unpack)
    cache = fetcher_mod.ResourceCache(args.cache)
    try:
        path = cache.fetch(ref)
    except fetcher_mod.FetchError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FETCH
    if args.format == "json":
        _emit_json({"path": str(path), "checksum": str(checksum), "unpack": args.unpack})
    else:
        print(path)
    return EXIT_OK


def _bundle_refs_from_file(path: str) -> list[tuple[str, str, Any]]:
    text = Path(path).read_text(encoding="utf-8")
    data = parser.load_strict_data(text)
    if data.get("kind") != "bundle":
        raise _UsageError(f"{path}: bundle file must declare kind: bundle")
    unknown = [k for k in data if k not in _BUNDLE_KEYS]
    if unknown:
        raise _UsageError(f"{path}: unknown bundle keys: {', '.join(unknown)}")
    refs = []
    for kind in ("hardware", "software", "dataset", "model"):
        value = data.get(kind)
        if not isinstance(value, str):
            raise _UsageError(f"{path}: bundle file must name a {kind} ref")
        refs.append(registry_mod.parse_ref(value, kind))
    return refs


def _collect_refs(args: argparse.Namespace) -> list[tuple[str, str, Any]]:
    flag_refs = {
        "hardware": args.hardware,
        "software": args.software,
        "dataset": args.dataset,
        "model": args.model,
    }
    given = {kind: ref for kind, ref in flag_refs.items() if ref}
    if args.bundle:
        if given:
            raise _UsageError("pass either --bundle or the four per-kind flags, not both")
        return _bundle_refs_from_file(args.bundle)
    missing = [kind for kind, ref in flag_refs.items() if not ref]
    if missing:
        raise _UsageError(f"missing bundle refs: {', '.join('--' + k for k in missing)}")
    return [registry_mod.parse_ref(ref, kind) for kind, ref in given.items()]


def cmd_run(args: argparse.Namespace) -> int:
    registry = registry_mod.Registry(args.registry)
    try:
        refs = _collect_refs(args)
    except (_UsageError, registry_mod.RegistryError, MalformedRange, MalformedVersion) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except parser.ManifestParseError as exc:
        for violation in exc.violations:
            print(f"{args.bundle}:{violation}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"unreadable bundle file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        bundle = registry.resolve_bundle(refs)
    except registry_mod.RegistryError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_EXECUTION
    except parser.ManifestParseError as exc:
        print(f"stored manifest is unreadable: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    violations = parser.validate_bundle(bundle)
    errors = [v for v in violations if v.severity == "error"]
    for violation in violations:
        if violation.severity == "error" or args.format == "text":
            stream = sys.stderr if violation.severity == "error" else sys.stdout
            print(f"bundle:{violation}", file=stream)
    if errors:
        return EXIT_VALIDATION
    plan = orchestrator.plan(bundle)
    opts = orchestrator.RunOptions(
        backend=args.backend,
        cache_root=args.cache,
        host_file=args.host_file,
        allow_unknown=args.allow_unknown,
        dry_run=args.dry_run,
        worker_cmd=tuple(shlex.split(args.worker_cmd)) if args.worker_cmd else DEFAULT_WORKER_CMD,
        engine=args.engine,
        engine_args=tuple(args.engine_arg or ()),
        run_dir=args.run_dir,
        io_timeout=args.io_timeout,
    )
    record = orchestrator.execute(plan, opts)
    reference_path: Path | None = None
    if args.emit_reference_log and record.status == "ok" and record.path is not None:
        log = orchestrator.emit_reference_log(record, author_info={"emitted_by": "dlspec run"})
        reference_path = record.path.parent / orchestrator.REFERENCE_LOG_FILENAME
        reference_path.write_text(parser.serialize(log), encoding="utf-8")
    if args.format == "json":
        _emit_json(
            {
                "status": record.status,
                "record_path": str(record.path) if record.path else None,
                "reference_log_path": str(reference_path) if reference_path else None,
                "final_output_digest": record.final_output_digest or None,
                "failure": (
                    {"kind": record.failure.kind, "step": record.failure.step, "message": record.failure.message}
                    if record.failure
                    else None
                ),
                "warnings": [
                    {"path": v.path, "code": v.code, "message": v.message}
                    for v in violations
                    if v.severity == "warning"
                ],
                "plan": [
                    {"action": s.action, "tags": list(s.tags), "phase": s.phase} for s in plan.steps
                ],
            }
        )
    else:
        if args.dry_run:
            print(plan.describe())
        if record.path is not None:
            print(record.path)
        if record.failure is not None:
            print(
                f"{record.failure.kind} at step {record.failure.step} "
                f"{orchestrator.format_tags(record.failure.tags)}: {record.failure.message}",
                file=sys.stderr,
            )
        if reference_path is not None:
            print(reference_path)
    if record.status == "failed" and record.failure is not None:
        return _FAILURE_EXIT_CODES.get(record.failure.kind, EXIT_EXECUTION)
    return EXIT_OK


def _parse_tolerances(items: Sequence[str]) -> dict[str, float]:
    tolerances: dict[str, float] = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise _UsageError(f"bad --tol {item!r} (expected name=value)")
        try:
            tolerances[name] = float(value)
        except ValueError as exc:
            raise _UsageError(f"bad --tol {item!r}: {exc}") from exc
    return tolerances


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        tolerances = _parse_tolerances(args.tol or ())
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    try:
        record_text = Path(args.record).read_text(encoding="utf-8")
        reference_text = Path(args.reference).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"unreadable input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        record = orchestrator.load_record(record_text)
        reference = parser.parse_reference_log(reference_text)
    except parser.ManifestParseError as exc:
        for violation in exc.violations:
            print(str(violation), file=sys.stderr)
        return EXIT_VALIDATION
    report = orchestrator.compare_logs(record, reference, tolerances)
    if args.format == "json":
        _emit_json(
            {
                "passed": report.passed,
                "entries": [
                    {"field": e.field, "status": e.status, "detail": e.detail} for e in report.entries
                ],
            }
        )
    else:
        print(report.describe())
    return EXIT_OK if report.passed else EXIT_COMPARISON


def cmd_probe(args: argparse.Namespace) -> int:
    if args.host_file:
        try:
            host = gate_mod.parse_host_file(Path(args.host_file).read_text(encoding="utf-8"))
        except OSError as exc:
            print(f"unreadable host file: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except parser.ManifestParseError as exc:
            for violation in exc.violations:
                print(str(violation), file=sys.stderr)
            return EXIT_VALIDATION
    else:
        host = gate_mod.probe_host()
    if args.format == "json":
        _emit_json({"source": host.source, "values": host.values})
    else:
        print(f"source: {host.source}")
        for key in sorted(host.values):
            print(f"{key}: {host.values[key]}")
    return EXIT_OK


def build_arg_parser() -> _Parser:
    root = _Parser(prog="dlspec", description="Validate, resolve, fetch, run, and compare task manifests.")
    sub = root.add_subparsers(dest="command", required=True)

    def add_format(p: _Parser) -> None:
        p.add_argument("--format", choices=("text", "json"), default="text")

    p_validate = sub.add_parser("validate", help="lint manifest files")
    p_validate.add_argument("paths", nargs="+")
    add_format(p_validate)
    p_validate.set_defaults(func=cmd_validate)

    p_resolve = sub.add_parser("resolve", help="resolve kind:name@range in the registry")
    p_resolve.add_argument("ref")
    p_resolve.add_argument("--registry", default=str(registry_mod.default_registry_root()))
    add_format(p_resolve)
    p_resolve.set_defaults(func=cmd_resolve)

    p_fetch = sub.add_parser("fetch", help="fetch a checksum-verified resource into the cache")
    p_fetch.add_argument("url")
    p_fetch.add_argument("--checksum", required=True, help="algorithm:hexdigest")
    p_fetch.add_argument("--unpack", choices=("none", "tar", "tar.gz", "zip"), default="none")
    p_fetch.add_argument("--cache", default=str(fetcher_mod.default_cache_root()))
    add_format(p_fetch)
    p_fetch.set_defaults(func=cmd_fetch)

    p_run = sub.add_parser("run", help="resolve a bundle and execute its pipeline")
    p_run.add_argument("--hardware", help="hardware ref name@range or hardware:name@range")
    p_run.add_argument("--software", help="software ref")
    p_run.add_argument("--dataset", help="dataset ref")
    p_run.add_argument("--model", help="model ref")
    p_run.add_argument("--bundle", help="bundle file naming the four refs")
    p_run.add_argument("--registry", default=str(registry_mod.default_registry_root()))
    p_run.add_argument("--cache", default=str(fetcher_mod.default_cache_root()))
    p_run.add_argument("--run-dir", default="dlspec-runs")
    p_run.add_argument("--backend", choices=("process", "container"), default="process")
    p_run.add_argument("--engine", default=DEFAULT_ENGINE)
    p_run.add_argument("--engine-arg", action="append", help="passed to the engine run command verbatim")
    p_run.add_argument("--worker-cmd", help="stage-host command inside the environment")
    p_run.add_argument("--host-file", help="declared host description instead of probing")
    p_run.add_argument("--allow-unknown", action="store_true", help="unknown constraint keys do not fail the gate")
    p_run.add_argument("--dry-run", action="store_true", help="evaluate the gate and print the plan only")
    p_run.add_argument("--emit-reference-log", action="store_true")
    p_run.add_argument("--io-timeout", type=float, default=600.0)
    add_format(p_run)
    p_run.set_defaults(func=cmd_run)

    p_compare = sub.add_parser("compare", help="compare a run record against a reference log")
    p_compare.add_argument("record")
    p_compare.add_argument("reference")
    p_compare.add_argument("--tol", action="append", help="per-metric absolute tolerance name=value")
    add_format(p_compare)
    p_compare.set_defaults(func=cmd_compare)

    p_probe = sub.add_parser("probe", help="print the host description")
    p_probe.add_argument("--host-file")
    add_format(p_probe)
    p_probe.set_defaults(func=cmd_probe)

    return root


def main(argv: Sequence[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
