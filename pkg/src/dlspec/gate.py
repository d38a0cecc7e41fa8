"""Hardware gating: constraint evaluation plus host-side setup/teardown.

Constraints are evaluated against a host description before anything is
fetched or launched. Unknown host keys fail the gate by default: a
constraint that cannot be verified must not pass silently. Setup and
teardown commands always run on the host, never through the container
backend, since the settings they change (turbo boost, governors, ...) are
not reachable from inside a container.
"""

from __future__ import annotations

import os
import platform
import re
import subprocess
import time
from dataclasses import dataclass

from . import parser
from .model import CONSTRAINT_OPS, Constraint, SetupCommand

SATISFIED = "satisfied"
UNSATISFIED = "unsatisfied"
UNKNOWN_KEY = "unknown-key"

_HOST_KEYS = ("kind", "values")


@dataclass(frozen=True)
class HostDescription:
    """Scalar facts about the host, probed or declared (for tests/CI)."""

    values: dict[str, object]
    source: str = "probed"  # "probed" | "declared"

    def get(self, key: str, default: object = None) -> object:
        return self.values.get(key, default)


@dataclass(frozen=True)
class ConstraintVerdict:
    constraint: Constraint
    verdict: str  # SATISFIED | UNSATISFIED | UNKNOWN_KEY
    detail: str = ""


@dataclass(frozen=True)
class GateReport:
    verdicts: tuple[ConstraintVerdict, ...]
    allow_unknown: bool = False

    @property
    def passed(self) -> bool:
        for v in self.verdicts:
            if v.verdict == UNSATISFIED:
                return False
            if v.verdict == UNKNOWN_KEY and not self.allow_unknown:
                return False
        return True

    def summary(self) -> str:
        if not self.verdicts:
            return "no constraints"
        return "; ".join(
            f"{v.constraint.key} {v.constraint.op} {v.constraint.value!r}: {v.verdict}"
            + (f" ({v.detail})" if v.detail else "")
            for v in self.verdicts
        )


def probe_host() -> HostDescription:
    """Best-effort host facts. Keys that cannot be probed are absent,
    never guessed. Stable within one boot."""
    values: dict[str, object] = {}
    arch = platform.machine()
    if arch:
        values["architecture"] = arch
    cpus = os.cpu_count()
    if cpus:
        values["num_cpus"] = cpus
    memory = _probe_memory_gb()
    if memory is not None:
        values["memory_gb"] = memory
    system = platform.system()
    if system:
        values["os"] = system.lower()
    return HostDescription(values=values, source="probed")


def _probe_memory_gb() -> float | None:
    try:
        page_size = os.sysconf("SC_PAGE_SIZE")
        page_count = os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        return None
    if page_size <= 0 or page_count <= 0:
        return None
    return round(page_size * page_count / 2**30, 2)


def parse_host_file(text: str) -> HostDescription:
    """Declared host description, same text format as manifests:

    ``kind: host`` plus a ``values`` mapping of scalar facts.
    """
    data = parser.load_strict_data(text)
    violations = []
    if data.get("kind") != "host":
        violations.append(parser.Violation("kind", "unknown-kind", "host file must declare kind: host"))
    for key in data:
        if key not in _HOST_KEYS:
            violations.append(parser.Violation(f"host.{key}", "unknown-key", f"unknown key {key!r}"))
    values = data.get("values")
    if not isinstance(values, dict):
        violations.append(parser.Violation("host.values", "type-mismatch", "values must be a mapping"))
    else:
        for key, value in values.items():
            if not isinstance(key, str):
                violations.append(parser.Violation(f"host.values.{key}", "type-mismatch", "keys must be strings"))
            elif value is not None and not isinstance(value, (str, int, float, bool)):
                violations.append(
                    parser.Violation(f"host.values.{key}", "type-mismatch", "values must be scalars")
                )
    if violations:
        raise parser.ManifestParseError(violations)
    assert isinstance(values, dict)
    return HostDescription(values=dict(values), source="declared")


def _is_number(value: object) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check(constraint: Constraint, actual: object) -> tuple[bool, str]:
    op, expected = constraint.op, constraint.value
    if op == "eq":
        return actual == expected, f"host value {actual!r}"
    if op == "ne":
        return actual != expected, f"host value {actual!r}"
    if op in ("ge", "le"):
        if not _is_number(actual) or not _is_number(expected):
            return False, f"{op} needs numeric values, host has {actual!r}"
        if op == "ge":
            return actual >= expected, f"host value {actual!r}"
        return actual <= expected, f"host value {actual!r}"
    if op == "in":
        if not isinstance(expected, (list, tuple)):
            return False, "'in' constraint value must be a list"
        return actual in expected, f"host value {actual!r}"
    if op == "matches":
        if not isinstance(expected, str) or not isinstance(actual, str):
            return False, f"'matches' needs string pattern and value, host has {actual!r}"
        try:
            return re.fullmatch(expected, actual) is not None, f"host value {actual!r}"
        except re.error as exc:
            return False, f"bad pattern: {exc}"
    return False, f"unknown op {op!r} (allowed: {', '.join(CONSTRAINT_OPS)})"


def evaluate(
    constraints: tuple[Constraint, ...] | list[Constraint],
    host: HostDescription,
    allow_unknown: bool = False,
) -> GateReport:
    """Pure per-constraint evaluation; the report decides overall pass."""
    verdicts = []
    for constraint in constraints:
        if constraint.key not in host.values:
            verdicts.append(
                ConstraintVerdict(constraint, UNKNOWN_KEY, f"host does not expose {constraint.key!r}")
            )
            continue
        ok, detail = _check(constraint, host.values[constraint.key])
        verdicts.append(ConstraintVerdict(constraint, SATISFIED if ok else UNSATISFIED, detail))
    return GateReport(verdicts=tuple(verdicts), allow_unknown=allow_unknown)


EXECUTE = "execute"
DRY_RUN = "dry_run"


@dataclass(frozen=True)
class CommandOutcome:
    argv: tuple[str, ...]
    description: str
    status: str  # "ok" | "failed" | "planned"
    exit_code: int | None = None
    stdout: str = ""
    stderr: str = ""
    duration_ms: float = 0.0


@dataclass(frozen=True)
class SetupReport:
    mode: str
    outcomes: tuple[CommandOutcome, ...]

    @property
    def succeeded(self) -> int:
        return sum(1 for o in self.outcomes if o.status == "ok")


class SetupCommandError(Exception):
    """A must_succeed command failed; prior outputs are on ``report``."""

    def __init__(self, outcome: CommandOutcome, report: SetupReport):
        self.outcome = outcome
        self.report = report
        super().__init__(
            f"command {' '.join(outcome.argv)!r} failed with exit code {outcome.exit_code}"
        )


def run_setup(
    commands: tuple[SetupCommand, ...] | list[SetupCommand],
    mode: str = EXECUTE,
) -> SetupReport:
    """Run commands in manifest order on the host.

    ``dry_run`` reports the plan without executing anything. A failing
    ``must_succeed`` command aborts the sequence and raises
    :class:`SetupCommandError` with everything captured so far.
    """
    if mode not in (EXECUTE, DRY_RUN):
        raise ValueError(f"unknown mode {mode!r}")
    outcomes: list[CommandOutcome] = []
    for command in commands:
        if mode == DRY_RUN:
            outcomes.append(CommandOutcome(command.argv, command.description, "planned"))
            continue
        started = time.perf_counter()
        try:
            completed = subprocess.run(
                list(command.argv),
                capture_output=True,
                text=True,
                check=False,
            )
            exit_code = completed.returncode
            stdout, stderr = completed.stdout, completed.stderr
        except OSError as exc:
            exit_code = 127
            stdout, stderr = "", str(exc)
        duration_ms = (time.perf_counter() - started) * 1000
        status = "ok" if exit_code == 0 else "failed"
        outcome = CommandOutcome(
            command.argv, command.description, status, exit_code, stdout, stderr, duration_ms
        )
        outcomes.append(outcome)
        if status == "failed" and command.must_succeed:
            raise SetupCommandError(outcome, SetupReport(mode=mode, outcomes=tuple(outcomes)))
    return SetupReport(mode=mode, outcomes=tuple(outcomes))


def run_teardown(
    teardown: tuple[SetupCommand, ...] | list[SetupCommand],
    successful_setups: int,
) -> SetupReport:
    """Best-effort teardown in reverse order of the setups that ran.

    Teardown entries are taken to mirror setup entries positionally: after
    ``s`` successful setups, ``teardown[:s]`` runs reversed. Failures are
    recorded, never raised.
    """
    selected = list(teardown[: max(successful_setups, 0)])
    selected.reverse()
    outcomes: list[CommandOutcome] = []
    for command in selected:
        try:
            report = run_setup([SetupCommand(command.argv, False, command.description)])
            outcomes.extend(report.outcomes)
        except SetupCommandError as exc:  # pragma: no cover - must_succeed is forced off
            outcomes.append(exc.outcome)
    return SetupReport(mode=EXECUTE, outcomes=tuple(outcomes))
