"""Parse, validate, and canonically serialize manifests and reference logs.

The on-disk format is a strict subset of YAML: block mappings, sequences,
and scalars only. Anchors, aliases, and multi-document streams are rejected
so a manifest means exactly what it shows. Stage code is carried as literal
block scalars. Unknown keys are hard errors: a manifest carries only the
essential fields, and typos must not pass silently.

Error model:

* :func:`parse_manifest` / :func:`parse_document` raise
  :class:`ManifestParseError` for structural problems (syntax, unknown
  keys, missing required fields, type mismatches). The exception carries
  every structural violation found, not just the first.
* :func:`validate` returns semantic violations as data, never raises, so a
  lint pass can report all problems at once.
* :func:`lint_text` combines both for one-pass diagnostics.
"""

from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass
from datetime import date, datetime, timezone
from typing import Any, Callable, Union
from urllib.parse import urlsplit

import yaml

from .model import (
    CHECKSUM_DIGEST_LENGTHS,
    CONSTRAINT_OPS,
    DATASET_SPLITS,
    DEFAULT_ELEMENT_LISTING,
    ELEMENT_TYPES,
    IDENTITY_STAGE_SOURCE,
    MANIFEST_KINDS,
    RESOURCE_SCHEMES,
    TASK_KINDS,
    UNPACK_KINDS,
    WILDCARD_DIM,
    Checksum,
    Constraint,
    DatasetManifest,
    HardwareManifest,
    IOSpec,
    MalformedChecksum,
    MalformedId,
    MalformedVersion,
    Manifest,
    ManifestId,
    ModelManifest,
    ReferenceLog,
    ResourceRef,
    SetupCommand,
    SoftwareManifest,
    StageCode,
    TaskBundle,
    Version,
)

DOCUMENT_KINDS = MANIFEST_KINDS + ("reference-log",)

#: Closed set of machine codes a Violation may carry (documented contract).
VIOLATION_CODES = frozenset(
    {
        # structural (reported by parse_*)
        "syntax",
        "forbidden-alias",
        "forbidden-anchor",
        "multi-document",
        "duplicate-key",
        "root-not-mapping",
        "unknown-kind",
        "unknown-key",
        "type-mismatch",
        "required-missing",
        "invalid-version",
        "invalid-name",
        "invalid-checksum",
        # semantic (reported by validate / validate_bundle)
        "required-empty",
        "empty-resources",
        "invalid-value",
        "invalid-url",
        "invalid-shape",
        "invalid-env-key",
        "duplicate-constraint-key",
        "duplicate-io-name",
        "stage-syntax",
        "stage-entrypoint",
        "nonfinite-metric",
        "invalid-bundle-ids",
        "split-task-mismatch",
    }
)

#: Required fields per document kind, as dotted paths relative to the
#: document root ([*] stands for every element of a sequence). Mirrored in
#: the README's required-field table; the acceptance suite checks that
#: deleting any of these from a valid document yields a violation naming it.
REQUIRED_FIELDS: dict[str, tuple[str, ...]] = {
    "hardware": (
        "kind",
        "name",
        "version",
        "constraints[*].key",
        "constraints[*].op",
        "constraints[*].value",
        "setup[*].argv",
        "teardown[*].argv",
    ),
    "software": ("kind", "name", "version", "container_image"),
    "dataset": (
        "kind",
        "name",
        "version",
        "split",
        "resources",
        "resources[*].url",
        "resources[*].checksum",
    ),
    "model": (
        "kind",
        "name",
        "version",
        "task_kind",
        "inputs[*].name",
        "inputs[*].element_type",
        "outputs[*].name",
        "outputs[*].element_type",
        "artifacts[*].url",
        "artifacts[*].checksum",
    ),
    "reference-log": (
        "kind",
        "bundle",
        "bundle.hardware",
        "bundle.software",
        "bundle.dataset",
        "bundle.model",
        "metrics",
        "created_at",
    ),
}

#: Fields required only under a condition (also in the README table).
CONDITIONALLY_REQUIRED_FIELDS: dict[str, dict[str, str]] = {
    "model": {
        "inputs": "task_kind is 'inference'",
        "outputs": "task_kind is 'inference'",
    },
}

_ENV_KEY_RE = re.compile(r"^[A-Z_][A-Z0-9_]*$")
_MISSING = object()

Document = Union[Manifest, ReferenceLog]


@dataclass(frozen=True)
class Violation:
    """One machine-checkable diagnostic anchored to a field path."""

    path: str
    code: str
    message: str
    severity: str = "error"
    line: int | None = None
    column: int | None = None

    def __str__(self) -> str:
        return f"{self.path}:{self.code}:{self.message}"


class ManifestParseError(Exception):
    """Structural parse failure; carries every violation found."""

    def __init__(self, violations: list[Violation]):
        self.violations = list(violations)
        first = self.violations[0] if self.violations else None
        detail = str(first) if first else "parse failed"
        if first is not None and first.line is not None:
            detail += f" (line {first.line}, column {first.column})"
        super().__init__(detail)


def _sorted_violations(violations: list[Violation]) -> list[Violation]:
    return sorted(violations, key=lambda v: (v.path, v.code))


# ---------------------------------------------------------------------------
# strict YAML loading


class _StrictLoader(yaml.SafeLoader):
    """SafeLoader that records duplicate mapping keys instead of keeping the last."""

    def __init__(self, stream):
        super().__init__(stream)
        self.duplicate_keys: list[tuple[object, int, int]] = []

    def construct_mapping(self, node, deep=False):
        seen = set()
        for key_node, _value_node in node.value:
            key = self.construct_object(key_node, deep=True)
            try:
                if key in seen:
                    mark = key_node.start_mark
                    self.duplicate_keys.append((key, mark.line + 1, mark.column + 1))
                seen.add(key)
            except TypeError:  # unhashable key; the schema walk will reject it
                pass
        return super().construct_mapping(node, deep=deep)


def _scan_events(text: str) -> list[Violation]:
    violations: list[Violation] = []
    documents = 0
    try:
        for event in yaml.parse(text):
            mark = event.start_mark
            if isinstance(event, yaml.DocumentStartEvent):
                documents += 1
                if documents > 1:
                    violations.append(
                        Violation("", "multi-document", "stream contains more than one document",
                                  line=mark.line + 1, column=mark.column + 1)
                    )
            elif isinstance(event, yaml.AliasEvent):
                violations.append(
                    Violation("", "forbidden-alias", f"alias *{event.anchor} is not allowed",
                              line=mark.line + 1, column=mark.column + 1)
                )
            elif getattr(event, "anchor", None):
                violations.append(
                    Violation("", "forbidden-anchor", f"anchor &{event.anchor} is not allowed",
                              line=mark.line + 1, column=mark.column + 1)
                )
    except yaml.YAMLError as exc:
        violations.append(_syntax_violation(exc))
    return violations


def _syntax_violation(exc: yaml.YAMLError) -> Violation:
    mark = getattr(exc, "problem_mark", None)
    problem = getattr(exc, "problem", None) or str(exc)
    context = getattr(exc, "context", None)
    message = f"{context} {problem}" if context else str(problem)
    return Violation(
        "",
        "syntax",
        message.strip(),
        line=mark.line + 1 if mark else None,
        column=mark.column + 1 if mark else None,
    )


def load_strict_data(text: str) -> dict[str, Any]:
    """Load one YAML-subset document as a plain mapping.

    Shared by manifest parsing, host files, bundle files, and run records.
    Raises :class:`ManifestParseError` on syntax errors, aliases, anchors,
    multi-document streams, duplicate keys, or a non-mapping root.
    """
    violations = _scan_events(text)
    if violations:
        raise ManifestParseError(_sorted_violations(violations))
    loader = _StrictLoader(text)
    try:
        data = loader.get_single_data()
    except yaml.YAMLError as exc:
        raise ManifestParseError([_syntax_violation(exc)]) from exc
    finally:
        loader.dispose()
    for key, line, column in loader.duplicate_keys:
        violations.append(
            Violation("", "duplicate-key", f"duplicate mapping key {key!r}", line=line, column=column)
        )
    if violations:
        raise ManifestParseError(_sorted_violations(violations))
    if not isinstance(data, dict):
        raise ManifestParseError(
            [Violation("", "root-not-mapping", "document root must be a mapping")]
        )
    return data


# ---------------------------------------------------------------------------
# canonical serialization


class QuotedString(str):
    """String forced into single quotes on output (timestamps, id strings)."""


class _CanonicalDumper(yaml.SafeDumper):
    pass


#: YAML 1.1 treats these as line breaks; emitted raw they would fold or
#: normalize on re-parse, so they must travel escaped in double quotes.
_SPECIAL_BREAKS = ("\x85", " ", " ")


def _represent_str(dumper: yaml.SafeDumper, data: str):
    if any(ch in data for ch in _SPECIAL_BREAKS):
        return dumper.represent_scalar("tag:yaml.org,2002:str", data, style='"')
    if "\n" in data:
        return dumper.represent_scalar("tag:yaml.org,2002:str", data, style="|")
    return dumper.represent_scalar("tag:yaml.org,2002:str", data)


def _represent_quoted(dumper: yaml.SafeDumper, data: str):
    return dumper.represent_scalar("tag:yaml.org,2002:str", str(data), style="'")


_CanonicalDumper.add_representer(str, _represent_str)
_CanonicalDumper.add_representer(QuotedString, _represent_quoted)


def dump_canonical(data: dict[str, Any]) -> str:
    """Deterministic YAML-subset text: insertion order kept, block style,
    multiline strings as literal blocks, no line folding."""
    return yaml.dump(
        data,
        Dumper=_CanonicalDumper,
        sort_keys=False,
        allow_unicode=True,
        default_flow_style=False,
        width=1_000_000,
    )


def _canon_value(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _canon_value(value[k]) for k in sorted(value)}
    if isinstance(value, (list, tuple)):
        return [_canon_value(v) for v in value]
    return value


# ---------------------------------------------------------------------------
# schema walk helpers


class _Walk:
    def __init__(self) -> None:
        self.violations: list[Violation] = []

    def err(self, path: str, code: str, message: str) -> None:
        self.violations.append(Violation(path, code, message))

    @property
    def failed(self) -> bool:
        return bool(self.violations)


def _type_name(value: Any) -> str:
    return type(value).__name__


def _check_unknown_keys(w: _Walk, mapping: dict, base: str, allowed: tuple[str, ...]) -> None:
    for key in mapping:
        if not isinstance(key, str):
            w.err(_join(base, str(key)), "type-mismatch", f"mapping keys must be strings, got {_type_name(key)}")
        elif key not in allowed:
            w.err(_join(base, key), "unknown-key", f"unknown key {key!r}")


def _join(base: str, key: str) -> str:
    return f"{base}.{key}" if base else key


def _get(w: _Walk, mapping: dict, base: str, key: str, expected: type | tuple[type, ...],
         type_label: str, required: bool, default: Any = None) -> Any:
    path = _join(base, key)
    if key not in mapping:
        if required:
            w.err(path, "required-missing", f"required field {key!r} is missing")
            return _MISSING
        return default
    value = mapping[key]
    if isinstance(value, bool) and bool not in (expected if isinstance(expected, tuple) else (expected,)):
        w.err(path, "type-mismatch", f"expected {type_label}, got bool")
        return _MISSING
    if not isinstance(value, expected):
        w.err(path, "type-mismatch", f"expected {type_label}, got {_type_name(value)}")
        return _MISSING
    return value


def _get_str(w, mapping, base, key, required=False, default=None):
    return _get(w, mapping, base, key, str, "string", required, default)


def _get_list(w, mapping, base, key, required=False, default=None):
    return _get(w, mapping, base, key, list, "sequence", required, default)


def _get_map(w, mapping, base, key, required=False, default=None):
    return _get(w, mapping, base, key, dict, "mapping", required, default)


def _walk_id(w: _Walk, mapping: dict, kind: str) -> ManifestId | None:
    name = _get_str(w, mapping, kind, "name", required=True)
    version_text = _get_str(w, mapping, kind, "version", required=True)
    version = None
    if version_text not in (_MISSING, None):
        try:
            version = Version.parse(version_text)
        except MalformedVersion as exc:
            w.err(_join(kind, "version"), "invalid-version", str(exc))
    if name in (_MISSING, None) or version is None:
        return None
    try:
        return ManifestId(name=name, version=version, kind=kind)
    except MalformedId as exc:
        w.err(_join(kind, "name"), "invalid-name", str(exc))
        return None


def _walk_checksum(w: _Walk, text: Any, path: str) -> Checksum | None:
    try:
        return Checksum.parse(text)
    except MalformedChecksum as exc:
        w.err(path, "invalid-checksum", str(exc))
        return None


def _walk_resource(w: _Walk, item: Any, path: str) -> ResourceRef | None:
    if not isinstance(item, dict):
        w.err(path, "type-mismatch", f"expected mapping, got {_type_name(item)}")
        return None
    _check_unknown_keys(w, item, path, ("url", "checksum", "unpack"))
    url = _get_str(w, item, path, "url", required=True)
    checksum_text = _get_str(w, item, path, "checksum", required=True)
    unpack = _get_str(w, item, path, "unpack", default="none")
    checksum = None
    if checksum_text not in (_MISSING, None):
        checksum = _walk_checksum(w, checksum_text, _join(path, "checksum"))
    if url in (_MISSING, None) or checksum is None or unpack is _MISSING:
        return None
    return ResourceRef(url=url, checksum=checksum, unpack=unpack)


def _walk_resources(w: _Walk, mapping: dict, base: str, key: str, required: bool) -> tuple[ResourceRef, ...]:
    items = _get_list(w, mapping, base, key, required=required, default=[])
    if items in (_MISSING, None):
        return ()
    refs = []
    for i, item in enumerate(items):
        ref = _walk_resource(w, item, f"{_join(base, key)}[{i}]")
        if ref is not None:
            refs.append(ref)
    return tuple(refs)


def _walk_command(w: _Walk, item: Any, path: str) -> SetupCommand | None:
    if not isinstance(item, dict):
        w.err(path, "type-mismatch", f"expected mapping, got {_type_name(item)}")
        return None
    _check_unknown_keys(w, item, path, ("argv", "must_succeed", "description"))
    argv = _get_list(w, item, path, "argv", required=True)
    must_succeed = _get(w, item, path, "must_succeed", bool, "boolean", required=False, default=True)
    description = _get_str(w, item, path, "description", default="")
    if argv in (_MISSING, None) or must_succeed is _MISSING or description is _MISSING:
        return None
    parts = []
    for i, part in enumerate(argv):
        if not isinstance(part, str) or isinstance(part, bool):
            w.err(f"{_join(path, 'argv')}[{i}]", "type-mismatch", f"expected string, got {_type_name(part)}")
            return None
        parts.append(part)
    return SetupCommand(argv=tuple(parts), must_succeed=must_succeed, description=description)


def _walk_commands(w: _Walk, mapping: dict, base: str, key: str) -> tuple[SetupCommand, ...]:
    items = _get_list(w, mapping, base, key, default=[])
    if items in (_MISSING, None):
        return ()
    commands = []
    for i, item in enumerate(items):
        cmd = _walk_command(w, item, f"{_join(base, key)}[{i}]")
        if cmd is not None:
            commands.append(cmd)
    return tuple(commands)


_HARDWARE_KEYS = ("kind", "name", "version", "constraints", "setup", "teardown")
_SOFTWARE_KEYS = ("kind", "name", "version", "container_image", "env", "framework")
_DATASET_KEYS = ("kind", "name", "version", "split", "element_listing", "resources")
_MODEL_KEYS = (
    "kind", "name", "version", "task_kind", "inputs", "outputs", "artifacts",
    "hyperparameters", "stage_language", "pre_processing", "run", "post_processing",
)
_REFLOG_KEYS = ("kind", "bundle", "metrics", "expected_outputs", "author", "created_at")


def _walk_hardware(w: _Walk, data: dict) -> HardwareManifest | None:
    _check_unknown_keys(w, data, "hardware", _HARDWARE_KEYS)
    mid = _walk_id(w, data, "hardware")
    constraints = []
    items = _get_list(w, data, "hardware", "constraints", default=[])
    if items not in (_MISSING, None):
        for i, item in enumerate(items):
            path = f"hardware.constraints[{i}]"
            if not isinstance(item, dict):
                w.err(path, "type-mismatch", f"expected mapping, got {_type_name(item)}")
                continue
            _check_unknown_keys(w, item, path, ("key", "op", "value"))
            key = _get_str(w, item, path, "key", required=True)
            op = _get_str(w, item, path, "op", required=True)
            if "value" not in item:
                w.err(_join(path, "value"), "required-missing", "required field 'value' is missing")
                continue
            if key in (_MISSING, None) or op in (_MISSING, None):
                continue
            constraints.append(Constraint(key=key, op=op, value=item["value"]))
    setup = _walk_commands(w, data, "hardware", "setup")
    teardown = _walk_commands(w, data, "hardware", "teardown")
    if w.failed or mid is None:
        return None
    return HardwareManifest(id=mid, constraints=tuple(constraints), setup=setup, teardown=teardown)


def _walk_str_map(w: _Walk, mapping: Any, path: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in mapping.items():
        if not isinstance(key, str):
            w.err(f"{path}.{key}", "type-mismatch", f"mapping keys must be strings, got {_type_name(key)}")
            continue
        out[key] = value
    return out


def _walk_software(w: _Walk, data: dict) -> SoftwareManifest | None:
    _check_unknown_keys(w, data, "software", _SOFTWARE_KEYS)
    mid = _walk_id(w, data, "software")
    image = _get_str(w, data, "software", "container_image", required=True)
    env_raw = _get_map(w, data, "software", "env", default={})
    env: dict[str, str] = {}
    if env_raw not in (_MISSING, None):
        for key, value in env_raw.items():
            path = f"software.env.{key}"
            if not isinstance(key, str):
                w.err(path, "type-mismatch", "env keys must be strings")
            elif not isinstance(value, str) or isinstance(value, bool):
                w.err(path, "type-mismatch", f"env values must be strings, got {_type_name(value)} (quote it)")
            else:
                env[key] = value
    framework_raw = _get_map(w, data, "software", "framework", default={})
    framework = _walk_str_map(w, framework_raw, "software.framework") if framework_raw not in (_MISSING, None) else {}
    if w.failed or mid is None or image in (_MISSING, None):
        return None
    return SoftwareManifest(id=mid, container_image=image, env=env, framework_info=framework)


def _walk_dataset(w: _Walk, data: dict) -> DatasetManifest | None:
    _check_unknown_keys(w, data, "dataset", _DATASET_KEYS)
    mid = _walk_id(w, data, "dataset")
    split = _get_str(w, data, "dataset", "split", required=True)
    listing = _get_str(w, data, "dataset", "element_listing", default=DEFAULT_ELEMENT_LISTING)
    resources = _walk_resources(w, data, "dataset", "resources", required=True)
    if w.failed or mid is None or split in (_MISSING, None) or listing is _MISSING:
        return None
    return DatasetManifest(id=mid, split=split, resources=resources, element_listing=listing)


def _walk_iospec(w: _Walk, item: Any, path: str) -> IOSpec | None:
    if not isinstance(item, dict):
        w.err(path, "type-mismatch", f"expected mapping, got {_type_name(item)}")
        return None
    _check_unknown_keys(w, item, path, ("name", "element_type", "shape", "layout"))
    name = _get_str(w, item, path, "name", required=True)
    element_type = _get_str(w, item, path, "element_type", required=True)
    layout = _get_str(w, item, path, "layout", default=None)
    shape_raw = _get_list(w, item, path, "shape", default=None)
    if _MISSING in (name, element_type, layout, shape_raw):
        return None
    shape: tuple[int | str, ...] | None = None
    if shape_raw is not None:
        dims: list[int | str] = []
        for i, dim in enumerate(shape_raw):
            if isinstance(dim, bool) or not isinstance(dim, (int, str)):
                w.err(f"{_join(path, 'shape')}[{i}]", "type-mismatch",
                      f"shape entries must be integers or {WILDCARD_DIM!r}, got {_type_name(dim)}")
                return None
            dims.append(dim)
        shape = tuple(dims)
    if name is None or element_type is None:
        return None
    return IOSpec(name=name, element_type=element_type, shape=shape, layout=layout)


def _walk_iospecs(w: _Walk, mapping: dict, base: str, key: str) -> tuple[IOSpec, ...]:
    items = _get_list(w, mapping, base, key, default=[])
    if items in (_MISSING, None):
        return ()
    specs = []
    for i, item in enumerate(items):
        spec = _walk_iospec(w, item, f"{_join(base, key)}[{i}]")
        if spec is not None:
            specs.append(spec)
    return tuple(specs)


def _walk_model(w: _Walk, data: dict) -> ModelManifest | None:
    _check_unknown_keys(w, data, "model", _MODEL_KEYS)
    mid = _walk_id(w, data, "model")
    task_kind = _get_str(w, data, "model", "task_kind", required=True)
    inputs = _walk_iospecs(w, data, "model", "inputs")
    outputs = _walk_iospecs(w, data, "model", "outputs")
    artifacts = _walk_resources(w, data, "model", "artifacts", required=False)
    language = _get_str(w, data, "model", "stage_language", default="python")
    stages: dict[str, StageCode] = {}
    for stage_name in ("pre_processing", "run", "post_processing"):
        source = _get_str(w, data, "model", stage_name, default=IDENTITY_STAGE_SOURCE)
        if source in (_MISSING, None):
            source = IDENTITY_STAGE_SOURCE
        stages[stage_name] = StageCode(source=source, language=language if language not in (_MISSING, None) else "python")
    hyper_raw = _get_map(w, data, "model", "hyperparameters", default={})
    hyper: dict[str, Any] = {}
    if hyper_raw not in (_MISSING, None):
        for key, value in hyper_raw.items():
            path = f"model.hyperparameters.{key}"
            if not isinstance(key, str):
                w.err(path, "type-mismatch", "hyperparameter keys must be strings")
            elif value is not None and not isinstance(value, (str, int, float, bool)):
                w.err(path, "type-mismatch", f"hyperparameter values must be scalars, got {_type_name(value)}")
            else:
                hyper[key] = value
    if w.failed or mid is None or task_kind in (_MISSING, None):
        return None
    return ModelManifest(
        id=mid,
        task_kind=task_kind,
        inputs=inputs,
        outputs=outputs,
        artifacts=artifacts,
        pre_processing=stages["pre_processing"],
        run=stages["run"],
        post_processing=stages["post_processing"],
        hyperparameters=hyper,
    )


def _normalize_timestamp(value: Any) -> str | None:
    if isinstance(value, datetime):
        if value.tzinfo is None:
            value = value.replace(tzinfo=timezone.utc)
        return value.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")
    if isinstance(value, date):
        return value.isoformat()
    if isinstance(value, str):
        return value
    return None


def _walk_reference_log(w: _Walk, data: dict) -> ReferenceLog | None:
    _check_unknown_keys(w, data, "reference-log", _REFLOG_KEYS)
    base = "reference-log"
    bundle_raw = _get_map(w, data, base, "bundle", required=True)
    bundle_ids: dict[str, ManifestId] = {}
    if bundle_raw not in (_MISSING, None):
        _check_unknown_keys(w, bundle_raw, _join(base, "bundle"), MANIFEST_KINDS)
        for kind in MANIFEST_KINDS:
            path = f"{base}.bundle.{kind}"
            text = _get_str(w, bundle_raw, _join(base, "bundle"), kind, required=True)
            if text in (_MISSING, None):
                continue
            try:
                bundle_ids[kind] = ManifestId.parse(text)
            except (MalformedId, MalformedVersion) as exc:
                w.err(path, "invalid-name", str(exc))
    metrics_raw = _get_map(w, data, base, "metrics", required=True)
    metrics: dict[str, float] = {}
    if metrics_raw not in (_MISSING, None):
        for key, value in metrics_raw.items():
            path = f"{base}.metrics.{key}"
            if not isinstance(key, str):
                w.err(path, "type-mismatch", "metric names must be strings")
            elif isinstance(value, bool) or not isinstance(value, (int, float)):
                w.err(path, "type-mismatch", f"metric values must be numbers, got {_type_name(value)}")
            else:
                metrics[key] = value
    expected_raw = data.get("expected_outputs")
    expected: Checksum | None = None
    if expected_raw is not None:
        if not isinstance(expected_raw, str):
            w.err(_join(base, "expected_outputs"), "type-mismatch",
                  f"expected string, got {_type_name(expected_raw)}")
        else:
            expected = _walk_checksum(w, expected_raw, _join(base, "expected_outputs"))
    author_raw = _get_map(w, data, base, "author", default={})
    author = _walk_str_map(w, author_raw, _join(base, "author")) if author_raw not in (_MISSING, None) else {}
    if "created_at" not in data:
        w.err(_join(base, "created_at"), "required-missing", "required field 'created_at' is missing")
        created = None
    else:
        created = _normalize_timestamp(data["created_at"])
        if created is None:
            w.err(_join(base, "created_at"), "type-mismatch",
                  f"expected timestamp string, got {_type_name(data['created_at'])}")
    if w.failed or created is None:
        return None
    return ReferenceLog(
        bundle_ids=bundle_ids,
        metrics=metrics,
        created_at=created,
        expected_outputs=expected,
        author_info=author,
    )


_WALKERS: dict[str, Callable[[_Walk, dict], Any]] = {
    "hardware": _walk_hardware,
    "software": _walk_software,
    "dataset": _walk_dataset,
    "model": _walk_model,
    "reference-log": _walk_reference_log,
}


def parse_document(text: str) -> Document:
    """Parse one manifest or reference log from YAML-subset text.

    Raises :class:`ManifestParseError` carrying every structural violation.
    Semantic invariants are checked separately by :func:`validate`.
    """
    data = load_strict_data(text)
    kind = data.get("kind")
    if kind is None:
        raise ManifestParseError([Violation("kind", "required-missing", "required field 'kind' is missing")])
    if not isinstance(kind, str) or kind not in _WALKERS:
        raise ManifestParseError(
            [Violation("kind", "unknown-kind",
                       f"unknown kind {kind!r} (expected one of {', '.join(DOCUMENT_KINDS)})")]
        )
    w = _Walk()
    document = _WALKERS[kind](w, data)
    if w.failed or document is None:
        raise ManifestParseError(_sorted_violations(w.violations))
    return document


def parse_manifest(text: str) -> Manifest:
    """Parse one of the four manifest kinds (rejects reference logs)."""
    document = parse_document(text)
    if isinstance(document, ReferenceLog):
        raise ManifestParseError(
            [Violation("kind", "unknown-kind", "expected a manifest, got a reference-log")]
        )
    return document


def parse_reference_log(text: str) -> ReferenceLog:
    document = parse_document(text)
    if not isinstance(document, ReferenceLog):
        raise ManifestParseError(
            [Violation("kind", "unknown-kind", "expected a reference-log")]
        )
    return document


# ---------------------------------------------------------------------------
# semantic validation


def _validate_stage(stage: StageCode, path: str, out: list[Violation]) -> None:
    if stage.language != "python":
        out.append(Violation(f"{path}", "invalid-value", f"unsupported stage language {stage.language!r}"))
        return
    if not stage.source.strip():
        out.append(Violation(path, "required-empty", "stage source must not be empty"))
        return
    try:
        tree = ast.parse(stage.source)
    except SyntaxError as exc:
        out.append(Violation(path, "stage-syntax", f"stage source does not compile: {exc.msg} (line {exc.lineno})"))
        return
    funs = [node for node in tree.body if isinstance(node, ast.FunctionDef) and node.name == "fun"]
    if not funs:
        out.append(Violation(path, "stage-entrypoint", "stage must define a top-level function named 'fun'"))
        return
    args = funs[0].args
    plain = [a.arg for a in args.args]
    clean = (
        plain == ["ctx", "data"]
        and not args.posonlyargs
        and not args.kwonlyargs
        and args.vararg is None
        and args.kwarg is None
        and not args.defaults
    )
    if not clean:
        out.append(Violation(path, "stage-entrypoint", "entry point must be exactly fun(ctx, data)"))


def _validate_resource(ref: ResourceRef, path: str, out: list[Violation]) -> None:
    parts = urlsplit(ref.url)
    if parts.scheme not in RESOURCE_SCHEMES:
        out.append(Violation(f"{path}.url", "invalid-url",
                             f"unsupported scheme {parts.scheme!r} (allowed: {', '.join(RESOURCE_SCHEMES)})"))
    elif not (parts.netloc or parts.path):
        out.append(Violation(f"{path}.url", "invalid-url", "url has no host or path"))
    if ref.unpack not in UNPACK_KINDS:
        out.append(Violation(f"{path}.unpack", "invalid-value",
                             f"unpack must be one of {', '.join(UNPACK_KINDS)}, got {ref.unpack!r}"))
    if ref.checksum.algorithm not in CHECKSUM_DIGEST_LENGTHS:
        out.append(Violation(f"{path}.checksum", "invalid-checksum",
                             f"unknown checksum algorithm {ref.checksum.algorithm!r}"))
    elif len(ref.checksum.hexdigest) != CHECKSUM_DIGEST_LENGTHS[ref.checksum.algorithm]:
        out.append(Violation(f"{path}.checksum", "invalid-checksum",
                             f"digest length does not match {ref.checksum.algorithm}"))


def _validate_iospecs(specs: tuple[IOSpec, ...], base: str, out: list[Violation]) -> None:
    seen: set[str] = set()
    for i, spec in enumerate(specs):
        path = f"{base}[{i}]"
        if not spec.name:
            out.append(Violation(f"{path}.name", "required-empty", "io name must not be empty"))
        elif spec.name in seen:
            out.append(Violation(f"{path}.name", "duplicate-io-name", f"duplicate io name {spec.name!r}"))
        seen.add(spec.name)
        if spec.element_type not in ELEMENT_TYPES:
            out.append(Violation(f"{path}.element_type", "invalid-value",
                                 f"element_type must be one of {', '.join(ELEMENT_TYPES)}"))
        if spec.shape is not None:
            for j, dim in enumerate(spec.shape):
                ok = (isinstance(dim, int) and not isinstance(dim, bool) and dim > 0) or dim == WILDCARD_DIM
                if not ok:
                    out.append(Violation(f"{path}.shape[{j}]", "invalid-shape",
                                         f"dimensions must be positive integers or {WILDCARD_DIM!r}, got {dim!r}"))


def _validate_commands(commands: tuple[SetupCommand, ...], base: str, out: list[Violation]) -> None:
    for i, cmd in enumerate(commands):
        path = f"{base}[{i}]"
        if not cmd.argv:
            out.append(Violation(f"{path}.argv", "required-empty", "command argv must not be empty"))
        elif any(not part for part in cmd.argv):
            out.append(Violation(f"{path}.argv", "required-empty", "command argv entries must be non-empty strings"))


def validate(document: Document) -> list[Violation]:
    """Semantic invariant check. Returns violations as data; never raises.

    An empty list means the document satisfies every type invariant. The
    list is ordered by field path.
    """
    out: list[Violation] = []
    if isinstance(document, HardwareManifest):
        seen_keys: set[str] = set()
        for i, c in enumerate(document.constraints):
            path = f"hardware.constraints[{i}]"
            if not c.key:
                out.append(Violation(f"{path}.key", "required-empty", "constraint key must not be empty"))
            elif c.key in seen_keys:
                out.append(Violation(f"{path}.key", "duplicate-constraint-key",
                                     f"duplicate constraint key {c.key!r}"))
            seen_keys.add(c.key)
            if c.op not in CONSTRAINT_OPS:
                out.append(Violation(f"{path}.op", "invalid-value",
                                     f"op must be one of {', '.join(CONSTRAINT_OPS)}, got {c.op!r}"))
            elif c.op == "in" and not isinstance(c.value, (list, tuple)):
                out.append(Violation(f"{path}.value", "invalid-value", "op 'in' requires a list value"))
            elif c.op == "matches" and not isinstance(c.value, str):
                out.append(Violation(f"{path}.value", "invalid-value", "op 'matches' requires a pattern string"))
            elif c.op in ("ge", "le") and (isinstance(c.value, bool) or not isinstance(c.value, (int, float))):
                out.append(Violation(f"{path}.value", "invalid-value", f"op {c.op!r} requires a numeric value"))
        _validate_commands(document.setup, "hardware.setup", out)
        _validate_commands(document.teardown, "hardware.teardown", out)
    elif isinstance(document, SoftwareManifest):
        if not document.container_image:
            out.append(Violation("software.container_image", "required-empty",
                                 "container_image must not be empty"))
        for key in document.env:
            if not _ENV_KEY_RE.match(key):
                out.append(Violation(f"software.env.{key}", "invalid-env-key",
                                     f"env key {key!r} must match [A-Z_][A-Z0-9_]*"))
    elif isinstance(document, DatasetManifest):
        if document.split not in DATASET_SPLITS:
            out.append(Violation("dataset.split", "invalid-value",
                                 f"split must be one of {', '.join(DATASET_SPLITS)}, got {document.split!r}"))
        if not document.resources:
            out.append(Violation("dataset.resources", "empty-resources",
                                 "dataset must declare at least one resource"))
        for i, ref in enumerate(document.resources):
            _validate_resource(ref, f"dataset.resources[{i}]", out)
        if not document.element_listing:
            out.append(Violation("dataset.element_listing", "required-empty",
                                 "element_listing must not be empty"))
    elif isinstance(document, ModelManifest):
        if document.task_kind not in TASK_KINDS:
            out.append(Violation("model.task_kind", "invalid-value",
                                 f"task_kind must be one of {', '.join(TASK_KINDS)}, got {document.task_kind!r}"))
        elif document.task_kind == "inference":
            if not document.inputs:
                out.append(Violation("model.inputs", "required-empty",
                                     "inference models must declare at least one input"))
            if not document.outputs:
                out.append(Violation("model.outputs", "required-empty",
                                     "inference models must declare at least one output"))
        _validate_iospecs(document.inputs, "model.inputs", out)
        _validate_iospecs(document.outputs, "model.outputs", out)
        for i, ref in enumerate(document.artifacts):
            _validate_resource(ref, f"model.artifacts[{i}]", out)
        for stage_name, stage in document.stages().items():
            _validate_stage(stage, f"model.{stage_name}", out)
    elif isinstance(document, ReferenceLog):
        missing = [k for k in MANIFEST_KINDS if k not in document.bundle_ids]
        extra = [k for k in document.bundle_ids if k not in MANIFEST_KINDS]
        for kind in missing:
            out.append(Violation(f"reference-log.bundle.{kind}", "invalid-bundle-ids",
                                 f"bundle is missing a {kind} id"))
        for kind in extra:
            out.append(Violation(f"reference-log.bundle.{kind}", "invalid-bundle-ids",
                                 f"unexpected bundle kind {kind!r}"))
        for kind, mid in document.bundle_ids.items():
            if kind in MANIFEST_KINDS and mid.kind != kind:
                out.append(Violation(f"reference-log.bundle.{kind}", "invalid-bundle-ids",
                                     f"id {mid} is not a {kind} id"))
        for name, value in document.metrics.items():
            if not math.isfinite(value):
                out.append(Violation(f"reference-log.metrics.{name}", "nonfinite-metric",
                                     f"metric {name!r} must be finite, got {value!r}"))
    else:
        raise TypeError(f"not a manifest or reference log: {type(document).__name__}")
    return _sorted_violations(out)


def validate_bundle(bundle: TaskBundle) -> list[Violation]:
    """Cross-manifest consistency checks at composition time.

    The TaskBundle type already guarantees one manifest per kind; what is
    left are policy-level pairings. Dataset/pre-processing compatibility is
    not statically checkable and is deliberately not flagged.
    """
    out: list[Violation] = []
    for manifest in bundle:
        out.extend(validate(manifest))
    if bundle.model.task_kind == "training" and bundle.dataset.split == "test":
        out.append(
            Violation(
                "dataset.split",
                "split-task-mismatch",
                "training task paired with the test split",
                severity="warning",
            )
        )
    return _sorted_violations(out)


def lint_text(text: str) -> list[Violation]:
    """One-pass diagnostics: structural and semantic violations together."""
    try:
        document = parse_document(text)
    except ManifestParseError as exc:
        return exc.violations
    return validate(document)


# ---------------------------------------------------------------------------
# canonical serialization of typed documents


def _resource_data(ref: ResourceRef) -> dict[str, Any]:
    data: dict[str, Any] = {"url": ref.url, "checksum": str(ref.checksum)}
    if ref.unpack != "none":
        data["unpack"] = ref.unpack
    return data


def _command_data(cmd: SetupCommand) -> dict[str, Any]:
    data: dict[str, Any] = {"argv": list(cmd.argv)}
    if not cmd.must_succeed:
        data["must_succeed"] = False
    if cmd.description:
        data["description"] = cmd.description
    return data


def _iospec_data(spec: IOSpec) -> dict[str, Any]:
    data: dict[str, Any] = {"name": spec.name, "element_type": spec.element_type}
    if spec.shape is not None:
        data["shape"] = list(spec.shape)
    if spec.layout is not None:
        data["layout"] = spec.layout
    return data


def _id_header(mid: ManifestId) -> dict[str, Any]:
    return {"kind": mid.kind, "name": mid.name, "version": str(mid.version)}


def document_data(document: Document) -> dict[str, Any]:
    """Canonical plain-data form of a manifest or reference log."""
    if isinstance(document, HardwareManifest):
        data = _id_header(document.id)
        if document.constraints:
            data["constraints"] = [
                {"key": c.key, "op": c.op, "value": _canon_value(c.value)} for c in document.constraints
            ]
        if document.setup:
            data["setup"] = [_command_data(c) for c in document.setup]
        if document.teardown:
            data["teardown"] = [_command_data(c) for c in document.teardown]
        return data
    if isinstance(document, SoftwareManifest):
        data = _id_header(document.id)
        data["container_image"] = document.container_image
        if document.env:
            data["env"] = dict(sorted(document.env.items()))
        if document.framework_info:
            data["framework"] = _canon_value(document.framework_info)
        return data
    if isinstance(document, DatasetManifest):
        data = _id_header(document.id)
        data["split"] = document.split
        if document.element_listing != DEFAULT_ELEMENT_LISTING:
            data["element_listing"] = document.element_listing
        data["resources"] = [_resource_data(r) for r in document.resources]
        return data
    if isinstance(document, ModelManifest):
        data = _id_header(document.id)
        data["task_kind"] = document.task_kind
        if document.inputs:
            data["inputs"] = [_iospec_data(s) for s in document.inputs]
        if document.outputs:
            data["outputs"] = [_iospec_data(s) for s in document.outputs]
        if document.artifacts:
            data["artifacts"] = [_resource_data(r) for r in document.artifacts]
        if document.hyperparameters:
            data["hyperparameters"] = _canon_value(document.hyperparameters)
        languages = {s.language for s in document.stages().values()}
        language = languages.pop() if len(languages) == 1 else "python"
        if language != "python":
            data["stage_language"] = language
        for stage_name, stage in document.stages().items():
            if stage.source != IDENTITY_STAGE_SOURCE:
                data[stage_name] = stage.source
        return data
    if isinstance(document, ReferenceLog):
        data = {"kind": "reference-log"}
        data["bundle"] = {
            kind: QuotedString(str(document.bundle_ids[kind]))
            for kind in MANIFEST_KINDS
            if kind in document.bundle_ids
        }
        data["metrics"] = dict(sorted(document.metrics.items()))
        if document.expected_outputs is not None:
            data["expected_outputs"] = str(document.expected_outputs)
        if document.author_info:
            data["author"] = _canon_value(document.author_info)
        data["created_at"] = QuotedString(document.created_at)
        return data
    raise TypeError(f"not a manifest or reference log: {type(document).__name__}")


def serialize(document: Document) -> str:
    """Deterministic canonical text. ``parse(serialize(d))`` equals ``d``,
    and a second serialization is byte-identical."""
    return dump_canonical(document_data(document))
