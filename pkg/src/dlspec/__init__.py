"""Decoupled task manifests and the runtime that executes and verifies them.

Four manifest kinds (hardware, software, dataset, model) describe one task
each from a single aspect; a registry resolves versioned references into a
bundle; the orchestrator gates, stages, runs, and records the task; and
reference logs let anyone check a reproduction against published results.
"""

from .model import (
    Checksum,
    Constraint,
    DatasetManifest,
    HardwareManifest,
    IOSpec,
    ManifestId,
    ModelManifest,
    ReferenceLog,
    ResourceRef,
    SetupCommand,
    SoftwareManifest,
    StageCode,
    TaskBundle,
    Version,
    VersionRange,
    canonical_id,
    parse_version,
    version_satisfies,
)
from .parser import (
    ManifestParseError,
    Violation,
    lint_text,
    parse_document,
    parse_manifest,
    parse_reference_log,
    serialize,
    validate,
    validate_bundle,
)
from .registry import Registry
from .fetcher import ResourceCache
from .orchestrator import ExecutionPlan, RunOptions, RunRecord, compare_logs, emit_reference_log, execute, plan

__version__ = "0.1.0"

__all__ = [
    "Checksum",
    "Constraint",
    "DatasetManifest",
    "ExecutionPlan",
    "HardwareManifest",
    "IOSpec",
    "ManifestId",
    "ManifestParseError",
    "ModelManifest",
    "ReferenceLog",
    "Registry",
    "ResourceCache",
    "ResourceRef",
    "RunOptions",
    "RunRecord",
    "SetupCommand",
    "SoftwareManifest",
    "StageCode",
    "TaskBundle",
    "Version",
    "VersionRange",
    "Violation",
    "canonical_id",
    "compare_logs",
    "emit_reference_log",
    "execute",
    "lint_text",
    "parse_document",
    "parse_manifest",
    "parse_reference_log",
    "parse_version",
    "plan",
    "serialize",
    "validate",
    "validate_bundle",
    "version_satisfies",
]
