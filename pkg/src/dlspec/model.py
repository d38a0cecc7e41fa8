"""Domain types for manifests, identities, versions, resources, and logs.

Pure data layer: no I/O. The on-disk text format lives in :mod:`dlspec.parser`.
All types are immutable after construction and safe to share between threads.
Mapping-valued fields (env, hyperparameters, ...) are plain dicts by
convention; callers must not mutate them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import total_ordering
from typing import Iterator, Union

MANIFEST_KINDS = ("hardware", "software", "dataset", "model")
DATASET_SPLITS = ("training", "validation", "test")
TASK_KINDS = ("inference", "training")
ELEMENT_TYPES = ("float32", "float64", "int32", "int64", "uint8", "string", "bytes")
UNPACK_KINDS = ("none", "tar", "tar.gz", "zip")
CONSTRAINT_OPS = ("eq", "ne", "ge", "le", "in", "matches")
STAGE_NAMES = ("pre_processing", "run", "post_processing")

#: Dimension marker for an unconstrained axis in an IOSpec shape.
WILDCARD_DIM = "*"

#: Body substituted for a stage omitted from a model manifest.
IDENTITY_STAGE_SOURCE = "def fun(ctx, data):\n    return data\n"

#: Default element listing rule: every file in the unpacked resource trees.
DEFAULT_ELEMENT_LISTING = "**/*"

DEFAULT_CHECKSUM_ALGORITHM = "sha256"
CHECKSUM_DIGEST_LENGTHS = {"sha256": 64, "sha512": 128, "sha1": 40, "md5": 32}

RESOURCE_SCHEMES = ("http", "https", "ftp", "file")

_NAME_RE = re.compile(r"^[a-z0-9_.-]+$")
_ENV_KEY_RE = re.compile(r"^[A-Z_][A-Z0-9_]*$")
_NUMERIC_IDENT_RE = re.compile(r"^(0|[1-9][0-9]*)$")
_ALNUM_IDENT_RE = re.compile(r"^[0-9A-Za-z-]*[A-Za-z-][0-9A-Za-z-]*$")
_VERSION_RE = re.compile(
    r"^(0|[1-9][0-9]*)\.(0|[1-9][0-9]*)\.(0|[1-9][0-9]*)(?:-([0-9A-Za-z.-]+))?$"
)
_HEX_RE = re.compile(r"^[0-9a-f]+$")


class MalformedVersion(ValueError):
    """Version text does not follow the three-component grammar."""


class MalformedRange(ValueError):
    """Version range is not one of =x.y.z, ^x.y.z, or *."""


class MalformedId(ValueError):
    """Manifest id text is not of the form kind:name@version."""


class MalformedChecksum(ValueError):
    """Checksum text is not of the form algorithm:lowercase-hex."""


def _valid_prerelease_ident(ident: str) -> bool:
    if _NUMERIC_IDENT_RE.match(ident):
        return True
    return bool(_ALNUM_IDENT_RE.match(ident))


def valid_manifest_name(name: str) -> bool:
    return bool(_NAME_RE.match(name or "")) and set(name) != {"."}


@total_ordering
@dataclass(frozen=True)
class Version:
    """A three-component version with an optional prerelease suffix.

    Ordering is total: numeric on (major, minor, patch), with any prerelease
    sorting below the same release triple, and prerelease identifiers
    compared pairwise (numeric identifiers numerically and below
    alphanumeric ones, shorter lists first on ties).
    """

    major: int
    minor: int
    patch: int
    prerelease: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for part in (self.major, self.minor, self.patch):
            if not isinstance(part, int) or isinstance(part, bool) or part < 0:
                raise MalformedVersion(f"version components must be non-negative integers: {part!r}")
        for ident in self.prerelease:
            if not _valid_prerelease_ident(ident):
                raise MalformedVersion(f"invalid prerelease identifier: {ident!r}")

    @classmethod
    def parse(cls, text: str) -> "Version":
        if not isinstance(text, str):
            raise MalformedVersion(f"expected string, got {type(text).__name__}")
        m = _VERSION_RE.match(text)
        if not m:
            raise MalformedVersion(f"malformed version {text!r} (expected major.minor.patch[-prerelease])")
        prerelease: tuple[str, ...] = ()
        if m.group(4) is not None:
            prerelease = tuple(m.group(4).split("."))
            if any(not ident for ident in prerelease):
                raise MalformedVersion(f"empty prerelease identifier in {text!r}")
        return cls(int(m.group(1)), int(m.group(2)), int(m.group(3)), prerelease)

    def _sort_key(self) -> tuple:
        idents = tuple(
            (0, int(p), "") if _NUMERIC_IDENT_RE.match(p) else (1, 0, p)
            for p in self.prerelease
        )
        return (self.major, self.minor, self.patch, 0 if self.prerelease else 1, idents)

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, Version):
            return NotImplemented
        return self._sort_key() < other._sort_key()

    def __str__(self) -> str:
        base = f"{self.major}.{self.minor}.{self.patch}"
        if self.prerelease:
            return base + "-" + ".".join(self.prerelease)
        return base


def parse_version(text: str) -> Version:
    """Parse canonical version text; raises :class:`MalformedVersion`."""
    return Version.parse(text)


@dataclass(frozen=True)
class VersionRange:
    """One of three resolution policies: exact ``=x.y.z``, caret ``^x.y.z``, wildcard ``*``.

    Caret accepts any version with the same major component that is not
    lower than the base version.
    """

    kind: str  # "exact" | "caret" | "wildcard"
    base: Version | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("exact", "caret", "wildcard"):
            raise MalformedRange(f"unknown range kind {self.kind!r}")
        if self.kind == "wildcard":
            if self.base is not None:
                raise MalformedRange("wildcard range takes no base version")
        elif self.base is None:
            raise MalformedRange(f"{self.kind} range requires a base version")

    @classmethod
    def parse(cls, text: str) -> "VersionRange":
        if not isinstance(text, str) or not text:
            raise MalformedRange(f"malformed range {text!r}")
        if text == "*":
            return cls("wildcard")
        if text.startswith("^"):
            return cls("caret", Version.parse(text[1:]))
        if text.startswith("="):
            return cls("exact", Version.parse(text[1:]))
        raise MalformedRange(f"malformed range {text!r} (expected =x.y.z, ^x.y.z, or *)")

    @classmethod
    def exact(cls, version: Version) -> "VersionRange":
        return cls("exact", version)

    def contains(self, v: Version) -> bool:
        if self.kind == "wildcard":
            return True
        assert self.base is not None
        if self.kind == "exact":
            return v == self.base
        return v.major == self.base.major and v >= self.base

    def __str__(self) -> str:
        if self.kind == "wildcard":
            return "*"
        prefix = "^" if self.kind == "caret" else "="
        return prefix + str(self.base)


def version_satisfies(v: Version, rng: VersionRange) -> bool:
    """True iff ``v`` is inside ``rng``."""
    return rng.contains(v)


def select_version(versions: "list[Version] | tuple[Version, ...]", rng: VersionRange) -> Version | None:
    """Highest version satisfying the range, or None. Deterministic."""
    matching = [v for v in versions if rng.contains(v)]
    return max(matching) if matching else None


@dataclass(frozen=True)
class ManifestId:
    """Identity of one manifest: (name, version, kind) is the full identity.

    Canonical display form ``kind:name@version`` round-trips through
    :meth:`parse`.
    """

    name: str
    version: Version
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in MANIFEST_KINDS:
            raise MalformedId(f"unknown manifest kind {self.kind!r}")
        if not _NAME_RE.match(self.name or ""):
            raise MalformedId(f"invalid manifest name {self.name!r} (allowed: [a-z0-9_.-]+)")
        if set(self.name) == {"."}:
            raise MalformedId(f"invalid manifest name {self.name!r}")

    @classmethod
    def parse(cls, text: str) -> "ManifestId":
        m = re.match(r"^([a-z-]+):([^@]+)@(.+)$", text or "")
        if not m:
            raise MalformedId(f"malformed manifest id {text!r} (expected kind:name@version)")
        return cls(name=m.group(2), version=Version.parse(m.group(3)), kind=m.group(1))

    def __str__(self) -> str:
        return f"{self.kind}:{self.name}@{self.version}"


@dataclass(frozen=True)
class Checksum:
    """Algorithm tag plus lowercase hex digest, e.g. ``sha256:ab12...``."""

    algorithm: str
    hexdigest: str

    @classmethod
    def parse(cls, text: str) -> "Checksum":
        if not isinstance(text, str) or ":" not in text:
            raise MalformedChecksum(f"malformed checksum {text!r} (expected algorithm:hexdigest)")
        algorithm, _, digest = text.partition(":")
        if algorithm not in CHECKSUM_DIGEST_LENGTHS:
            raise MalformedChecksum(f"unknown checksum algorithm {algorithm!r}")
        if not _HEX_RE.match(digest) or len(digest) != CHECKSUM_DIGEST_LENGTHS[algorithm]:
            raise MalformedChecksum(
                f"{algorithm} digest must be {CHECKSUM_DIGEST_LENGTHS[algorithm]} lowercase hex chars"
            )
        return cls(algorithm, digest)

    def __str__(self) -> str:
        return f"{self.algorithm}:{self.hexdigest}"


@dataclass(frozen=True)
class ResourceRef:
    """Remote artifact locator: URL, verification checksum, optional archive kind."""

    url: str
    checksum: Checksum
    unpack: str = "none"


@dataclass(frozen=True)
class Constraint:
    """A single hardware requirement evaluated against a host description."""

    key: str
    op: str
    value: object


@dataclass(frozen=True)
class SetupCommand:
    """A host-side command vector, never dispatched through the container."""

    argv: tuple[str, ...]
    must_succeed: bool = True
    description: str = ""


@dataclass(frozen=True)
class HardwareManifest:
    id: ManifestId
    constraints: tuple[Constraint, ...] = ()
    setup: tuple[SetupCommand, ...] = ()
    teardown: tuple[SetupCommand, ...] = ()


@dataclass(frozen=True)
class SoftwareManifest:
    id: ManifestId
    container_image: str = ""
    env: dict[str, str] = field(default_factory=dict)
    framework_info: dict[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class DatasetManifest:
    id: ManifestId
    split: str = "test"
    resources: tuple[ResourceRef, ...] = ()
    element_listing: str = DEFAULT_ELEMENT_LISTING


@dataclass(frozen=True)
class IOSpec:
    """Declared model input or output: element type plus optional shape/layout."""

    name: str
    element_type: str
    shape: tuple[Union[int, str], ...] | None = None
    layout: str | None = None


@dataclass(frozen=True)
class StageCode:
    """Embedded source for one pipeline stage; entry point is ``fun(ctx, data)``."""

    source: str
    language: str = "python"

    @property
    def is_identity(self) -> bool:
        return self.source == IDENTITY_STAGE_SOURCE


IDENTITY_STAGE = StageCode(IDENTITY_STAGE_SOURCE)


@dataclass(frozen=True)
class ModelManifest:
    id: ManifestId
    task_kind: str = "inference"
    inputs: tuple[IOSpec, ...] = ()
    outputs: tuple[IOSpec, ...] = ()
    artifacts: tuple[ResourceRef, ...] = ()
    pre_processing: StageCode = IDENTITY_STAGE
    run: StageCode = IDENTITY_STAGE
    post_processing: StageCode = IDENTITY_STAGE
    hyperparameters: dict[str, object] = field(default_factory=dict)

    def stages(self) -> dict[str, StageCode]:
        return {
            "pre_processing": self.pre_processing,
            "run": self.run,
            "post_processing": self.post_processing,
        }


Manifest = Union[HardwareManifest, SoftwareManifest, DatasetManifest, ModelManifest]


@dataclass(frozen=True)
class ReferenceLog:
    """Author-published record used to verify a reproduction of a task."""

    bundle_ids: dict[str, ManifestId]
    metrics: dict[str, float]
    created_at: str
    expected_outputs: Checksum | None = None
    author_info: dict[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class TaskBundle:
    """A resolved, mutually consistent quadruple of manifests."""

    hardware: HardwareManifest
    software: SoftwareManifest
    dataset: DatasetManifest
    model: ModelManifest

    @property
    def ids(self) -> dict[str, ManifestId]:
        return {
            "hardware": self.hardware.id,
            "software": self.software.id,
            "dataset": self.dataset.id,
            "model": self.model.id,
        }

    def __iter__(self) -> Iterator[Manifest]:
        yield self.hardware
        yield self.software
        yield self.dataset
        yield self.model


def manifest_kind(manifest: Manifest | ReferenceLog) -> str:
    if isinstance(manifest, HardwareManifest):
        return "hardware"
    if isinstance(manifest, SoftwareManifest):
        return "software"
    if isinstance(manifest, DatasetManifest):
        return "dataset"
    if isinstance(manifest, ModelManifest):
        return "model"
    if isinstance(manifest, ReferenceLog):
        return "reference-log"
    raise TypeError(f"not a manifest: {type(manifest).__name__}")


def canonical_id(manifest: Manifest | ManifestId) -> str:
    """Stable display form ``kind:name@version`` for a manifest or id."""
    if isinstance(manifest, ManifestId):
        return str(manifest)
    return str(manifest.id)
