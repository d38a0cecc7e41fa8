"""Filesystem manifest registry: store, resolve, and compose task bundles.

Layout is a pure function of identity: ``<root>/<kind>/<name>/<version>.dlspec.yml``.
Published versions are immutable; re-putting different content under an
existing id is a conflict. Concurrent reads need no coordination; writes
are serialized through an advisory lock file at the registry root.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterable

from filelock import FileLock

from . import parser
from .model import (
    DatasetManifest,
    HardwareManifest,
    MalformedVersion,
    Manifest,
    ManifestId,
    ModelManifest,
    SoftwareManifest,
    TaskBundle,
    Version,
    VersionRange,
    select_version,
    valid_manifest_name,
)

MANIFEST_SUFFIX = ".dlspec.yml"
REGISTRY_ENV_VAR = "DLSPEC_REGISTRY"


class RegistryError(Exception):
    pass


class ManifestConflict(RegistryError):
    """An id is already published with different content."""


class ManifestNotFound(RegistryError):
    """No stored version satisfies the requested range."""


class ValidationFailed(RegistryError):
    """Manifest has error-severity violations and cannot be published."""

    def __init__(self, violations):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


def default_registry_root() -> Path:
    env = os.environ.get(REGISTRY_ENV_VAR)
    if env:
        return Path(env)
    return Path.home() / ".dlspec" / "registry"


class Registry:
    def __init__(self, root: Path | str):
        self.root = Path(root)

    def _lock(self) -> FileLock:
        self.root.mkdir(parents=True, exist_ok=True)
        return FileLock(str(self.root / ".lock"))

    def path_for(self, manifest_id: ManifestId) -> Path:
        return self.root / manifest_id.kind / manifest_id.name / f"{manifest_id.version}{MANIFEST_SUFFIX}"

    def put(self, manifest: Manifest) -> ManifestId:
        """Persist a manifest at its canonical path.

        Idempotent for identical content; a content change under an already
        published id raises :class:`ManifestConflict`.
        """
        violations = [v for v in parser.validate(manifest) if v.severity == "error"]
        if violations:
            raise ValidationFailed(violations)
        text = parser.serialize(manifest)
        path = self.path_for(manifest.id)
        with self._lock():
            if path.exists():
                if path.read_text(encoding="utf-8") == text:
                    return manifest.id
                raise ManifestConflict(
                    f"{manifest.id} is already published with different content; "
                    "publish a new version instead"
                )
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(text, encoding="utf-8")
            os.replace(tmp, path)
        return manifest.id

    def get(self, manifest_id: ManifestId) -> Manifest:
        path = self.path_for(manifest_id)
        if not path.is_file():
            raise ManifestNotFound(f"{manifest_id} is not in the registry at {self.root}")
        return parser.parse_manifest(path.read_text(encoding="utf-8"))

    def versions(self, kind: str, name: str) -> list[Version]:
        directory = self.root / kind / name
        if not directory.is_dir():
            return []
        found = []
        for entry in directory.iterdir():
            if not entry.name.endswith(MANIFEST_SUFFIX):
                continue
            try:
                found.append(Version.parse(entry.name[: -len(MANIFEST_SUFFIX)]))
            except MalformedVersion:
                continue
        return sorted(found)

    def resolve(self, kind: str, name: str, rng: VersionRange | str) -> Manifest:
        """Manifest with the highest version satisfying the range."""
        if isinstance(rng, str):
            rng = VersionRange.parse(rng)
        best = select_version(self.versions(kind, name), rng)
        if best is None:
            raise ManifestNotFound(f"no version of {kind}:{name} satisfies {rng}")
        return self.get(ManifestId(name=name, version=best, kind=kind))

    def resolve_bundle(self, refs: Iterable[tuple[str, str, VersionRange | str]]) -> TaskBundle:
        """Resolve four (kind, name, range) refs into a TaskBundle.

        Requires exactly one ref per kind; the resolved ids are available
        on the returned bundle for the run log.
        """
        refs = list(refs)
        by_kind: dict[str, tuple[str, VersionRange | str]] = {}
        for kind, name, rng in refs:
            if kind in by_kind:
                raise RegistryError(f"duplicate {kind} ref in bundle")
            by_kind[kind] = (name, rng)
        missing = [k for k in ("hardware", "software", "dataset", "model") if k not in by_kind]
        if missing:
            raise RegistryError(f"bundle refs are missing kinds: {', '.join(missing)}")
        unknown = [k for k in by_kind if k not in ("hardware", "software", "dataset", "model")]
        if unknown:
            raise RegistryError(f"unknown kinds in bundle refs: {', '.join(unknown)}")
        resolved = {kind: self.resolve(kind, name, rng) for kind, (name, rng) in by_kind.items()}
        hardware = resolved["hardware"]
        software = resolved["software"]
        dataset = resolved["dataset"]
        model = resolved["model"]
        assert isinstance(hardware, HardwareManifest) and isinstance(software, SoftwareManifest)
        assert isinstance(dataset, DatasetManifest) and isinstance(model, ModelManifest)
        return TaskBundle(hardware=hardware, software=software, dataset=dataset, model=model)

    def put_all(self, manifests: Iterable[Manifest]) -> list[ManifestId]:
        return [self.put(m) for m in manifests]

    def __contains__(self, manifest_id: ManifestId) -> bool:
        return self.path_for(manifest_id).is_file()

    def __repr__(self) -> str:
        return f"Registry({str(self.root)!r})"


def parse_ref(text: str, kind: str | None = None) -> tuple[str, str, VersionRange]:
    """Parse ``[kind:]name@range`` into a (kind, name, range) triple.

    ``kind`` supplies or cross-checks the kind portion (CLI flags name the
    kind, bundle files name it twice).
    """
    body = text
    if ":" in text:
        prefix, _, body = text.partition(":")
        if kind is not None and prefix != kind:
            raise RegistryError(f"ref {text!r} does not have kind {kind!r}")
        kind = prefix
    if kind is None:
        raise RegistryError(f"ref {text!r} has no kind")
    if "@" not in body:
        raise RegistryError(f"ref {text!r} has no version range (expected name@range)")
    name, _, range_text = body.partition("@")
    if not valid_manifest_name(name):
        raise RegistryError(f"ref {text!r} has an invalid manifest name {name!r}")
    return kind, name, VersionRange.parse(range_text)
