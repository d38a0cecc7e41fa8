"""Checksum-verified resource downloads into a content-addressed cache.

Cache entries are keyed by checksum, not URL, so two URLs serving the same
bytes share one entry. Verified blobs live at
``<cache>/<algorithm>/<digest[:2]>/<digest>``; archives additionally get an
unpacked tree under ``<cache>/unpacked/...``. Downloads stream to a
temporary file and are renamed into place only after the digest matches, so
a partial or corrupt download can never appear at a final cache path.

``http(s)`` and ``file`` URLs are always supported; ``ftp`` rides the same
urllib opener. Redirects are followed (urllib's limit of 10); there is no
credential handling.
"""

from __future__ import annotations

import hashlib
import os
import shutil
import tarfile
import tempfile
import urllib.error
import urllib.request
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable
from urllib.parse import urlsplit

from filelock import FileLock

from .model import RESOURCE_SCHEMES, Checksum, ResourceRef

CACHE_ENV_VAR = "DLSPEC_CACHE"

_CHUNK_BYTES = 1024 * 1024


class FetchError(Exception):
    def __init__(self, message: str, *, index: int | None = None):
        super().__init__(message)
        self.index = index


class UnsupportedScheme(FetchError):
    pass


class Unreachable(FetchError):
    pass


class ChecksumMismatch(FetchError):
    pass


def default_cache_root() -> Path:
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return Path(env)
    return Path.home() / ".dlspec" / "cache"


def hash_file(path: Path | str, algorithm: str = "sha256") -> str:
    """Streaming digest of a file; memory use is constant in file size."""
    digest = hashlib.new(algorithm)
    with open(path, "rb") as handle:
        while True:
            chunk = handle.read(_CHUNK_BYTES)
            if not chunk:
                break
            digest.update(chunk)
    return digest.hexdigest()


def verify(path: Path | str, checksum: Checksum) -> bool:
    """True iff the file's streaming digest equals the checksum."""
    return hash_file(path, checksum.algorithm) == checksum.hexdigest


@dataclass
class FetchStats:
    """Observable transfer counters, mainly for tests and cache audits."""

    network_fetches: int = 0
    cache_hits: int = 0
    evictions: int = 0


@dataclass(frozen=True)
class CacheEntry:
    checksum: Checksum
    path: Path
    size_bytes: int
    source_url: str
    fetched_at: float


class ResourceCache:
    """Content-addressed cache with per-entry locking.

    ``opener`` is injectable so tests can count or fake transfers; the
    default is a urllib opener shared across threads.
    """

    def __init__(self, root: Path | str, opener: Callable[[str], object] | None = None):
        # resolved so cache paths survive cwd changes and map cleanly
        # through container mounts
        self.root = Path(root).resolve()
        self.stats = FetchStats()
        self._opener = opener or _default_opener
        self._sources: dict[str, str] = {}

    # -- layout -------------------------------------------------------------

    def blob_path(self, checksum: Checksum) -> Path:
        return self.root / checksum.algorithm / checksum.hexdigest[:2] / checksum.hexdigest

    def unpacked_path(self, checksum: Checksum) -> Path:
        return self.root / "unpacked" / checksum.algorithm / checksum.hexdigest[:2] / checksum.hexdigest

    def resource_path(self, ref: ResourceRef) -> Path:
        """Path fetch() will return for this ref, whether or not it is
        materialized yet. A pure function of the checksum."""
        if ref.unpack != "none":
            return self.unpacked_path(ref.checksum)
        return self.blob_path(ref.checksum)

    def _entry_lock(self, checksum: Checksum) -> FileLock:
        lock_dir = self.root / "locks"
        lock_dir.mkdir(parents=True, exist_ok=True)
        return FileLock(str(lock_dir / f"{checksum.algorithm}-{checksum.hexdigest}.lock"))

    # -- fetching -----------------------------------------------------------

    def fetch(self, ref: ResourceRef) -> Path:
        """Materialize one resource; returns the blob path, or the unpacked
        directory when the ref declares an archive kind.

        The checksum always applies to the archive bytes, before unpacking.
        A cached entry is re-verified on access; corruption evicts and
        refetches. Checksum mismatches delete the download and are never
        cached.
        """
        scheme = urlsplit(ref.url).scheme
        if scheme not in RESOURCE_SCHEMES:
            raise UnsupportedScheme(
                f"unsupported scheme {scheme!r} in {ref.url!r} (allowed: {', '.join(RESOURCE_SCHEMES)})"
            )
        blob = self.blob_path(ref.checksum)
        with self._entry_lock(ref.checksum):
            if blob.is_file():
                if verify(blob, ref.checksum):
                    self.stats.cache_hits += 1
                    return self._materialize_unpack(ref, blob)
                blob.unlink()
                shutil.rmtree(self.unpacked_path(ref.checksum), ignore_errors=True)
                self.stats.evictions += 1
            self._download(ref, blob)
            self._sources[str(ref.checksum)] = ref.url
            return self._materialize_unpack(ref, blob)

    def _download(self, ref: ResourceRef, blob: Path) -> None:
        blob.parent.mkdir(parents=True, exist_ok=True)
        self.stats.network_fetches += 1
        fd, tmp_name = tempfile.mkstemp(dir=blob.parent, prefix=".partial-")
        tmp = Path(tmp_name)
        try:
            digest = hashlib.new(ref.checksum.algorithm)
            try:
                with self._opener(ref.url) as response, os.fdopen(fd, "wb") as out:
                    fd = None
                    while True:
                        chunk = response.read(_CHUNK_BYTES)
                        if not chunk:
                            break
                        digest.update(chunk)
                        out.write(chunk)
            except (urllib.error.URLError, OSError) as exc:
                raise Unreachable(f"could not fetch {ref.url!r}: {exc}") from exc
            if digest.hexdigest() != ref.checksum.hexdigest:
                raise ChecksumMismatch(
                    f"{ref.url!r} downloaded with digest "
                    f"{ref.checksum.algorithm}:{digest.hexdigest()}, expected {ref.checksum}"
                )
            os.replace(tmp, blob)
        finally:
            if fd is not None:
                os.close(fd)
            tmp.unlink(missing_ok=True)

    def _materialize_unpack(self, ref: ResourceRef, blob: Path) -> Path:
        if ref.unpack == "none":
            return blob
        target = self.unpacked_path(ref.checksum)
        if target.is_dir():
            return target
        staging = target.with_name(target.name + ".partial")
        shutil.rmtree(staging, ignore_errors=True)
        staging.mkdir(parents=True)
        try:
            _unpack_archive(blob, staging, ref.unpack)
            os.replace(staging, target)
        except Exception:
            shutil.rmtree(staging, ignore_errors=True)
            raise
        return target

    def fetch_all(self, refs: list[ResourceRef], parallelism: int = 4) -> list[Path]:
        """Fetch every ref; returned paths match input order.

        All-or-nothing: any failure aborts the call and reports the error
        of the lowest failing input index (the exception's ``index``
        attribute carries it).
        """
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if not refs:
            return []
        results: list[Path | None] = [None] * len(refs)
        failures: dict[int, Exception] = {}
        with ThreadPoolExecutor(max_workers=min(parallelism, len(refs))) as pool:
            futures = {pool.submit(self.fetch, ref): i for i, ref in enumerate(refs)}
            for future, index in futures.items():
                try:
                    results[index] = future.result()
                except Exception as exc:  # noqa: BLE001 - rethrown below
                    failures[index] = exc
        if failures:
            index = min(failures)
            exc = failures[index]
            if isinstance(exc, FetchError):
                raise type(exc)(f"resource {index}: {exc}", index=index) from exc
            raise FetchError(f"resource {index}: {exc}", index=index) from exc
        return [path for path in results if path is not None]

    def entry(self, checksum: Checksum) -> CacheEntry | None:
        """Introspect one cache entry; source_url is known only for
        resources this process fetched itself (the store is content-keyed)."""
        blob = self.blob_path(checksum)
        if not blob.is_file():
            return None
        stat = blob.stat()
        return CacheEntry(
            checksum=checksum,
            path=blob,
            size_bytes=stat.st_size,
            source_url=self._sources.get(str(checksum), ""),
            fetched_at=stat.st_mtime,
        )


def _default_opener(url: str):
    return urllib.request.urlopen(url, timeout=60)


def _safe_members(names: list[str]) -> None:
    for name in names:
        path = Path(name)
        if path.is_absolute() or ".." in path.parts:
            raise FetchError(f"archive member escapes the extraction root: {name!r}")


def _unpack_archive(blob: Path, target: Path, kind: str) -> None:
    if kind in ("tar", "tar.gz"):
        mode = "r:gz" if kind == "tar.gz" else "r:"
        with tarfile.open(blob, mode) as archive:
            _safe_members(archive.getnames())
            archive.extractall(target)
    elif kind == "zip":
        with zipfile.ZipFile(blob) as archive:
            _safe_members(archive.namelist())
            archive.extractall(target)
    else:
        raise FetchError(f"unsupported unpack kind {kind!r}")


def list_elements(roots: list[Path], pattern: str) -> list[Path]:
    """Element listing for dataset resources.

    Directory roots (unpacked archives) are globbed with ``pattern`` and
    contribute their matching files sorted lexicographically by relative
    path. Single-file resources are listed as-is: the pattern constrains
    tree shapes, not content-addressed blob names. Roots contribute in
    input order.
    """
    elements: list[Path] = []
    for root in roots:
        if root.is_dir():
            matches = [p for p in root.glob(pattern) if p.is_file()]
            matches.sort(key=lambda p: str(p.relative_to(root)))
            elements.extend(matches)
        else:
            elements.append(root)
    return elements
