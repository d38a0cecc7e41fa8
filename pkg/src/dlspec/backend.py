"""Execution environments: a container launched from the software manifest's
image, or a plain host process for engine-free runs.

The orchestrator never executes stage code itself; every stage reaches the
worker program inside the environment through :meth:`EnvironmentHandle.start_worker`,
which opens a framed-message channel (see :mod:`dlspec.protocol` and
PROTOCOL.md). The container engine is driven through its command-line
interface so tests can substitute a recorder or a fake engine.
"""

from __future__ import annotations

import os
import queue
import shutil
import subprocess
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import protocol

DEFAULT_ENGINE = "docker"
DEFAULT_WORKER_CMD = ("dlspec-stage-host",)
DEFAULT_HANDSHAKE_TIMEOUT = 30.0
DEFAULT_GRACE_SECONDS = 5.0


class BackendError(Exception):
    pass


class EngineMissing(BackendError):
    pass


class ImageNotFound(BackendError):
    pass


class MountSourceMissing(BackendError):
    pass


class EnvironmentTerminated(BackendError):
    """Operation attempted on a handle that has been shut down."""


class SpawnFailure(BackendError):
    pass


class HandshakeTimeout(BackendError):
    pass


class ProtocolMismatch(BackendError):
    pass


class WorkerTimeout(BackendError):
    pass


class WorkerProtocolError(BackendError):
    """The worker sent a malformed or violation frame."""


@dataclass(frozen=True)
class Mount:
    source: Path
    target: str
    read_only: bool = True


@dataclass(frozen=True)
class ExecutionSpec:
    backend: str  # "process" | "container"
    image: str = ""
    env: dict[str, str] = field(default_factory=dict)
    mounts: tuple[Mount, ...] = ()
    workdir: str = ""


class WorkerChannel:
    """Single-caller framed channel to the worker's stdin/stdout.

    A reader thread decodes frames into a queue so receives can time out;
    stderr is drained into a bounded buffer for diagnostics.
    """

    def __init__(self, proc: subprocess.Popen):
        self._proc = proc
        self._frames: queue.Queue = queue.Queue()
        self._stderr_chunks: list[bytes] = []
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self._stderr_thread = threading.Thread(target=self._stderr_loop, daemon=True)
        self._stderr_thread.start()

    def _read_loop(self) -> None:
        try:
            while True:
                frame = protocol.read_frame(self._proc.stdout)
                if frame is None:
                    self._frames.put(None)
                    return
                self._frames.put(frame)
        except Exception as exc:  # noqa: BLE001 - surfaced on recv
            self._frames.put(exc)

    def _stderr_loop(self) -> None:
        if self._proc.stderr is None:
            return
        while True:
            chunk = self._proc.stderr.read(65536)
            if not chunk:
                return
            if sum(len(c) for c in self._stderr_chunks) < 1_000_000:
                self._stderr_chunks.append(chunk)

    @property
    def stderr_text(self) -> str:
        return b"".join(self._stderr_chunks).decode("utf-8", errors="replace")

    @property
    def exit_code(self) -> int | None:
        return self._proc.poll()

    def send(self, frame: dict) -> None:
        if self._closed:
            raise EnvironmentTerminated("worker channel is closed")
        try:
            protocol.write_frame(self._proc.stdin, frame)
        except (BrokenPipeError, ValueError, OSError) as exc:
            raise SpawnFailure(f"worker rejected a frame: {exc}; stderr: {self.stderr_text}") from exc

    def recv(self, timeout: float | None = None) -> dict | None:
        """Next frame, or None on end of stream. Raises WorkerTimeout."""
        try:
            item = self._frames.get(timeout=timeout)
        except queue.Empty:
            raise WorkerTimeout(f"no frame from worker within {timeout} s") from None
        if isinstance(item, Exception):
            raise WorkerProtocolError(str(item)) from item
        return item

    def close(self, grace: float = DEFAULT_GRACE_SECONDS) -> int | None:
        """Terminate politely: TERMINATE frame, grace period, then kill."""
        if self._closed:
            return self._proc.poll()
        self._closed = True
        try:
            protocol.write_frame(self._proc.stdin, {"type": protocol.TERMINATE})
        except (BrokenPipeError, ValueError, OSError):
            pass
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=grace)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        return self._proc.returncode


@dataclass(frozen=True)
class ExitReport:
    backend: str
    worker_exit_code: int | None
    stderr_tail: str = ""
    already_stopped: bool = False


class EngineCli:
    """Thin command-line driver for an OCI-compatible engine.

    ``run`` and ``popen`` are injectable for recording or faking engine
    interactions in tests.
    """

    def __init__(
        self,
        engine: str = DEFAULT_ENGINE,
        extra_args: Sequence[str] = (),
        run: Callable[..., subprocess.CompletedProcess] | None = None,
        popen: Callable[..., subprocess.Popen] | None = None,
        which: Callable[[str], str | None] = shutil.which,
    ):
        self.engine = engine
        self.extra_args = tuple(extra_args)
        self._run = run or (lambda argv: subprocess.run(argv, capture_output=True, text=True, check=False))
        self._popen = popen or (
            lambda argv: subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.PIPE
            )
        )
        self._which = which

    def available(self) -> bool:
        return self._which(self.engine) is not None

    def image_exists(self, image: str) -> bool:
        completed = self._run([self.engine, "image", "inspect", image])
        return completed.returncode == 0

    def create(self, spec: ExecutionSpec, name: str) -> None:
        argv = [self.engine, "run", "--detach", "--name", name]
        for key, value in sorted(spec.env.items()):
            argv += ["--env", f"{key}={value}"]
        for mount in spec.mounts:
            suffix = ":ro" if mount.read_only else ""
            argv += ["--volume", f"{mount.source}:{mount.target}{suffix}"]
        if spec.workdir:
            argv += ["--workdir", spec.workdir]
        argv += list(self.extra_args)
        argv += [spec.image, "sleep", "infinity"]
        completed = self._run(argv)
        if completed.returncode != 0:
            raise BackendError(f"engine failed to start container: {completed.stderr}")

    def remove(self, name: str) -> None:
        self._run([self.engine, "rm", "--force", name])

    def exec_worker(self, name: str, worker_cmd: Sequence[str], workdir: str) -> subprocess.Popen:
        argv = [self.engine, "exec", "--interactive"]
        if workdir:
            argv += ["--workdir", workdir]
        argv += [name, *worker_cmd]
        return self._popen(argv)


class EnvironmentHandle:
    """Base class: liveness tracking plus the host→environment path view."""

    backend = "abstract"

    def __init__(self, spec: ExecutionSpec):
        self.spec = spec
        self.id = f"dlspec-{uuid.uuid4().hex[:12]}"
        self._alive = True
        self._channel: WorkerChannel | None = None

    @property
    def alive(self) -> bool:
        return self._alive

    def _require_alive(self) -> None:
        if not self._alive:
            raise EnvironmentTerminated(f"environment {self.id} is already shut down")

    def env_path(self, host_path: Path | str) -> str:
        """Translate a host path to its in-environment equivalent."""
        raise NotImplementedError

    def _spawn(self, worker_cmd: Sequence[str]) -> subprocess.Popen:
        raise NotImplementedError

    def start_worker(
        self,
        worker_cmd: Sequence[str] = DEFAULT_WORKER_CMD,
        handshake_timeout: float = DEFAULT_HANDSHAKE_TIMEOUT,
    ) -> WorkerChannel:
        """Spawn the stage-host worker and complete the HELLO handshake."""
        self._require_alive()
        try:
            proc = self._spawn(worker_cmd)
        except OSError as exc:
            raise SpawnFailure(f"could not spawn worker {list(worker_cmd)!r}: {exc}") from exc
        channel = WorkerChannel(proc)
        channel.send({"type": protocol.HELLO, "protocol_version": protocol.PROTOCOL_VERSION})
        try:
            reply = channel.recv(timeout=handshake_timeout)
        except WorkerTimeout:
            channel.close(grace=0.5)
            raise HandshakeTimeout(
                f"worker did not answer HELLO within {handshake_timeout} s; stderr: {channel.stderr_text}"
            ) from None
        if reply is None:
            code = channel.exit_code
            channel.close(grace=0.5)
            raise SpawnFailure(
                f"worker exited during handshake (exit code {code}); stderr: {channel.stderr_text}"
            )
        if reply.get("type") != protocol.HELLO_ACK or reply.get("protocol_version") != protocol.PROTOCOL_VERSION:
            channel.close(grace=0.5)
            raise ProtocolMismatch(f"unexpected handshake reply: {reply!r}")
        self._channel = channel
        return channel

    def shutdown(self, grace: float = DEFAULT_GRACE_SECONDS) -> ExitReport:
        """Stop everything; idempotent and best-effort."""
        if not self._alive:
            return ExitReport(backend=self.backend, worker_exit_code=None, already_stopped=True)
        self._alive = False
        worker_exit = None
        stderr_tail = ""
        if self._channel is not None:
            worker_exit = self._channel.close(grace=grace)
            stderr_tail = self._channel.stderr_text[-4000:]
        self._release()
        return ExitReport(backend=self.backend, worker_exit_code=worker_exit, stderr_tail=stderr_tail)

    def _release(self) -> None:
        pass


class ProcessHandle(EnvironmentHandle):
    """Same-host execution for tests and engine-free environments."""

    backend = "process"

    def env_path(self, host_path: Path | str) -> str:
        return str(host_path)

    def _spawn(self, worker_cmd: Sequence[str]) -> subprocess.Popen:
        env = dict(os.environ)
        env.update(self.spec.env)
        return subprocess.Popen(
            list(worker_cmd),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            env=env,
            cwd=self.spec.workdir or None,
        )


class ContainerHandle(EnvironmentHandle):
    backend = "container"

    def __init__(self, spec: ExecutionSpec, engine: EngineCli):
        super().__init__(spec)
        self._engine = engine

    def env_path(self, host_path: Path | str) -> str:
        host_path = Path(host_path)
        best: tuple[int, str] | None = None
        for mount in self.spec.mounts:
            try:
                relative = host_path.relative_to(mount.source)
            except ValueError:
                continue
            depth = len(mount.source.parts)
            if best is None or depth > best[0]:
                target = mount.target.rstrip("/")
                suffix = str(relative)
                best = (depth, target if suffix == "." else f"{target}/{suffix}")
        if best is None:
            raise BackendError(f"host path {host_path} is not covered by any mount")
        return best[1]

    def _spawn(self, worker_cmd: Sequence[str]) -> subprocess.Popen:
        return self._engine.exec_worker(self.id, worker_cmd, self.spec.workdir)

    def _release(self) -> None:
        self._engine.remove(self.id)


def launch(spec: ExecutionSpec, engine: EngineCli | None = None) -> EnvironmentHandle:
    """Start an execution environment for a task run.

    Process backend: validates mounts and returns a live handle; no engine
    is consulted. Container backend: requires the engine binary on PATH and
    the image to be present, then starts a long-lived container that the
    worker is exec'ed into.
    """
    for mount in spec.mounts:
        if not Path(mount.source).exists():
            raise MountSourceMissing(f"mount source does not exist: {mount.source}")
    if spec.backend == "process":
        return ProcessHandle(spec)
    if spec.backend == "container":
        if not spec.image:
            raise BackendError("container backend requires a non-empty image")
        engine = engine or EngineCli()
        if not engine.available():
            raise EngineMissing(f"container engine {engine.engine!r} is not on PATH")
        if not engine.image_exists(spec.image):
            raise ImageNotFound(f"image {spec.image!r} is not available to {engine.engine!r}")
        handle = ContainerHandle(spec, engine)
        engine.create(spec, handle.id)
        return handle
    raise BackendError(f"unknown backend {spec.backend!r} (expected process or container)")
