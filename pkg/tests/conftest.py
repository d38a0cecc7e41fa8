"""Shared fixtures: corpus access, synthetic bundles, deterministic manifest
generation, and tiny scripted workers for protocol-level tests."""

from __future__ import annotations

import hashlib
import random
import string
import textwrap
from pathlib import Path

import pytest

from dlspec.model import (
    Checksum,
    Constraint,
    DatasetManifest,
    HardwareManifest,
    IOSpec,
    ManifestId,
    ModelManifest,
    ResourceRef,
    SetupCommand,
    SoftwareManifest,
    StageCode,
    TaskBundle,
    Version,
)

REPO_ROOT = Path(__file__).resolve().parents[1]
CORPUS_DIR = REPO_ROOT / "corpus"

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance-criteria suite")
    config.addinivalue_line("markers", "acceptance_criterion(name): names one acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    # criterion names travel via user_properties (set in runtest_makereport below)
    for key, value in report.user_properties:
        if key == "acceptance_criterion":
            _ACCEPTANCE_RESULTS[value] = "PASS" if report.passed else "FAIL"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("acceptance_criterion")
    if marker is not None and call.when == "call":
        report = outcome.get_result()
        report.user_properties.append(("acceptance_criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, result in _ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"[{result}] {name}")


@pytest.fixture(scope="session")
def corpus_paths() -> list[Path]:
    paths = sorted(CORPUS_DIR.glob("*.dlspec.yml"))
    assert len(paths) >= 12
    return paths


def sha256_of(path: Path) -> Checksum:
    return Checksum("sha256", hashlib.sha256(path.read_bytes()).hexdigest())


def file_resource(path: Path, unpack: str = "none") -> ResourceRef:
    return ResourceRef(url=path.as_uri(), checksum=sha256_of(path), unpack=unpack)


def write_digit_files(directory: Path, values=(1, 2, 3)) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for value in values:
        path = directory / f"digit-{value}.txt"
        path.write_text(f"{value}\n")
        paths.append(path)
    return paths


SUM_PRE = StageCode(
    "def fun(ctx, data):\n"
    "    values = []\n"
    "    for path in data:\n"
    "        with open(path) as handle:\n"
    "            values.append(int(handle.read().strip()))\n"
    "    return values\n"
)
SUM_RUN = StageCode("def fun(ctx, data):\n    return sum(data)\n")
SUM_POST = StageCode("def fun(ctx, data):\n    return str(data)\n")


def make_sum_model(name: str = "sum-ints", version: str = "1.0.0", artifacts=()) -> ModelManifest:
    return ModelManifest(
        id=ManifestId(name, Version.parse(version), "model"),
        task_kind="inference",
        inputs=(IOSpec(name="numbers", element_type="int64", shape=("*",)),),
        outputs=(IOSpec(name="total", element_type="string"),),
        artifacts=tuple(artifacts),
        pre_processing=SUM_PRE,
        run=SUM_RUN,
        post_processing=SUM_POST,
    )


def make_hardware(name: str = "any-host", version: str = "1.0.0", constraints=(), setup=(), teardown=()) -> HardwareManifest:
    return HardwareManifest(
        id=ManifestId(name, Version.parse(version), "hardware"),
        constraints=tuple(constraints),
        setup=tuple(setup),
        teardown=tuple(teardown),
    )


def make_software(name: str = "python-slim", version: str = "1.0.0", env=None) -> SoftwareManifest:
    return SoftwareManifest(
        id=ManifestId(name, Version.parse(version), "software"),
        container_image="docker.io/library/python:3.10-slim",
        env=dict(env or {}),
    )


def make_digit_dataset(directory: Path, name: str = "digits-local", version: str = "1.0.0") -> DatasetManifest:
    paths = write_digit_files(directory)
    return DatasetManifest(
        id=ManifestId(name, Version.parse(version), "dataset"),
        split="test",
        resources=tuple(file_resource(p) for p in paths),
    )


@pytest.fixture
def sum_bundle(tmp_path: Path) -> TaskBundle:
    return TaskBundle(
        hardware=make_hardware(),
        software=make_software(),
        dataset=make_digit_dataset(tmp_path / "data"),
        model=make_sum_model(),
    )


# ---------------------------------------------------------------------------
# deterministic random manifests (seeded; used by round-trip and plan suites)

_NAME_ALPHABET = string.ascii_lowercase + string.digits + "_-."


def _random_name(rng: random.Random) -> str:
    while True:
        name = "".join(rng.choice(_NAME_ALPHABET) for _ in range(rng.randint(1, 16)))
        if set(name) != {"."}:
            return name


def _random_version(rng: random.Random) -> Version:
    prerelease = ()
    if rng.random() < 0.25:
        idents = []
        for _ in range(rng.randint(1, 3)):
            if rng.random() < 0.5:
                idents.append(str(rng.randint(0, 40)))
            else:
                idents.append(rng.choice(["alpha", "beta", "rc-1", "dev", "RC"]))
        prerelease = tuple(idents)
    return Version(rng.randint(0, 9), rng.randint(0, 20), rng.randint(0, 20), prerelease)


def _random_checksum(rng: random.Random) -> Checksum:
    return Checksum("sha256", "".join(rng.choice("0123456789abcdef") for _ in range(64)))


def _random_resource(rng: random.Random) -> ResourceRef:
    scheme = rng.choice(["https", "http", "ftp", "file"])
    host = "" if scheme == "file" else "mirror.example.org"
    unpack = rng.choice(["none", "none", "tar", "tar.gz", "zip"])
    return ResourceRef(
        url=f"{scheme}://{host}/{_random_name(rng)}/{_random_name(rng)}",
        checksum=_random_checksum(rng),
        unpack=unpack,
    )


def _random_stage(rng: random.Random) -> StageCode:
    comment = "".join(rng.choice(string.ascii_letters + " äöü∂") for _ in range(rng.randint(0, 18)))
    body = rng.choice(
        [
            "    return data",
            "    return [x for x in data]",
            f"    return {rng.randint(0, 999)}",
            "    return {'out': data}",
        ]
    )
    return StageCode(f"def fun(ctx, data):\n    # {comment}\n{body}\n")


def random_manifest(rng: random.Random, kind: str | None = None):
    kind = kind or rng.choice(["hardware", "software", "dataset", "model"])
    name = _random_name(rng)
    version = _random_version(rng)
    if kind == "hardware":
        constraints = []
        used = set()
        for _ in range(rng.randint(0, 4)):
            key = _random_name(rng)
            if key in used:
                continue
            used.add(key)
            op = rng.choice(["eq", "ne", "ge", "le", "in", "matches"])
            value: object
            if op in ("ge", "le"):
                value = rng.choice([rng.randint(0, 128), round(rng.random() * 64, 2)])
            elif op == "in":
                value = [_random_name(rng) for _ in range(rng.randint(1, 3))]
            elif op == "matches":
                value = "[a-z0-9]+"
            else:
                value = rng.choice([_random_name(rng), rng.randint(0, 64), "off", "on"])
            constraints.append(Constraint(key=key, op=op, value=value))
        commands = tuple(
            SetupCommand(argv=("echo", _random_name(rng)), must_succeed=rng.random() < 0.8,
                         description=rng.choice(["", "host prep"]))
            for _ in range(rng.randint(0, 2))
        )
        return HardwareManifest(
            id=ManifestId(name, version, "hardware"),
            constraints=tuple(constraints),
            setup=commands,
            teardown=commands[: rng.randint(0, len(commands))],
        )
    if kind == "software":
        env = {
            f"VAR_{rng.randint(0, 99)}": rng.choice(["1", "on", "/tmp/x", "多字节", "0.5"])
            for _ in range(rng.randint(0, 4))
        }
        framework = {}
        if rng.random() < 0.5:
            framework = {"name": _random_name(rng), "version": str(_random_version(rng))}
        return SoftwareManifest(
            id=ManifestId(name, version, "software"),
            container_image=f"registry.example.org/{_random_name(rng)}:{rng.randint(0, 99)}",
            env=env,
            framework_info=framework,
        )
    if kind == "dataset":
        return DatasetManifest(
            id=ManifestId(name, version, "dataset"),
            split=rng.choice(["training", "validation", "test"]),
            resources=tuple(_random_resource(rng) for _ in range(rng.randint(1, 3))),
            element_listing=rng.choice(["**/*", "**/*.txt", "*.bin", "data/**/*.json"]),
        )
    if kind == "model":
        task_kind = rng.choice(["inference", "training"])
        n_inputs = rng.randint(1, 3) if task_kind == "inference" else rng.randint(0, 2)
        n_outputs = rng.randint(1, 2) if task_kind == "inference" else rng.randint(0, 2)
        element_types = ["float32", "float64", "int32", "int64", "uint8", "string", "bytes"]

        def iospec(i: int) -> IOSpec:
            shape = None
            if rng.random() < 0.7:
                shape = tuple(
                    rng.choice(["*", rng.randint(1, 512)]) for _ in range(rng.randint(1, 4))
                )
            return IOSpec(
                name=f"io_{i}_{_random_name(rng)}",
                element_type=rng.choice(element_types),
                shape=shape,
                layout=rng.choice([None, "NCHW", "NHWC"]),
            )

        hyper = {}
        for _ in range(rng.randint(0, 3)):
            hyper[f"hp_{rng.randint(0, 99)}"] = rng.choice(
                [rng.randint(0, 1000), round(rng.random(), 6), "adam", True]
            )
        return ModelManifest(
            id=ManifestId(name, version, "model"),
            task_kind=task_kind,
            inputs=tuple(iospec(i) for i in range(n_inputs)),
            outputs=tuple(iospec(i + 10) for i in range(n_outputs)),
            artifacts=tuple(_random_resource(rng) for _ in range(rng.randint(0, 2))),
            pre_processing=_random_stage(rng),
            run=_random_stage(rng),
            post_processing=_random_stage(rng),
            hyperparameters=hyper,
        )
    raise ValueError(kind)


def random_bundle(rng: random.Random) -> TaskBundle:
    return TaskBundle(
        hardware=random_manifest(rng, "hardware"),
        software=random_manifest(rng, "software"),
        dataset=random_manifest(rng, "dataset"),
        model=random_manifest(rng, "model"),
    )


# ---------------------------------------------------------------------------
# scripted workers


def write_worker_script(directory: Path, name: str, body: str) -> tuple[str, ...]:
    """Write a small protocol-speaking worker and return its argv."""
    path = directory / f"{name}.py"
    path.write_text(textwrap.dedent(body))
    import sys

    return (sys.executable, str(path))


ECHO_ENV_WORKER = """
    import json, os, sys
    from dlspec import protocol

    def main():
        stdin, stdout = sys.stdin.buffer, sys.stdout.buffer
        while True:
            frame = protocol.read_frame(stdin)
            if frame is None:
                return 0
            kind = frame.get("type")
            if kind == protocol.HELLO:
                protocol.write_frame(stdout, {"type": protocol.HELLO_ACK, "protocol_version": 1})
            elif kind == protocol.LOAD:
                protocol.write_frame(stdout, {"type": protocol.LOAD_OK})
            elif kind == protocol.RUN:
                value = {"env": os.environ.get("FRAMEWORK_LOG", ""), "cwd": os.getcwd()}
                protocol.write_frame(stdout, {
                    "type": protocol.RESULT,
                    "final_output": value,
                    "final_output_encoding": "json",
                    "final_output_digest": protocol.canonical_output_digest(value),
                    "truncated": False,
                    "stage_results": [
                        {"stage": s, "wall_time_ms": 0.1,
                         "output_digest": protocol.canonical_output_digest(value),
                         "output_preview": "env"}
                        for s in ("pre_processing", "run", "post_processing")
                    ],
                    "metrics": {},
                })
            elif kind == protocol.TERMINATE:
                return 0
    raise SystemExit(main())
"""

RUNTIME_ERROR_WORKER = """
    import sys
    from dlspec import protocol

    def main():
        stdin, stdout = sys.stdin.buffer, sys.stdout.buffer
        while True:
            frame = protocol.read_frame(stdin)
            if frame is None:
                return 0
            kind = frame.get("type")
            if kind == protocol.HELLO:
                protocol.write_frame(stdout, {"type": protocol.HELLO_ACK, "protocol_version": 1})
            elif kind == protocol.LOAD:
                protocol.write_frame(stdout, {"type": protocol.LOAD_OK})
            elif kind == protocol.RUN:
                protocol.write_frame(stdout, {
                    "type": protocol.STAGE_ERROR,
                    "kind": "runtime",
                    "stage": "run",
                    "traceback": "Traceback (most recent call last):\\n  boom",
                    "stage_results": [
                        {"stage": "pre_processing", "wall_time_ms": 0.2,
                         "output_digest": "sha256:" + "0" * 64, "output_preview": "[1, 2, 3]"},
                    ],
                })
            elif kind == protocol.TERMINATE:
                return 0
    raise SystemExit(main())
"""

SENTINEL_WORKER = """
    import os, sys
    from dlspec import protocol

    # touches the sentinel as soon as it starts, so tests can prove whether
    # any worker launch happened at all
    with open(os.environ["TEST_SENTINEL"], "a") as handle:
        handle.write("spawned\\n")

    def main():
        stdin, stdout = sys.stdin.buffer, sys.stdout.buffer
        while True:
            frame = protocol.read_frame(stdin)
            if frame is None:
                return 0
            if frame.get("type") == protocol.HELLO:
                protocol.write_frame(stdout, {"type": protocol.HELLO_ACK, "protocol_version": 1})
            elif frame.get("type") == protocol.TERMINATE:
                return 0
            else:
                with open(os.environ["TEST_SENTINEL"], "a") as handle:
                    handle.write(frame.get("type", "?") + "\\n")
                protocol.write_frame(stdout, {"type": protocol.PROTOCOL_VIOLATION, "message": "sentinel"})
                return 1
    raise SystemExit(main())
"""
