"""Fixtures for the stage-host suite.

The end-to-end tests drive the runtime exclusively through its external
interfaces: the `dlspec` command line, the documented registry layout, and
the manifest file format. Nothing here imports the runtime package.
"""

from __future__ import annotations

import hashlib
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance_criterion(name): names one acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    for key, value in report.user_properties:
        if key == "acceptance_criterion":
            _ACCEPTANCE_RESULTS[value] = "PASS" if report.passed else "FAIL"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("acceptance_criterion")
    if marker is not None and call.when == "call":
        outcome.get_result().user_properties.append(("acceptance_criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, result in _ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"[{result}] {name}")


WORKER_ARGV = (sys.executable, "-m", "dlspec_stagehost.worker")

SUM_STAGES = {
    "pre_processing": (
        "def fun(ctx, data):\n"
        "    values = []\n"
        "    for path in data:\n"
        "        with open(path) as handle:\n"
        "            values.append(int(handle.read().strip()))\n"
        "    return values\n"
    ),
    "run": "def fun(ctx, data):\n    return sum(data)\n",
    "post_processing": "def fun(ctx, data):\n    return str(data)\n",
}


def sha256_hex(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_digits(directory: Path, values=(1, 2, 3)) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for value in values:
        path = directory / f"digit-{value}.txt"
        path.write_text(f"{value}\n")
        out.append(path)
    return out


def indent_block(source: str, pad: str = "  ") -> str:
    return "".join(f"{pad}{line}\n" for line in source.splitlines())


def build_registry(root: Path, data_files: list[Path], model_stages: dict[str, str] | None = None) -> Path:
    """Lay out a registry per the documented `<root>/<kind>/<name>/<version>.dlspec.yml` scheme."""
    stages = model_stages or SUM_STAGES
    registry = root / "registry"
    resources = "".join(
        f"- url: {path.as_uri()}\n  checksum: sha256:{sha256_hex(path)}\n" for path in data_files
    )
    documents = {
        "hardware/any-host/1.0.0.dlspec.yml": "kind: hardware\nname: any-host\nversion: 1.0.0\n",
        "software/python-slim/1.0.0.dlspec.yml": (
            "kind: software\nname: python-slim\nversion: 1.0.0\n"
            "container_image: docker.io/library/python:3.10-slim\n"
        ),
        "dataset/digits-local/1.0.0.dlspec.yml": (
            f"kind: dataset\nname: digits-local\nversion: 1.0.0\nsplit: test\nresources:\n{resources}"
        ),
        "model/sum-ints/1.0.0.dlspec.yml": (
            "kind: model\nname: sum-ints\nversion: 1.0.0\ntask_kind: inference\n"
            "inputs:\n- name: numbers\n  element_type: int64\n"
            "outputs:\n- name: total\n  element_type: string\n"
            + "".join(
                f"{stage}: |\n{indent_block(source)}" for stage, source in stages.items()
            )
        ),
    }
    for rel, text in documents.items():
        path = registry / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return registry


def run_dlspec(root: Path, *extra: str, env: dict[str, str] | None = None) -> subprocess.CompletedProcess:
    """Invoke the runtime CLI for the synthetic bundle rooted at `root`."""
    import os

    merged = dict(os.environ)
    merged.update(env or {})
    argv = [
        "dlspec", "run",
        "--hardware", "any-host@*",
        "--software", "python-slim@*",
        "--dataset", "digits-local@*",
        "--model", "sum-ints@*",
        "--backend", "process",
        "--registry", str(root / "registry"),
        "--cache", str(root / "cache"),
        "--run-dir", str(root / "runs"),
        *extra,
    ]
    return subprocess.run(argv, capture_output=True, text=True, env=merged)


def record_field(record_path: Path, field: str) -> str:
    for line in record_path.read_text().splitlines():
        stripped = line.strip()
        if stripped.startswith(f"{field}:"):
            return stripped.split(":", 1)[1].strip().strip("'\"")
    return ""


@pytest.fixture
def dlspec_cli_available():
    if shutil.which("dlspec") is None:
        pytest.fail("the dlspec runtime CLI is not installed on PATH")
