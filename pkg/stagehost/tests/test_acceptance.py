"""Acceptance criteria for the stage host, driven through the runtime's
external interfaces only: the `dlspec` CLI, the registry file layout, the
manifest format, and the stdio worker protocol."""

from __future__ import annotations

import time
from pathlib import Path

import pytest

from dlspec_stagehost.framing import output_digest
from conftest import build_registry, record_field, run_dlspec, write_digits

pytestmark = pytest.mark.usefixtures("dlspec_cli_available")


def acceptance(name: str):
    return pytest.mark.acceptance_criterion(name)


def record_paths(completed) -> Path:
    lines = [line for line in completed.stdout.strip().splitlines() if line.endswith("record.dlspec.yml")]
    assert lines, f"no record path printed; stdout={completed.stdout!r} stderr={completed.stderr!r}"
    return Path(lines[-1])


@acceptance("end-to-end synthetic task: '1'+'2'+'3' → \"6\", reproducible digests, closure compare, < 10 s")
def test_end_to_end_synthetic_task(tmp_path):
    started = time.perf_counter()
    data_files = write_digits(tmp_path / "data")
    build_registry(tmp_path, data_files)

    first = run_dlspec(tmp_path, "--emit-reference-log")
    assert first.returncode == 0, first.stderr
    first_record = record_paths(first)
    reference = first_record.parent / "reference-log.dlspec.yml"
    assert reference.is_file()

    digest = record_field(first_record, "final_output_digest")
    assert digest == output_digest("6"), "pipeline did not produce the decimal string '6'"

    second = run_dlspec(tmp_path)
    assert second.returncode == 0, second.stderr
    second_record = record_paths(second)
    assert record_field(second_record, "final_output_digest") == digest, "re-run digest drifted"

    import subprocess

    for record in (first_record, second_record):
        compared = subprocess.run(
            ["dlspec", "compare", str(record), str(reference)], capture_output=True, text=True
        )
        assert compared.returncode == 0, compared.stdout + compared.stderr
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"end-to-end took {elapsed:.2f} s (budget 10 s)"


@acceptance("no intermediate files: exchange directories stay empty beyond explicit scratch writes")
def test_no_intermediate_files(tmp_path):
    data_files = write_digits(tmp_path / "data")
    build_registry(tmp_path, data_files)
    tmp_root = tmp_path / "tmproot"
    tmp_root.mkdir()

    completed = run_dlspec(tmp_path, env={"TMPDIR": str(tmp_root)})
    assert completed.returncode == 0, completed.stderr

    # scratch dirs (created under our TMPDIR) hold nothing: the sum task
    # never writes, and the host must not spill stage data to disk
    scratch_dirs = list(tmp_root.glob("dlspec-scratch-*"))
    assert scratch_dirs, "expected the run's scratch directory under TMPDIR"
    for scratch in scratch_dirs:
        assert list(scratch.rglob("*")) == [], f"unexpected files in scratch: {list(scratch.rglob('*'))}"

    # the cache holds exactly the three verified blobs (plus lock files)
    cache_files = [
        p for p in (tmp_path / "cache").rglob("*") if p.is_file() and p.parent.name != "locks"
    ]
    assert len(cache_files) == 3, f"cache should hold the three dataset blobs, found {cache_files}"

    # the run directory holds only the record
    run_dirs = list((tmp_path / "runs").iterdir())
    assert len(run_dirs) == 1
    assert sorted(p.name for p in run_dirs[0].iterdir()) == ["record.dlspec.yml"]

    # explicit scratch writes are allowed and land in scratch: re-run with a
    # post stage that writes one file
    stages = {
        "pre_processing": (
            "def fun(ctx, data):\n"
            "    values = []\n"
            "    for path in data:\n"
            "        with open(path) as handle:\n"
            "            values.append(int(handle.read().strip()))\n"
            "    return values\n"
        ),
        "run": "def fun(ctx, data):\n    return sum(data)\n",
        "post_processing": (
            "def fun(ctx, data):\n"
            "    with open(ctx['scratch_dir'] + '/note.txt', 'w') as handle:\n"
            "        handle.write('explicit write')\n"
            "    return str(data)\n"
        ),
    }
    writer_root = tmp_path / "writer"
    writer_root.mkdir()
    build_registry(writer_root, data_files, model_stages=stages)
    writer_tmp = tmp_path / "writer-tmp"
    writer_tmp.mkdir()
    completed = run_dlspec(writer_root, env={"TMPDIR": str(writer_tmp)})
    assert completed.returncode == 0, completed.stderr
    written = [p.name for scratch in writer_tmp.glob("dlspec-scratch-*") for p in scratch.rglob("*")]
    assert written == ["note.txt"]


@acceptance("ctx contract: stages see the model's input types and identical ctx content")
def test_ctx_contract(tmp_path):
    data_files = write_digits(tmp_path / "data")
    fingerprint_helper = (
        "    import hashlib, json\n"
        "    snapshot = {k: v for k, v in ctx.items() if k != 'metrics'}\n"
        "    fp = hashlib.sha256(json.dumps(snapshot, sort_keys=True).encode()).hexdigest()\n"
    )
    stages = {
        "pre_processing": (
            "def fun(ctx, data):\n"
            + fingerprint_helper
            + "    assert ctx['model']['inputs'][0]['element_type'] == 'int64'\n"
            "    assert ctx['task_kind'] == 'inference'\n"
            "    values = [int(open(p).read().strip()) for p in data]\n"
            "    return {'fp': fp, 'values': values}\n"
        ),
        "run": (
            "def fun(ctx, data):\n"
            + fingerprint_helper
            + "    assert ctx['model']['inputs'][0]['element_type'] == 'int64'\n"
            "    assert data['fp'] == fp, 'ctx content differs between pre and run'\n"
            "    return {'fp': fp, 'total': sum(data['values'])}\n"
        ),
        "post_processing": (
            "def fun(ctx, data):\n"
            + fingerprint_helper
            + "    assert ctx['model']['outputs'][0]['element_type'] == 'string'\n"
            "    assert data['fp'] == fp, 'ctx content differs between run and post'\n"
            "    return str(data['total'])\n"
        ),
    }
    build_registry(tmp_path, data_files, model_stages=stages)
    completed = run_dlspec(tmp_path)
    assert completed.returncode == 0, completed.stderr
    record = record_paths(completed)
    assert record_field(record, "final_output_digest") == output_digest("6")
