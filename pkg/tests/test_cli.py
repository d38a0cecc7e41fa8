"""Command-line surface: exit codes, diagnostics format, json output."""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from dlspec.cli import main
from dlspec.registry import Registry
from conftest import CORPUS_DIR, make_digit_dataset, make_hardware, make_software, make_sum_model

MOCK_WORKER = f"{sys.executable} -m dlspec.mockworker"


def run_cli(*argv: str) -> int:
    return main(list(argv))


@pytest.fixture
def published(tmp_path, monkeypatch):
    """Registry with the synthetic sum bundle; env points all commands at it."""
    registry = Registry(tmp_path / "registry")
    registry.put(make_hardware())
    registry.put(make_software())
    registry.put(make_digit_dataset(tmp_path / "data"))
    registry.put(make_sum_model())
    monkeypatch.setenv("DLSPEC_REGISTRY", str(tmp_path / "registry"))
    monkeypatch.setenv("DLSPEC_CACHE", str(tmp_path / "cache"))
    monkeypatch.setenv("DLSPEC_MOCK_OUTPUT", '"6"')
    return tmp_path


RUN_FLAGS = (
    "--hardware", "any-host@*",
    "--software", "python-slim@^1.0.0",
    "--dataset", "digits-local@=1.0.0",
    "--model", "sum-ints@*",
    "--backend", "process",
    "--worker-cmd", MOCK_WORKER,
)


def run_bundle_cli(tmp_path, *extra: str) -> int:
    return run_cli(
        "run", *RUN_FLAGS,
        "--registry", str(tmp_path / "registry"),
        "--cache", str(tmp_path / "cache"),
        "--run-dir", str(tmp_path / "runs"),
        *extra,
    )


class TestValidate:
    def test_corpus_is_clean(self, capsys):
        paths = [str(p) for p in sorted(CORPUS_DIR.glob("*.dlspec.yml"))]
        assert run_cli("validate", *paths) == 0
        assert capsys.readouterr().out == ""

    def test_missing_version_names_the_path(self, tmp_path, capsys):
        bad = tmp_path / "bad.dlspec.yml"
        bad.write_text("kind: hardware\nname: h\n")
        assert run_cli("validate", str(bad)) == 1
        out = capsys.readouterr().out
        assert out.count("\n") == 1
        assert "hardware.version" in out and "required-missing" in out

    def test_diagnostic_line_format(self, tmp_path, capsys):
        bad = tmp_path / "bad.dlspec.yml"
        bad.write_text("kind: software\nname: s\nversion: 1.0.0\ncontainer_image: ''\n")
        run_cli("validate", str(bad))
        line = capsys.readouterr().out.strip()
        file_part, path_part, code_part, message = line.split(":", 3)
        assert file_part == str(bad)
        assert path_part == "software.container_image"
        assert code_part == "required-empty"

    def test_unreadable_file_is_usage_error(self, tmp_path):
        assert run_cli("validate", str(tmp_path / "missing.yml")) == 64

    def test_json_format_parses(self, tmp_path, capsys):
        bad = tmp_path / "bad.dlspec.yml"
        bad.write_text("kind: dataset\nname: d\nversion: 1.0.0\nsplit: test\nresources: []\n")
        assert run_cli("validate", "--format", "json", str(bad)) == 1
        payload = json.loads(capsys.readouterr().out)
        assert payload[0]["code"] == "empty-resources"
        assert payload[0]["file"] == str(bad)

    def test_zero_paths_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            run_cli("validate")
        assert excinfo.value.code == 64


def test_exit_code_contract():
    from dlspec import cli

    codes = (cli.EXIT_OK, cli.EXIT_VALIDATION, cli.EXIT_GATE, cli.EXIT_FETCH,
             cli.EXIT_EXECUTION, cli.EXIT_COMPARISON, cli.EXIT_USAGE)
    assert codes == (0, 1, 2, 3, 4, 5, 64)


class TestResolve:
    def test_registry_discovered_from_env(self, published, capsys):
        # no --registry flag: DLSPEC_REGISTRY (set by the fixture) applies
        assert run_cli("resolve", "model:sum-ints@*") == 0
        assert "model:sum-ints@1.0.0" in capsys.readouterr().out

    def test_resolves_highest_satisfying(self, published, capsys):
        registry = Registry(published / "registry")
        registry.put(make_hardware(version="1.4.0"))
        registry.put(make_hardware(version="2.0.0"))
        assert run_cli("resolve", "hardware:any-host@^1.0.0", "--registry", str(published / "registry")) == 0
        assert "hardware:any-host@1.4.0" in capsys.readouterr().out

    def test_not_found_maps_to_execution_failure(self, published):
        assert run_cli("resolve", "hardware:any-host@=9.0.0", "--registry", str(published / "registry")) == 4

    def test_bad_ref_is_usage_error(self, published):
        assert run_cli("resolve", "any-host", "--registry", str(published / "registry")) == 64

    def test_json_output(self, published, capsys):
        assert run_cli("resolve", "model:sum-ints@*", "--registry", str(published / "registry"),
                       "--format", "json") == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["id"] == "model:sum-ints@1.0.0"
        assert Path(payload["path"]).is_file()

    def test_corrupt_stored_manifest_exits_1(self, published):
        target = published / "registry" / "model" / "sum-ints" / "1.0.0.dlspec.yml"
        target.write_text("kind: [broken\n")
        assert run_cli("resolve", "model:sum-ints@*", "--registry", str(published / "registry")) == 1


class TestFetch:
    def test_fetch_file_url(self, tmp_path, capsys):
        source = tmp_path / "blob.bin"
        source.write_bytes(b"1\n")
        digest = "sha256:4355a46b19d348dc2f57c046f8ef63d4538ebb936000f3c9ee954a27460dd865"
        code = run_cli("fetch", source.as_uri(), "--checksum", digest, "--cache", str(tmp_path / "cache"))
        assert code == 0
        printed = Path(capsys.readouterr().out.strip())
        assert printed.read_bytes() == b"1\n"

    def test_checksum_mismatch_exits_3(self, tmp_path):
        source = tmp_path / "blob.bin"
        source.write_bytes(b"1\n")
        digest = "sha256:" + "0" * 64
        assert run_cli("fetch", source.as_uri(), "--checksum", digest, "--cache", str(tmp_path / "cache")) == 3

    def test_invalid_checksum_argument_is_usage_error(self, tmp_path):
        assert run_cli("fetch", "https://x.example.org/a", "--checksum", "nope",
                       "--cache", str(tmp_path / "cache")) == 64

    def test_json_output_parses(self, tmp_path, capsys):
        source = tmp_path / "blob.bin"
        source.write_bytes(b"1\n")
        digest = "sha256:4355a46b19d348dc2f57c046f8ef63d4538ebb936000f3c9ee954a27460dd865"
        assert run_cli("fetch", source.as_uri(), "--checksum", digest,
                       "--cache", str(tmp_path / "cache"), "--format", "json") == 0
        payload = json.loads(capsys.readouterr().out)
        assert Path(payload["path"]).is_file()
        assert payload["checksum"] == digest


class TestRun:
    def test_successful_run_prints_record_path(self, published, capsys):
        assert run_bundle_cli(published) == 0
        printed = capsys.readouterr().out.strip().splitlines()
        record_path = Path(printed[-1])
        assert record_path.name == "record.dlspec.yml"
        assert record_path.is_file()

    def test_dry_run_prints_circled_plan(self, published, capsys):
        assert run_bundle_cli(published, "--dry-run") == 0
        out = capsys.readouterr().out
        for glyph in "①②③④⑤⑥⑦⑨⑪⑫":
            assert glyph in out

    def test_gate_failure_exits_2_and_touches_nothing(self, published, capsys):
        registry = Registry(published / "registry")
        from dlspec.model import Constraint

        registry.put(make_hardware(name="wall", constraints=(Constraint("memory_gb", "ge", 10**6),)))
        code = run_cli(
            "run",
            "--hardware", "wall@*",
            "--software", "python-slim@*",
            "--dataset", "digits-local@*",
            "--model", "sum-ints@*",
            "--worker-cmd", MOCK_WORKER,
            "--registry", str(published / "registry"),
            "--cache", str(published / "cache-gate"),
            "--run-dir", str(published / "runs"),
        )
        assert code == 2
        cached = [p for p in (published / "cache-gate").rglob("*") if p.is_file()]
        assert cached == []

    def test_unknown_constraint_key_strict_vs_allowed(self, published):
        registry = Registry(published / "registry")
        from dlspec.model import Constraint

        registry.put(make_hardware(name="exotic", constraints=(Constraint("cpu.turbo_boost", "eq", "off"),)))
        argv = (
            "--hardware", "exotic@*",
            "--software", "python-slim@*",
            "--dataset", "digits-local@*",
            "--model", "sum-ints@*",
            "--worker-cmd", MOCK_WORKER,
            "--registry", str(published / "registry"),
            "--cache", str(published / "cache"),
            "--run-dir", str(published / "runs"),
        )
        assert run_cli("run", *argv) == 2
        assert run_cli("run", *argv, "--allow-unknown") == 0

    def test_bundle_file_form(self, published, capsys):
        bundle_file = published / "task.bundle.yml"
        bundle_file.write_text(
            "kind: bundle\n"
            "hardware: any-host@*\n"
            "software: software:python-slim@^1.0.0\n"
            "dataset: digits-local@=1.0.0\n"
            "model: model:sum-ints@*\n"
        )
        code = run_cli(
            "run", "--bundle", str(bundle_file),
            "--worker-cmd", MOCK_WORKER,
            "--registry", str(published / "registry"),
            "--cache", str(published / "cache"),
            "--run-dir", str(published / "runs"),
        )
        assert code == 0

    def test_missing_refs_are_usage_errors(self, published):
        assert run_cli("run", "--hardware", "any-host@*") == 64

    def test_unresolvable_ref_exits_4(self, published):
        code = run_cli(
            "run",
            "--hardware", "any-host@*",
            "--software", "python-slim@*",
            "--dataset", "digits-local@^7.0.0",
            "--model", "sum-ints@*",
            "--registry", str(published / "registry"),
            "--cache", str(published / "cache"),
            "--run-dir", str(published / "runs"),
        )
        assert code == 4

    def test_json_output_parses(self, published, capsys):
        assert run_bundle_cli(published, "--format", "json") == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["status"] == "ok"
        assert payload["final_output_digest"].startswith("sha256:")
        assert any(step["action"] == "run" for step in payload["plan"])

    def test_training_test_split_warning_does_not_fail(self, published, capsys):
        registry = Registry(published / "registry")
        from dlspec.model import ManifestId, ModelManifest, Version

        registry.put(
            ModelManifest(
                id=ManifestId("trainer", Version.parse("1.0.0"), "model"),
                task_kind="training",
                run=make_sum_model().run,
            )
        )
        code = run_cli(
            "run",
            "--hardware", "any-host@*",
            "--software", "python-slim@*",
            "--dataset", "digits-local@*",
            "--model", "trainer@*",
            "--worker-cmd", MOCK_WORKER,
            "--registry", str(published / "registry"),
            "--cache", str(published / "cache"),
            "--run-dir", str(published / "runs"),
        )
        assert code == 0
        assert "split-task-mismatch" in capsys.readouterr().out

    def test_warnings_do_not_corrupt_json_output(self, published, capsys):
        registry = Registry(published / "registry")
        from dlspec.model import ManifestId, ModelManifest, Version

        registry.put(
            ModelManifest(
                id=ManifestId("trainer2", Version.parse("1.0.0"), "model"),
                task_kind="training",
                run=make_sum_model().run,
            )
        )
        code = run_cli(
            "run",
            "--hardware", "any-host@*",
            "--software", "python-slim@*",
            "--dataset", "digits-local@*",
            "--model", "trainer2@*",
            "--worker-cmd", MOCK_WORKER,
            "--registry", str(published / "registry"),
            "--cache", str(published / "cache"),
            "--run-dir", str(published / "runs"),
            "--format", "json",
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["warnings"][0]["code"] == "split-task-mismatch"


class TestCompare:
    def _run_and_emit(self, published, capsys) -> tuple[Path, Path]:
        assert run_bundle_cli(published, "--emit-reference-log") == 0
        lines = capsys.readouterr().out.strip().splitlines()
        record = next(Path(l) for l in lines if l.endswith("record.dlspec.yml"))
        reference = next(Path(l) for l in lines if l.endswith("reference-log.dlspec.yml"))
        return record, reference

    def test_record_vs_own_log_passes(self, published, capsys):
        record, reference = self._run_and_emit(published, capsys)
        assert run_cli("compare", str(record), str(reference)) == 0

    def test_mismatched_dataset_id_exits_5(self, published, capsys, monkeypatch):
        record, reference = self._run_and_emit(published, capsys)
        registry = Registry(published / "registry")
        registry.put(make_digit_dataset(published / "data2", version="2.0.0"))
        code = run_cli(
            "run",
            "--hardware", "any-host@*",
            "--software", "python-slim@*",
            "--dataset", "digits-local@=2.0.0",
            "--model", "sum-ints@*",
            "--worker-cmd", MOCK_WORKER,
            "--registry", str(published / "registry"),
            "--cache", str(published / "cache"),
            "--run-dir", str(published / "runs"),
        )
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        second_record = next(Path(l) for l in lines if l.endswith("record.dlspec.yml"))
        assert run_cli("compare", str(second_record), str(reference)) == 5

    def test_tolerance_flag_allows_small_drift(self, published, capsys, monkeypatch):
        monkeypatch.setenv("DLSPEC_MOCK_METRICS", '{"accuracy": 0.7580}')
        record, reference = self._run_and_emit(published, capsys)
        monkeypatch.setenv("DLSPEC_MOCK_METRICS", '{"accuracy": 0.7585}')
        assert run_bundle_cli(published) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        drifted = next(Path(l) for l in lines if l.endswith("record.dlspec.yml"))
        assert run_cli("compare", str(drifted), str(reference)) == 5
        assert run_cli("compare", str(drifted), str(reference), "--tol", "accuracy=1e-3") == 0

    def test_parse_errors_exit_1(self, published, tmp_path, capsys):
        record, reference = self._run_and_emit(published, capsys)
        junk = tmp_path / "junk.yml"
        junk.write_text("kind: [broken\n")
        assert run_cli("compare", str(junk), str(reference)) == 1

    def test_json_report_parses(self, published, capsys):
        record, reference = self._run_and_emit(published, capsys)
        assert run_cli("compare", str(record), str(reference), "--format", "json") == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["passed"] is True
        assert {"field", "status", "detail"} <= set(payload["entries"][0])


class TestProbe:
    def test_probe_prints_architecture(self, capsys):
        assert run_cli("probe") == 0
        assert "architecture" in capsys.readouterr().out

    def test_probe_json_parses(self, capsys):
        assert run_cli("probe", "--format", "json") == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["source"] == "probed"

    def test_declared_host_file(self, tmp_path, capsys):
        host_file = tmp_path / "host.yml"
        host_file.write_text("kind: host\nvalues:\n  architecture: mips\n")
        assert run_cli("probe", "--host-file", str(host_file)) == 0
        assert "mips" in capsys.readouterr().out


class TestUsageFuzz:
    @pytest.mark.parametrize(
        "argv",
        [
            (),
            ("frobnicate",),
            ("validate",),
            ("resolve",),
            ("fetch", "https://x.example.org/a"),
            ("run",),
            ("compare", "one-arg-only",),
        ],
    )
    def test_malformed_invocations_never_exit_zero(self, argv):
        try:
            code = run_cli(*argv)
        except SystemExit as exc:
            code = exc.code
        assert code not in (0, None)

    def test_console_script_entry_point(self):
        completed = subprocess.run(
            ["dlspec", "validate", str(CORPUS_DIR / "model-sum-ints.dlspec.yml")],
            capture_output=True,
            text=True,
        )
        assert completed.returncode == 0
