import json
import re

import pytest

from tapsb.cli import main
from tapsb.errors import RegistrationError
from tapsb.harness import (
    CONFIG_FILE, LOG_FILE, SUMMARY_FILE, build_app_config, load_run_config, load_summary,
    make_run_dir, run_app, run_repeated,
)
from tapsb.records import RECORDS_FILE, load_records
from tapsb.schemas import (
    AppSpec, ExecutorSpec, FilterSpec, RecordSinkSpec, RunConfig, TransformerSpec,
)


def synthetic_config(tmp_path, **params) -> RunConfig:
    params.setdefault("structure", "diamond")
    params.setdefault("task_count", 4)
    return RunConfig(app=AppSpec(name="synthetic", params=params), run_dir=str(tmp_path))


def dag_shape(records):
    names = {r.task_id: r.function for r in records}
    return sorted((r.function, tuple(sorted(names[p] for p in r.parents))) for r in records)


@pytest.mark.integration
class TestRunApp:
    """Run directories"""

    def test_run_directory_is_complete(self, tmp_path):
        result = run_app(synthetic_config(tmp_path))
        for name in (CONFIG_FILE, RECORDS_FILE, SUMMARY_FILE, LOG_FILE):
            assert (result.run_dir / name).is_file()
        summary = load_summary(result.run_dir)
        assert summary["status"] == "succeeded"
        assert summary["task_count"] == summary["expected_tasks"] == 6
        assert summary["failed_tasks"] == 0
        assert summary["executor"] == "serial"
        assert summary["makespan_s"] >= summary["app_runtime_s"] > 0
        assert len(result.records()) == 6

    def test_directory_name(self, tmp_path):
        result = run_app(synthetic_config(tmp_path))
        assert re.fullmatch(r"synthetic_serial_\d{8}-\d{6}_[0-9a-f]{6}", result.run_dir.name)

    def test_run_directories_are_never_reused(self, tmp_path):
        dirs = {make_run_dir(tmp_path, "app", "serial") for _ in range(20)}
        assert len(dirs) == 20

    def test_saved_config_round_trip(self, tmp_path):
        config = synthetic_config(tmp_path, structure="reduce")
        result = run_app(config)
        assert load_run_config(result.run_dir / CONFIG_FILE) == config

    def test_log_file_captures_run(self, tmp_path):
        result = run_app(synthetic_config(tmp_path))
        log = (result.run_dir / LOG_FILE).read_text(encoding="utf-8")
        assert "engine started" in log

    def test_failed_run_still_writes_summary(self, tmp_path):
        config = RunConfig(app=AppSpec(name="mapreduce", params={
            "mode": "files", "dir": str(tmp_path / "missing"), "map_tasks": 1}),
            run_dir=str(tmp_path / "runs"))
        with pytest.raises(FileNotFoundError):
            run_app(config)
        (run_dir,) = (tmp_path / "runs").iterdir()
        summary = load_summary(run_dir)
        assert summary["status"] == "failed"
        assert summary["error_type"] == "FileNotFoundError"

    def test_unknown_app(self, tmp_path):
        with pytest.raises(RegistrationError):
            run_app(RunConfig(app=AppSpec(name="nope"), run_dir=str(tmp_path)))

    def test_file_transformer_defaults_to_run_data_dir(self, tmp_path):
        config = synthetic_config(tmp_path, input_bytes=2000, output_bytes=2000).model_copy(
            update={"transformer": TransformerSpec(kind="file"),
                    "filter": FilterSpec(kind="min-size", threshold=1000)})
        result = run_app(config)
        assert any((result.run_dir / "data").glob("*.bin"))
        assert result.summary["transformer"] == "file"
        assert all(r.transform_args_us > 0 for r in result.records()
                   if r.function == "sleep_noop" and not r.parents)

    def test_embedded_store(self, tmp_path):
        config = synthetic_config(tmp_path, input_bytes=5000).model_copy(
            update={"transformer": TransformerSpec(kind="store"),
                    "filter": FilterSpec(kind="type-tag", allowed=["bytes"])})
        result = run_app(config)
        assert result.summary["status"] == "succeeded"
        assert result.summary["max_object_bytes"] < 5000

    def test_null_sink_counts_tasks(self, tmp_path):
        config = synthetic_config(tmp_path).model_copy(
            update={"record_sink": RecordSinkSpec(kind="null")})
        result = run_app(config)
        assert not (result.run_dir / RECORDS_FILE).exists()
        assert result.summary["task_count"] == 6

    def test_serial_runs_are_deterministic(self, tmp_path):
        config = synthetic_config(tmp_path, structure="sequential", input_bytes=64,
                                  output_bytes=32)
        first, second = run_repeated(config.model_copy(update={"repeat": 2}))

        def stable(result):
            return [(r.function, len(r.parents), r.status, r.arg_bytes, r.result_bytes)
                    for r in result.records()]

        assert stable(first) == stable(second)
        assert first.run_dir != second.run_dir

    def test_latency_sim_run(self, tmp_path):
        config = synthetic_config(tmp_path).model_copy(update={"executor": ExecutorSpec(
            kind="latency-sim", sched_latency=0.005, inner=ExecutorSpec(kind="thread-pool",
                                                                       workers=2))})
        result = run_app(config)
        assert result.summary["executor"] == "latency-sim(thread-pool(2))"
        assert {r.executor for r in result.records()} == {"latency-sim"}

    def test_app_seed_comes_from_run(self):
        config = build_app_config(AppSpec(name="cholesky", params={"n": 8, "block": 4}), 7)
        assert config.seed == 7


@pytest.mark.integration
class TestCommandLine:
    """tapsb run and exit codes"""

    def run_dirs(self, root):
        return sorted(p for p in root.iterdir() if p.is_dir())

    def test_run_succeeds(self, tmp_path, capsys):
        code = main(["run", "--app", "synthetic", "--structure", "reduce", "--task-count", "3",
                     "--run-dir", str(tmp_path)])
        assert code == 0
        (run_dir,) = self.run_dirs(tmp_path)
        assert load_summary(run_dir)["task_count"] == 4
        assert str(run_dir) in capsys.readouterr().out

    def test_unknown_app_is_usage_error(self, tmp_path):
        assert main(["run", "--app", "nope", "--run-dir", str(tmp_path)]) == 2

    def test_missing_app_is_usage_error(self, tmp_path):
        assert main(["run", "--run-dir", str(tmp_path)]) == 2

    def test_invalid_parameter_is_validation_error(self, tmp_path, capsys):
        code = main(["run", "--app", "synthetic", "--task-count", "0",
                     "--run-dir", str(tmp_path)])
        assert code == 2
        assert "validation error" in capsys.readouterr().err
        assert not tmp_path.exists() or not any(tmp_path.iterdir())

    def test_filter_without_transformer(self, tmp_path):
        code = main(["run", "--app", "synthetic", "--filter", "always",
                     "--run-dir", str(tmp_path)])
        assert code == 2

    def test_failed_run_exit_code(self, tmp_path):
        code = main(["run", "--app", "mapreduce", "--mode", "files",
                     "--dir", str(tmp_path / "missing"), "--map-tasks", "1",
                     "--run-dir", str(tmp_path / "runs")])
        assert code == 1

    def test_unknown_command(self):
        assert main([]) == 2
        assert main(["explode"]) == 2

    def test_config_reproduces_dag(self, tmp_path):
        assert main(["run", "--app", "cholesky", "--n", "32", "--block", "8",
                     "--executor", "thread-pool", "--workers", "2",
                     "--run-dir", str(tmp_path)]) == 0
        (first,) = self.run_dirs(tmp_path)
        assert main(["run", "--config", str(first / CONFIG_FILE)]) == 0
        first_dir, second_dir = self.run_dirs(tmp_path)
        first_records = load_records(first_dir / RECORDS_FILE)
        second_records = load_records(second_dir / RECORDS_FILE)
        assert len(first_records) == 20
        assert dag_shape(first_records) == dag_shape(second_records)
        assert {r.task_id for r in first_records}.isdisjoint(r.task_id for r in second_records)
        assert load_summary(first_dir)["l_sha256"] == load_summary(second_dir)["l_sha256"]

    def test_flags_override_saved_config(self, tmp_path):
        assert main(["run", "--app", "synthetic", "--task-count", "2",
                     "--run-dir", str(tmp_path)]) == 0
        (first,) = self.run_dirs(tmp_path)
        assert main(["run", "--config", str(first / CONFIG_FILE), "--task-count", "5",
                     "--seed", "3"]) == 0
        second = [p for p in self.run_dirs(tmp_path) if p != first][0]
        saved = json.loads((second / CONFIG_FILE).read_text())
        assert saved["app"]["params"]["task_count"] == 5
        assert saved["app"]["params"]["structure"] == "bag"
        assert saved["seed"] == 3
        assert load_summary(second)["task_count"] == 5

    def test_unreadable_config(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "absent.json")]) == 2

    def test_repeat(self, tmp_path):
        assert main(["run", "--app", "synthetic", "--task-count", "1", "--repeat", "2",
                     "--run-dir", str(tmp_path)]) == 0
        assert len(self.run_dirs(tmp_path)) == 2

    def test_failure_listing(self, capsys):
        assert main(["failures", "--list"]) == 0
        out = capsys.readouterr().out
        assert "worker-manager\tmulti-node-only" in out
        assert "exception\timplemented" in out

    def test_bag_with_executor_flags(self, tmp_path):
        code = main(["run", "--app", "synthetic", "--structure", "bag", "--task-count", "10",
                     "--executor", "thread-pool", "--workers", "3", "--outstanding", "2",
                     "--run-dir", str(tmp_path)])
        assert code == 0
        (run_dir,) = self.run_dirs(tmp_path)
        saved = json.loads((run_dir / CONFIG_FILE).read_text())
        assert saved["executor"]["workers"] == 3
        assert saved["app"]["params"]["outstanding"] == 2
        assert load_summary(run_dir)["task_count"] == 10

    def test_failure_flags_wrap_any_app(self, tmp_path):
        code = main(["run", "--app", "synthetic", "--structure", "sequential",
                     "--task-count", "5", "--failure-type", "exception",
                     "--failure-rate", "1", "--run-dir", str(tmp_path)])
        assert code == 0
        (run_dir,) = self.run_dirs(tmp_path)
        saved = json.loads((run_dir / CONFIG_FILE).read_text())
        assert saved["app"]["name"] == "failures"
        assert saved["app"]["params"]["base"] == "synthetic"
        assert saved["app"]["params"]["base_params"]["task_count"] == 5
        kinds = sorted(r.error_kind for r in load_records(run_dir / RECORDS_FILE))
        assert kinds == ["InjectedFailure"] + ["dependency-failure"] * 4

    def test_failures_app_takes_base_flags(self, tmp_path):
        code = main(["run", "--app", "failures", "--structure", "bag", "--task-count", "6",
                     "--failure-rate", "0", "--run-dir", str(tmp_path)])
        assert code == 0
        (run_dir,) = self.run_dirs(tmp_path)
        summary = load_summary(run_dir)
        assert summary["base"] == "synthetic"
        assert summary["task_count"] == 6
        assert summary["injected"] == 0

    def test_failure_config_replays(self, tmp_path):
        assert main(["run", "--app", "cholesky", "--n", "16", "--block", "8",
                     "--failure-rate", "0", "--run-dir", str(tmp_path)]) == 0
        (first,) = self.run_dirs(tmp_path)
        assert main(["run", "--config", str(first / CONFIG_FILE), "--block", "16"]) == 0
        second = [p for p in self.run_dirs(tmp_path) if p != first][0]
        saved = json.loads((second / CONFIG_FILE).read_text())
        assert saved["app"]["params"]["base_params"] == {"n": 16, "block": 16}
        assert load_summary(second)["task_count"] == 1

    def test_invalid_base_parameter(self, tmp_path):
        code = main(["run", "--app", "failures", "--task-count", "0",
                     "--run-dir", str(tmp_path)])
        assert code == 2

    def test_params_are_saved_typed(self, tmp_path):
        assert main(["run", "--app", "mapreduce", "--docs", "20", "--map-tasks", "2",
                     "--words-per-doc", "3", "--run-dir", str(tmp_path)]) == 0
        (run_dir,) = self.run_dirs(tmp_path)
        params = json.loads((run_dir / CONFIG_FILE).read_text())["app"]["params"]
        assert params["docs"] == 20
        assert params["map_tasks"] == 2
        assert params["mode"] == "generated"


@pytest.mark.unit
class TestAppOptions:
    """Flags generated from application fields"""

    def test_field_colliding_with_run_option_gets_app_prefix(self):
        import argparse

        from pydantic import Field

        from tapsb.cli import add_app_options, add_run_options
        from tapsb.schemas import AppConfig

        class PooledConfig(AppConfig):
            workers: int = Field(1, ge=1)

        PooledConfig.app_name = "pooled"
        parser = argparse.ArgumentParser()
        add_run_options(parser)
        add_app_options(parser, PooledConfig)
        args = parser.parse_args(["--workers", "4", "--pooled-workers", "2"])
        assert args.workers == 4
        assert args.app__workers == "2"

    def test_unexpected_error_is_run_failure(self, monkeypatch, capsys):
        from tapsb import cli

        def explode(argv):
            raise RuntimeError("boom")

        monkeypatch.setitem(cli.COMMANDS, "run", explode)
        assert main(["run"]) == 1
        assert "RuntimeError: boom" in capsys.readouterr().err
