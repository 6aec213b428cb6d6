import pandas as pd
import pytest

from tapsb.bench import (
    BenchmarkReport, bench_makespan, bench_scaling, bench_transfer, config_label, executor_spec,
    report_write, round_trips,
)
from tapsb.engine import Engine
from tapsb.executors import SerialExecutor
from tapsb.cli import main
from tapsb.schemas import AppSpec, BenchmarkRow, RunConfig


def row(label, value, rep=0, failed=False):
    return BenchmarkRow(label=label, metric="makespan", unit="s", rep=rep, value=value,
                        failed=failed)


@pytest.mark.unit
class TestBenchmarkReport:
    """Rows, summaries and CSV output"""

    def test_summary_statistics(self):
        report = BenchmarkReport([row("a", 1.0), row("a", 3.0, rep=1), row("b", 2.0)])
        summary = report.summary().set_index("label")
        assert summary.loc["a", "mean"] == pytest.approx(2.0)
        assert summary.loc["a", "std"] == pytest.approx(1.4142135, rel=1e-6)
        assert summary.loc["a", "count"] == 2
        assert summary.loc["b", "count"] == 1

    def test_failed_rows_are_not_counted(self):
        report = BenchmarkReport([row("a", 1.0), row("a", None, rep=1, failed=True)])
        summary = report.summary()
        assert summary.loc[0, "count"] == 1
        assert summary.loc[0, "mean"] == pytest.approx(1.0)

    def test_empty_report(self):
        assert BenchmarkReport().summary().empty
        assert len(BenchmarkReport()) == 0

    def test_write(self, tmp_path):
        report = BenchmarkReport([row("a", 1.0), row("a", None, rep=1, failed=True)])
        path = report_write(report, tmp_path / "out" / "makespan")
        assert path.name == "makespan.csv"
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["label", "metric", "unit", "rep", "value"]
        assert len(frame) == 2
        assert (tmp_path / "out" / "makespan_summary.csv").is_file()
        runs = pd.read_csv(tmp_path / "out" / "makespan_runs.csv")
        assert sorted(runs["status"]) == ["failed", "succeeded"]

    def test_executor_spec(self):
        assert executor_spec("serial", 8).label == "serial"
        assert executor_spec("thread-pool", 4).label == "thread-pool(4)"
        spec = executor_spec("latency-sim", 2, sched_latency=0.1)
        assert spec.label == "latency-sim(thread-pool(2))"
        assert spec.sched_latency == 0.1


@pytest.mark.integration
class TestDrivers:
    """Benchmark drivers running real applications"""

    def test_makespan(self, tmp_path):
        config = RunConfig(app=AppSpec(name="synthetic", params={"task_count": 3}),
                           run_dir=str(tmp_path))
        report = bench_makespan([config], repetitions=2)
        assert [r.rep for r in report.rows] == [0, 1]
        assert all(r.value > 0 and not r.failed for r in report.rows)
        assert report.rows[0].label == config_label(config) == "synthetic/serial"
        assert report.rows[0].run_dir != report.rows[1].run_dir

    def test_failed_repetition_is_recorded(self, tmp_path):
        config = RunConfig(app=AppSpec(name="mapreduce", params={
            "mode": "files", "dir": str(tmp_path / "missing"), "map_tasks": 1}),
            run_dir=str(tmp_path))
        report = bench_makespan([config], repetitions=1)
        assert report.rows[0].failed
        assert report.rows[0].value is None

    def test_scaling(self, tmp_path):
        report = bench_scaling(["serial", "thread-pool"], [1, 2], task_count=10,
                               run_root=str(tmp_path))
        assert [r.label for r in report.rows] == ["serial:1", "thread-pool:1", "thread-pool:2"]
        assert all(r.unit == "tasks/s" and r.value > 0 for r in report.rows)

    def test_transfer(self, tmp_path):
        report = bench_transfer(executor_spec("thread-pool", 1), sizes=[1000],
                                transformers=[None, "file"], repetitions=1,
                                run_root=str(tmp_path))
        assert [r.label for r in report.rows] == ["1000B:inline", "1000B:file"]
        assert all(r.value > 0 for r in report.rows)
        assert all(len(r.run_dir) > 0 for r in report.rows)

    def test_round_trips_are_timed_per_task(self):
        with Engine(SerialExecutor()) as engine:
            times = round_trips(engine, b"z" * 100, 4)
        assert len(times) == 4
        assert all(t > 0 for t in times)
        assert engine.submitted == 4

    def test_transfer_cost_follows_payload_size(self, tmp_path):
        report = bench_transfer(executor_spec("latency-sim", 1, sched_latency=0.001),
                                sizes=[10_000, 1_000_000], transformers=[None, "file", "store"],
                                repetitions=1, run_root=str(tmp_path), tasks_per_rep=3)
        values = {r.label: r.value for r in report.rows}
        assert not any(r.failed for r in report.rows)
        # 1 MB each way at the default bandwidth is 20 ms of simulated transfer
        assert values["1000000B:inline"] > values["10000B:inline"]
        assert values["1000000B:inline"] > 0.02
        assert values["1000000B:store"] < values["1000000B:inline"]
        assert values["1000000B:file"] < values["1000000B:inline"]

    def test_scaling_command(self, tmp_path, capsys):
        code = main(["bench", "scaling", "--executors", "serial,thread-pool", "--workers", "2",
                     "--task-count", "5", "--repetitions", "1",
                     "--run-dir", str(tmp_path / "runs"),
                     "--output", str(tmp_path / "scaling")])
        assert code == 0
        assert len(pd.read_csv(tmp_path / "scaling.csv")) == 2
        assert "wrote" in capsys.readouterr().out


@pytest.mark.slow
class TestLargeTransfers:
    """Out-of-band transfer against inline payloads at 10 MB"""

    def test_store_beats_inline(self, tmp_path):
        report = bench_transfer(executor_spec("latency-sim", 1, sched_latency=0.001),
                                sizes=[10_000_000], transformers=[None, "store"],
                                repetitions=1, run_root=str(tmp_path), tasks_per_rep=3)
        values = {r.label: r.value for r in report.rows}
        assert values["10000000B:store"] < values["10000000B:inline"]


@pytest.mark.slow
class TestScalingBound:
    """Bag throughput close to workers / task duration"""

    @pytest.mark.parametrize("workers", [1, 4, 8])
    def test_thread_pool_near_ideal(self, tmp_path, workers):
        sleep = 0.05
        report = bench_scaling(["thread-pool"], [workers], task_count=20 * workers,
                               sleep=sleep, run_root=str(tmp_path))
        ideal = workers / sleep
        throughput = report.rows[0].value
        assert 0.85 * ideal <= throughput <= 1.05 * ideal
