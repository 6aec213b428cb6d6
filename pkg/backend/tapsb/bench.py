"""Benchmark drivers: makespan, scaling and data transfer.

The makespan and scaling drivers run RunConfigs through the harness; the
transfer driver times tasks from the client on an engine of its own. Each
collects one row per (configuration, metric, repetition). A failed
repetition becomes a row with no value and the benchmark moves on.
"""
import logging
import time
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .engine import Engine
from .errors import TapsbError
from .harness import DATA_DIR, default_run_root, make_run_dir, run_app
from .schemas import (
    AppSpec, BenchmarkRow, EngineSpec, ExecutorSpec, FilterSpec, RunConfig, TransformerSpec,
)
from .store import StoreServer

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["label", "metric", "unit", "rep", "value"]
RUN_COLUMNS = ["label", "rep", "run_dir", "status"]
TRANSFER_SIZES = [1_000, 10_000, 100_000, 1_000_000, 10_000_000]
# bytes per second charged to inline payloads by latency-sim transfer runs
DEFAULT_BANDWIDTH = 1e8


class BenchmarkReport:
    def __init__(self, rows: Optional[List[BenchmarkRow]] = None):
        self.rows: List[BenchmarkRow] = list(rows or [])

    def __len__(self) -> int:
        return len(self.rows)

    def add(self, row: BenchmarkRow) -> None:
        self.rows.append(row)

    def extend(self, other: "BenchmarkReport") -> None:
        self.rows.extend(other.rows)

    def to_frame(self) -> pd.DataFrame:
        if not self.rows:
            return pd.DataFrame(columns=REPORT_COLUMNS + ["run_dir", "failed"])
        return pd.DataFrame([row.model_dump() for row in self.rows])

    def summary(self) -> pd.DataFrame:
        """Mean, sample standard deviation and count per (label, metric, unit)."""
        frame = self.to_frame()
        if frame.empty:
            return pd.DataFrame(columns=["label", "metric", "unit", "mean", "std", "count"])
        frame["value"] = pd.to_numeric(frame["value"], errors="coerce")
        grouped = frame.groupby(["label", "metric", "unit"], sort=False)["value"]
        return grouped.agg(["mean", "std", "count"]).reset_index()


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}{suffix}.csv")


def report_write(report: BenchmarkReport, path: Union[str, Path]) -> Path:
    """Write ``path`` plus ``<stem>_summary.csv`` and ``<stem>_runs.csv``."""
    path = Path(path)
    if path.suffix != ".csv":
        path = path.with_name(path.name + ".csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = report.to_frame()
    frame[REPORT_COLUMNS].to_csv(path, index=False)
    report.summary().to_csv(_sibling(path, "_summary"), index=False)
    runs = frame.assign(status=frame["failed"].map({True: "failed", False: "succeeded"}))
    runs[RUN_COLUMNS].drop_duplicates().to_csv(_sibling(path, "_runs"), index=False)
    logger.info(f"Wrote {len(frame)} benchmark rows to {path}")
    return path


def config_label(config: RunConfig) -> str:
    label = f"{config.app.name}/{config.executor.label}"
    if config.transformer is not None:
        label += f"/{config.transformer.kind}"
    return label


def _run(config: RunConfig):
    try:
        return run_app(config.model_copy(update={"repeat": 1}))
    except (TapsbError, ValidationError, ValueError, OSError) as exc:
        logger.warning(f"{config_label(config)} failed: {exc}")
        return None


def bench_makespan(configs: Sequence[RunConfig], repetitions: int = 3,
                   labels: Optional[Sequence[str]] = None) -> BenchmarkReport:
    report = BenchmarkReport()
    for index, config in enumerate(configs):
        label = labels[index] if labels else config_label(config)
        for rep in range(repetitions):
            result = _run(config)
            report.add(BenchmarkRow(
                label=label, metric="makespan", unit="s", rep=rep,
                value=result.summary["makespan_s"] if result else None,
                run_dir=str(result.run_dir) if result else None,
                failed=result is None,
            ))
    return report


def executor_spec(kind: str, workers: int, sched_latency: float = 0.01,
                  batch_size: int = 32, inner: str = "thread-pool",
                  bandwidth: Optional[float] = None,
                  max_payload: Optional[int] = None) -> ExecutorSpec:
    if kind == "serial":
        return ExecutorSpec(kind="serial")
    if kind == "latency-sim":
        return ExecutorSpec(kind="latency-sim", sched_latency=sched_latency,
                            batch_size=batch_size, bandwidth=bandwidth,
                            max_payload=max_payload,
                            inner=executor_spec(inner, workers))
    return ExecutorSpec(kind=kind, workers=workers)


def bench_scaling(executor_kinds: Iterable[str], worker_counts: Iterable[int],
                  task_count: int = 1000, sleep: float = 0.0, repetitions: int = 1,
                  run_root: Optional[str] = None, sched_latency: float = 0.01,
                  batch_size: int = 32, seed: int = 0) -> BenchmarkReport:
    """Bag of tasks with exactly ``workers`` in flight; reports tasks per second."""
    report = BenchmarkReport()
    worker_counts = list(worker_counts)
    for kind in executor_kinds:
        for workers in ([1] if kind == "serial" else worker_counts):
            config = RunConfig(
                app=AppSpec(name="synthetic", params={
                    "structure": "bag", "task_count": task_count,
                    "sleep": sleep, "outstanding": workers,
                }),
                executor=executor_spec(kind, workers, sched_latency, batch_size),
                run_dir=run_root or default_run_root(),
                seed=seed,
            )
            label = f"{kind}:{workers}"
            for rep in range(repetitions):
                result = _run(config)
                value = None
                if result is not None and result.summary.get("app_runtime_s"):
                    value = result.summary["task_count"] / result.summary["app_runtime_s"]
                report.add(BenchmarkRow(
                    label=label, metric="throughput", unit="tasks/s", rep=rep,
                    value=value, run_dir=str(result.run_dir) if result else None,
                    failed=result is None,
                ))
    return report


def round_trips(engine: Engine, payload: bytes, count: int) -> List[float]:
    """Seconds from submit until ``result()`` returns, one task at a time."""
    times = []
    for _ in range(count):
        start = time.perf_counter()
        value = engine.submit("identity", payload).result()
        times.append(time.perf_counter() - start)
        if len(value) != len(payload):
            raise TapsbError(f"round trip returned {len(value)} of {len(payload)} bytes")
    return times


def _transfer_run(engine_spec: EngineSpec, run_root: str, label: str, payload: bytes,
                  count: int) -> Tuple[Optional[float], Optional[Path]]:
    run_dir = make_run_dir(run_root, "transfer", engine_spec.executor.kind)
    transformer = engine_spec.transformer
    if transformer is not None and transformer.kind == "file" and not transformer.data_dir:
        transformer = transformer.model_copy(update={"data_dir": str(run_dir / DATA_DIR)})
        engine_spec = engine_spec.model_copy(update={"transformer": transformer})
    try:
        with Engine.from_spec(engine_spec, run_dir) as engine:
            times = round_trips(engine, payload, count)
    except (TapsbError, ValueError, OSError) as exc:
        logger.warning(f"{label} failed: {exc}")
        return None, run_dir
    return sum(times) / len(times), run_dir


def bench_transfer(executor: ExecutorSpec, sizes: Iterable[int] = TRANSFER_SIZES,
                   transformers: Iterable[Optional[str]] = (None, "file", "store"),
                   repetitions: int = 3, run_root: Optional[str] = None,
                   store_address: Optional[str] = None, seed: int = 0,
                   tasks_per_rep: Optional[int] = None) -> BenchmarkReport:
    """Client round-trip time of identity tasks moving ``size`` bytes in and out.

    Each repetition times ``tasks_per_rep`` tasks (default 10 per worker) from
    submission until the resolved result is back in the client. A latency-sim executor without a
    bandwidth is charged DEFAULT_BANDWIDTH for inline payloads.
    """
    if executor.kind == "latency-sim" and executor.bandwidth is None:
        executor = executor.model_copy(update={"bandwidth": DEFAULT_BANDWIDTH})
    tasks_per_rep = tasks_per_rep or 10 * executor.workers
    transformers = list(transformers)
    run_root = run_root or default_run_root()
    report = BenchmarkReport()
    store: Optional[StoreServer] = None
    if store_address is None and "store" in transformers:
        store = StoreServer().start()
        store_address = store.address
    try:
        for size in sizes:
            payload = np.random.Generator(np.random.PCG64(seed)).bytes(size)
            for kind in transformers:
                engine_spec = EngineSpec(executor=executor)
                if kind is not None:
                    engine_spec = EngineSpec(
                        executor=executor,
                        transformer=TransformerSpec(
                            kind=kind, address=store_address if kind == "store" else None),
                        filter=FilterSpec(kind="type-tag", allowed=["bytes"]),
                    )
                label = f"{size}B:{kind or 'inline'}"
                for rep in range(repetitions):
                    value, run_dir = _transfer_run(engine_spec, run_root, label, payload,
                                                   tasks_per_rep)
                    report.add(BenchmarkRow(
                        label=label, metric="round_trip", unit="s", rep=rep, value=value,
                        run_dir=str(run_dir) if run_dir else None, failed=value is None,
                    ))
    finally:
        if store is not None:
            store.stop()
    return report
