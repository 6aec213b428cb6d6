"""Run directories and single benchmark runs.

A run directory holds everything one invocation produced:

    config.json    the RunConfig as given (reloadable with --config)
    tasks.jsonl    one TaskRecord per line
    app.log        log output of the run
    summary.json   makespan, task counts and application results
"""
import json
import logging
import os
import secrets
import time
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .engine import Engine
from .records import RECORDS_FILE, load_records
from .registry import get_app_config
from .schemas import AppConfig, AppSpec, RunConfig, TaskRecord
from .store import StoreServer

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
SUMMARY_FILE = "summary.json"
LOG_FILE = "app.log"
DATA_DIR = "data"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def default_run_root() -> str:
    return os.getenv("TAPSB_RUN_DIR", "runs")


@dataclass
class RunResult:
    run_dir: Path
    summary: Dict[str, Any]

    @property
    def records_path(self) -> Path:
        return self.run_dir / RECORDS_FILE

    def records(self) -> List[TaskRecord]:
        return load_records(self.records_path)


def make_run_dir(root: Union[str, Path], app: str, executor: str) -> Path:
    """Create a fresh ``<root>/<app>_<executor>_<timestamp>_<suffix>`` directory."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    while True:
        path = root / f"{app}_{executor}_{stamp}_{secrets.token_hex(3)}"
        try:
            path.mkdir()
        except FileExistsError:
            continue
        logger.info(f"Created run directory {path}")
        return path


def build_app_config(app: AppSpec, seed: int) -> AppConfig:
    config_cls = get_app_config(app.name)
    return config_cls(**{**app.params, "seed": seed})


def load_run_config(path: Union[str, Path]) -> RunConfig:
    return RunConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, default=str) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _attach_log(run_dir: Path) -> Tuple[logging.Handler, int]:
    """Send tapsb log output to app.log; INFO is always captured there."""
    package = logging.getLogger("tapsb")
    previous = package.level
    if package.getEffectiveLevel() > logging.INFO:
        package.setLevel(logging.INFO)
    handler = logging.FileHandler(run_dir / LOG_FILE, encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    package.addHandler(handler)
    return handler, previous


def _detach_log(handler: logging.Handler, previous: int) -> None:
    package = logging.getLogger("tapsb")
    package.removeHandler(handler)
    package.setLevel(previous)
    handler.close()


def summarize_records(records: List[TaskRecord]) -> Dict[str, Any]:
    return {
        "task_count": len(records),
        "failed_tasks": sum(1 for r in records if r.status == "failed"),
        "max_object_bytes": max((max(r.arg_bytes, r.result_bytes) for r in records), default=0),
    }


def run_app(config: RunConfig) -> RunResult:
    """Execute one run of ``config`` in a new run directory.

    The makespan covers executor construction through shutdown. Failures are
    recorded in summary.json and then re-raised.
    """
    app_config = build_app_config(config.app, config.seed)
    run_dir = make_run_dir(config.run_dir, config.app.name, config.executor.kind)
    (run_dir / CONFIG_FILE).write_text(config.model_dump_json(indent=2) + "\n", encoding="utf-8")
    handler, previous_level = _attach_log(run_dir)

    store: Optional[StoreServer] = None
    engine_spec = config.engine_spec()
    if engine_spec.transformer is not None:
        transformer = engine_spec.transformer.model_copy()
        if transformer.kind == "file" and not transformer.data_dir:
            transformer.data_dir = str(run_dir / DATA_DIR)
        if transformer.kind == "store" and not transformer.address:
            store = StoreServer().start()
            transformer.address = store.address
        engine_spec = engine_spec.model_copy(update={"transformer": transformer})

    summary: Dict[str, Any] = {
        "app": config.app.name,
        "executor": config.executor.label,
        "transformer": config.transformer.kind if config.transformer else None,
        "filter": str(config.filter),
        "seed": config.seed,
        "status": "failed",
    }
    app = None
    engine = None
    error: Optional[BaseException] = None
    app_fields: Dict[str, Any] = {}
    start = time.perf_counter()
    try:
        engine = Engine.from_spec(engine_spec, run_dir)
        app = app_config.get_app()
        app_start = time.perf_counter()
        try:
            app_fields = app.run(engine, run_dir) or {}
        finally:
            summary["app_runtime_s"] = time.perf_counter() - app_start
    except Exception as exc:
        error = exc
        logger.error(f"Run {run_dir.name} failed: {exc}")
    finally:
        if engine is not None:
            engine.shutdown(wait=True)
        summary["makespan_s"] = time.perf_counter() - start
        if app is not None:
            app.close()
        if store is not None:
            store.stop()

    records_path = run_dir / RECORDS_FILE
    if records_path.exists():
        summary.update(summarize_records(load_records(records_path)))
    elif engine is not None:
        summary.update(task_count=engine.submitted, failed_tasks=engine.failed,
                       max_object_bytes=engine.max_object_bytes)
    summary.update(app_fields)
    if error is None:
        summary["status"] = "succeeded"
    else:
        summary["error"] = str(error)
        summary["error_type"] = type(error).__name__
    write_json(run_dir / SUMMARY_FILE, summary)
    logger.info(f"Run {run_dir.name} {summary['status']} in {summary['makespan_s']:.3f}s")
    _detach_log(handler, previous_level)
    if error is not None:
        raise error
    return RunResult(run_dir=run_dir, summary=summary)


def run_repeated(config: RunConfig) -> List[RunResult]:
    return [run_app(config) for _ in range(config.repeat)]


def load_summary(run_dir: Union[str, Path]) -> Dict[str, Any]:
    return json.loads((Path(run_dir) / SUMMARY_FILE).read_text(encoding="utf-8"))
