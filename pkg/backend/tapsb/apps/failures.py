"""Failure injection around any registered application.

FailureInjectingEngine stands in for the engine the base application sees.
Each submission gets an ordinal; a generator seeded with (seed, ordinal)
decides whether that task fails, so a run is replayable from its config.
Injected tasks keep the original arguments, so the task graph and its
parent links are unchanged.
"""
import logging
import threading
import time
from pathlib import Path
from typing import Any, Dict, List, Literal

import numpy as np
from pydantic import Field

from ..errors import TaskFailure, TapsbError, WalltimeExceeded
from ..executors import find_executor
from ..registry import get_app_config, get_task, register_app, task, task_name
from ..schemas import AppConfig
from . import App

logger = logging.getLogger(__name__)

FailureType = Literal["exception", "divide-by-zero", "memory", "walltime",
                      "dependency", "worker-kill"]

FAILURE_TAXONOMY = {
    "exception": "implemented",
    "divide-by-zero": "implemented",
    "memory": "implemented",
    "walltime": "implemented",
    "dependency": "implemented",
    "worker-kill": "implemented",
    "import-error": "not-applicable",
    "ulimit": "not-applicable",
    "worker-manager": "multi-node-only",
    "node": "multi-node-only",
}


class InjectedFailure(Exception):
    pass


def should_fail(seed: int, ordinal: int, rate: float) -> bool:
    if rate <= 0:
        return False
    if rate >= 1:
        return True
    return np.random.Generator(np.random.PCG64([seed, ordinal])).random() < rate


@task("inject_failure")
def inject_failure(failure_type: str, setting: float, function: str, *args):
    """Fail in the requested way instead of running ``function``.

    ``setting`` is the allocation size for memory, the deadline in seconds for
    walltime, and the time to hold the worker for worker-kill.
    """
    if failure_type == "exception":
        raise InjectedFailure(f"injected failure in {function}")
    if failure_type == "divide-by-zero":
        return len(args) // (len(args) - len(args))
    if failure_type == "memory":
        block = bytearray(int(setting))
        raise MemoryError(f"injected: allocated {len(block)} bytes, limit reached")
    if failure_type == "walltime":
        started = time.monotonic()
        while time.monotonic() - started <= setting:
            time.sleep(min(0.05, setting / 4 or 0.01))
        raise WalltimeExceeded(f"{function} exceeded its {setting}s walltime")
    if failure_type == "worker-kill":
        # the pool kills this process while it sleeps
        time.sleep(setting)
        return get_task(function)(*args)
    raise ValueError(f"unknown failure type {failure_type!r}")


@task("run_after")
def run_after(_parent, function: str, *args):
    """Run ``function`` once the first argument's task has finished."""
    return get_task(function)(*args)


class FailureInjectingEngine:
    """Engine proxy that swaps selected submissions for failing tasks."""

    def __init__(self, engine, config: "FailureConfig"):
        self.engine = engine
        self.config = config
        self._lock = threading.Lock()
        self._ordinal = 0
        self.injected: List[int] = []
        self._watchers: List[threading.Thread] = []
        self._pool = None
        if config.failure_type == "worker-kill":
            from ..workers import WorkerPoolExecutor
            self._pool = find_executor(engine.executor, WorkerPoolExecutor)
            if self._pool is None:
                raise ValueError("worker-kill failure injection needs a worker-pool executor")

    def __getattr__(self, name):
        return getattr(self.engine, name)

    def submit(self, function, *args):
        name = task_name(function)
        with self._lock:
            ordinal = self._ordinal
            self._ordinal += 1
        if not should_fail(self.config.seed, ordinal, self.config.failure_rate):
            return self.engine.submit(name, *args)

        with self._lock:
            self.injected.append(ordinal)
        failure_type = self.config.failure_type
        logger.info(f"injecting {failure_type} into task #{ordinal} ({name})")
        if failure_type == "dependency":
            parent = self.engine.submit(inject_failure, "exception", 0.0, name)
            return self.engine.submit(run_after, parent, name, *args)
        if failure_type == "worker-kill":
            future = self.engine.submit(inject_failure, failure_type,
                                        self.config.kill_hold, name, *args)
            self._watch(future)
            return future
        setting = {"memory": self.config.memory_bytes,
                   "walltime": self.config.walltime}.get(failure_type, 0.0)
        return self.engine.submit(inject_failure, failure_type, float(setting), name, *args)

    def map(self, function, inputs):
        return [self.submit(function, *(args if isinstance(args, tuple) else (args,)))
                for args in inputs]

    def _watch(self, future) -> None:
        def kill_when_running():
            while not future.done():
                index = self._pool.worker_running(future.task_id)
                if index is not None:
                    logger.info(f"killing worker {index} running {future.task_id}")
                    self._pool.kill_worker(index)
                    return
                time.sleep(0.005)

        watcher = threading.Thread(target=kill_when_running, daemon=True,
                                   name=f"tapsb-kill-{future.task_id[:8]}")
        watcher.start()
        self._watchers.append(watcher)

    def join(self) -> None:
        for watcher in self._watchers:
            watcher.join()


def inject_failures(engine, config: "FailureConfig") -> FailureInjectingEngine:
    return FailureInjectingEngine(engine, config)


class FailureApp(App):
    def __init__(self, config: "FailureConfig"):
        self.config = config
        base_cls = get_app_config(config.base)
        self.base = base_cls(**{**config.base_params, "seed": config.seed}).get_app()

    def run(self, engine, run_dir: Path) -> Dict[str, Any]:
        wrapped = inject_failures(engine, self.config)
        summary: Dict[str, Any] = {}
        try:
            summary.update(self.base.run(wrapped, run_dir) or {})
        except TapsbError as exc:
            if not wrapped.injected:
                raise
            summary["base_error"] = str(exc)
            if isinstance(exc, TaskFailure):
                summary["base_error_kind"] = exc.kind
        finally:
            wrapped.join()
        summary.update({
            "base": self.config.base,
            "failure_type": self.config.failure_type,
            "failure_rate": self.config.failure_rate,
            "submitted": wrapped._ordinal,
            "injected": len(wrapped.injected),
            "injected_ordinals": wrapped.injected,
        })
        return summary

    def close(self):
        self.base.close()


@register_app("failures")
class FailureConfig(AppConfig):
    base: str = "synthetic"
    base_params: Dict[str, Any] = Field(default_factory=dict)
    failure_type: FailureType = "exception"
    failure_rate: float = Field(0.1, ge=0, le=1)
    memory_bytes: int = Field(1 << 30, ge=0)
    walltime: float = Field(1.0, ge=0)
    kill_hold: float = Field(5.0, gt=0)

    def get_app(self):
        return FailureApp(self)

    def saved_params(self) -> Dict[str, Any]:
        params = super().saved_params()
        base = get_app_config(self.base)(**self.base_params)
        params["base_params"] = base.saved_params()
        return params
