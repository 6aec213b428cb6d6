"""tapsb: benchmark task-based applications across executors and data transformers."""
from .engine import Engine, TaskFuture
from .errors import (
    DependencyFailure, LifecycleError, SubmissionError, TaskFailure, TaskTimeout,
    TapsbError, WorkerFailure,
)
from .registry import register_app, task
from .schemas import AppConfig, EngineSpec, ExecutorSpec, FilterSpec, RunConfig, TransformerSpec

__version__ = "0.1.0"

__all__ = [
    "Engine", "TaskFuture", "task", "register_app", "AppConfig", "EngineSpec",
    "ExecutorSpec", "FilterSpec", "RunConfig", "TransformerSpec", "TapsbError",
    "TaskFailure", "DependencyFailure", "WorkerFailure", "LifecycleError",
    "SubmissionError", "TaskTimeout",
]
