"""Exception hierarchy for engines, executors, transformers and the harness."""
from concurrent.futures import TimeoutError as TaskTimeout
from typing import Optional


class TapsbError(Exception):
    """Base class for every error raised by the framework."""


class RegistrationError(TapsbError):
    """Unknown task, application or executor name."""


class LifecycleError(TapsbError):
    """Operation on a component that was shut down or closed."""


class SubmissionError(TapsbError):
    """A task could not be handed to an executor."""


class WireError(TapsbError):
    """A value could not be encoded, or bytes are not a valid frame."""


class TransformError(TapsbError):
    """A transformer failed to persist a value."""


class ResolutionError(TapsbError):
    """An identifier could not be resolved back into its value."""

    def __init__(self, locator: str, reason: str = "not found"):
        super().__init__(f"cannot resolve {locator}: {reason}")
        self.locator = locator


class StoreError(TapsbError):
    """Key-value store connection was refused, reset or answered garbage."""


class WorkerStartupError(TapsbError):
    """A worker process failed to start or register."""

    def __init__(self, index: int, reason: str):
        super().__init__(f"worker {index} failed to start: {reason}")
        self.index = index


class RecordParseError(TapsbError):
    """A task record file holds a malformed line."""

    def __init__(self, path: str, line_number: int, reason: str):
        super().__init__(f"{path}:{line_number}: {reason}")
        self.path = path
        self.line_number = line_number


class NumericalError(TapsbError):
    """A factorization kernel met a non-positive pivot or zero diagonal."""


class TaskFailure(TapsbError):
    """A task reached the failed state.

    ``kind`` is a short label stored as the record's error_kind: either one of
    the framework kinds below or the class name of the exception the task raised.
    """
    default_kind = "task-error"

    def __init__(self, message: str, kind: Optional[str] = None,
                 task_id: Optional[str] = None):
        super().__init__(message)
        self.kind = kind or self.default_kind
        self.message = message
        self.task_id = task_id


class DependencyFailure(TaskFailure):
    default_kind = "dependency-failure"

    def __init__(self, parent_id: Optional[str], task_id: Optional[str] = None):
        super().__init__(f"parent task {parent_id} failed", task_id=task_id)
        self.parent_id = parent_id


class WorkerFailure(TaskFailure):
    default_kind = "worker-failure"


class WalltimeExceeded(TaskFailure):
    default_kind = "walltime"


FAILURE_KINDS = {
    cls.default_kind: cls
    for cls in (TaskFailure, DependencyFailure, WorkerFailure, WalltimeExceeded)
}


def failure_from_kind(kind: str, message: str,
                      task_id: Optional[str] = None) -> TaskFailure:
    """Rebuild a TaskFailure from the (kind, message) pair sent over the wire."""
    if kind == DependencyFailure.default_kind:
        error = DependencyFailure(None, task_id=task_id)
        error.message = message
        error.args = (message,)
        return error
    cls = FAILURE_KINDS.get(kind, TaskFailure)
    return cls(message, kind=kind, task_id=task_id)


__all__ = [
    "TapsbError", "RegistrationError", "LifecycleError", "SubmissionError",
    "WireError", "TransformError", "ResolutionError", "StoreError",
    "WorkerStartupError", "RecordParseError", "NumericalError", "TaskFailure",
    "DependencyFailure", "WorkerFailure", "WalltimeExceeded", "TaskTimeout",
    "failure_from_kind",
]
