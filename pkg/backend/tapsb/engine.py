"""The Engine: one submission interface over an executor, an optional
transformer and filter, and a record sink.

Every task is dispatched through the ``tapsb.run_task`` wrapper, which runs
where the task runs: it resolves transformed arguments, calls the task
function, optionally transforms the result, and reports execution timings
back in an envelope. The engine turns each envelope into one TaskRecord and
logs it before the task's future completes, so a child task can never start
before its parent's record exists.
"""
import logging
import math
import threading
import time
import uuid
from concurrent import futures as cf
from concurrent.futures import Future
from functools import lru_cache
from typing import Any, Callable, Iterable, List, Optional, Sequence, Union

from . import wire
from .errors import (
    DependencyFailure, LifecycleError, SubmissionError, TaskFailure,
    TransformError, WireError, failure_from_kind,
)
from .executors import DependencyExecutor, Executor, build_executor, dependency_wrap
from .records import NullRecordLogger, RecordLogger, build_record_sink
from .registry import get_task, task, task_name
from .schemas import EngineSpec, FilterSpec, TaskRecord
from .transform import (
    Transformer, acquire_transformer, build_transformer, filter_check, get_transformer,
    release_transformer,
)
from .wire import Identifier

logger = logging.getLogger(__name__)

RUN_TASK = "tapsb.run_task"


def now_us() -> int:
    return time.time_ns() // 1000


def _elapsed_us(start_ns: int) -> int:
    return math.ceil((time.perf_counter_ns() - start_ns) / 1000)


def _size(value: Any) -> int:
    try:
        return wire.encoded_size(value)
    except WireError:
        return 0


def _error_kind(exc: BaseException) -> str:
    if isinstance(exc, TaskFailure):
        return exc.kind
    return type(exc).__name__


def _resolve_args(args: Sequence[Any], transformer: Optional[Transformer]) -> List[Any]:
    def resolve(value):
        if not isinstance(value, Identifier):
            return value
        if transformer is None:
            raise TransformError(f"no transformer configured to resolve {value.locator}")
        return transformer.resolve(value)

    resolved = []
    for arg in args:
        if isinstance(arg, (list, tuple)) and any(isinstance(i, Identifier) for i in arg):
            resolved.append(type(arg)(resolve(i) for i in arg))
        else:
            resolved.append(resolve(arg))
    return resolved


@lru_cache(maxsize=8)
def _filter_from_json(filter_spec: str) -> FilterSpec:
    return FilterSpec.model_validate_json(filter_spec)


@task(RUN_TASK)
def run_task(function: str, transformer_spec: Optional[str], filter_spec: Optional[str],
             *args):
    """Execution-side task wrapper.

    Returns [ok, value, error_kind, message, exec_started_at, exec_ended_at,
    resolve_args_us, transform_result_us, arg_bytes, result_bytes].
    """
    arg_bytes = _size(list(args))
    transformer = get_transformer(transformer_spec) if transformer_spec else None
    result_filter = _filter_from_json(filter_spec) if filter_spec else None

    resolve_start = time.perf_counter_ns()
    try:
        resolved = _resolve_args(args, transformer)
    except Exception as exc:
        stamp = now_us()
        return [False, None, _error_kind(exc), str(exc), stamp, stamp,
                _elapsed_us(resolve_start), 0, arg_bytes, 0]
    resolve_us = _elapsed_us(resolve_start) if transformer else 0

    exec_started = now_us()
    try:
        value = get_task(function)(*resolved)
    except Exception as exc:
        exec_ended = now_us()
        return [False, None, _error_kind(exc), str(exc), exec_started, exec_ended,
                resolve_us, 0, arg_bytes, 0]
    exec_ended = now_us()

    transform_us = 0
    if transformer is not None and result_filter is not None \
            and filter_check(result_filter, value):
        transform_start = time.perf_counter_ns()
        try:
            value = transformer.transform(value)
        except TransformError as exc:
            return [False, None, _error_kind(exc), str(exc), exec_started, exec_ended,
                    resolve_us, _elapsed_us(transform_start), arg_bytes, 0]
        transform_us = _elapsed_us(transform_start)
    return [True, value, "", "", exec_started, exec_ended, resolve_us, transform_us,
            arg_bytes, _size(value)]


class TaskFuture:
    """Handle to a task submitted through an Engine."""

    def __init__(self, engine: "Engine", task_id: str, function: str, parents: List[str]):
        self.engine = engine
        self.task_id = task_id
        self.function = function
        self.parents = parents
        # completes with the task's (possibly transformed) result
        self.value_future: Future = Future()
        self.value_future.task_id = task_id
        self._low: Optional[Future] = None
        self._lock = threading.Lock()
        self._resolved = False
        self._value: Any = None

    def __repr__(self) -> str:
        return f"TaskFuture({self.function}, {self.task_id}, {self.state})"

    @property
    def state(self) -> str:
        if self.value_future.done():
            return "failed" if self.value_future.exception() is not None else "succeeded"
        if self._low is not None and (self._low.running() or self._low.done()):
            return "running"
        return "pending"

    def done(self) -> bool:
        return self.value_future.done()

    def exception(self, timeout: Optional[float] = None) -> Optional[BaseException]:
        return self.value_future.exception(timeout)

    def result(self, timeout: Optional[float] = None) -> Any:
        """Wait for the task and return its value, resolving transformed results.

        Raises TaskFailure (or a subclass) for failed tasks and TaskTimeout
        when ``timeout`` elapses first.
        """
        value = self.value_future.result(timeout)
        if not isinstance(value, Identifier):
            return value
        with self._lock:
            if not self._resolved:
                self._value = self.engine.resolve(value)
                self._resolved = True
            return self._value

    def add_done_callback(self, callback: Callable[["TaskFuture"], None]) -> None:
        self.value_future.add_done_callback(lambda _: callback(self))


class Engine:
    """Submits registered tasks, tracking dataflow and emitting TaskRecords."""

    def __init__(self, executor: Executor, transformer: Optional[Transformer] = None,
                 filter: Optional[FilterSpec] = None,
                 record_sink: Optional[RecordLogger] = None):
        filter = filter or FilterSpec()
        if transformer is None and filter.kind != "never":
            raise ValueError("a filter other than 'never' requires a transformer")
        base = executor.inner if isinstance(executor, DependencyExecutor) else executor
        self.executor_kind = base.kind
        self.executor = dependency_wrap(executor)
        self.transformer = transformer
        self.filter = filter
        self.record_sink = record_sink or NullRecordLogger()
        self._transformer_spec = transformer.spec().model_dump_json() if transformer else None
        self._filter_spec = filter.model_dump_json() if transformer else None
        if self._transformer_spec:
            acquire_transformer(self._transformer_spec)
        self._lock = threading.Lock()
        self._inflight: set = set()
        self._closed = False
        self.submitted = 0
        self.failed = 0
        self.max_object_bytes = 0
        logger.info(f"engine started on {self.executor_kind} executor with "
                    f"{self.executor.workers} worker(s)")

    @classmethod
    def from_spec(cls, spec: EngineSpec, run_dir=None) -> "Engine":
        transformer = build_transformer(spec.transformer)
        sink = build_record_sink(spec.record_sink, run_dir)
        try:
            executor = build_executor(spec.executor)
        except Exception:
            sink.close()
            if transformer:
                transformer.close()
            raise
        return cls(executor, transformer=transformer, filter=spec.filter, record_sink=sink)

    @property
    def workers(self) -> int:
        return self.executor.workers

    def resolve(self, identifier: Identifier) -> Any:
        if self.transformer is None:
            raise TransformError(f"no transformer configured to resolve {identifier.locator}")
        if not self._closed:
            return self.transformer.resolve(identifier)
        # the engine's own transformer is closed once shut down
        transformer = build_transformer(self.transformer.spec())
        try:
            return transformer.resolve(identifier)
        finally:
            transformer.close()

    def _prepare(self, arg: Any, parents: List[str], timing: list) -> Any:
        if isinstance(arg, TaskFuture):
            if arg.engine is not self:
                raise SubmissionError(f"future {arg.task_id} belongs to another engine")
            if arg.task_id not in parents:
                parents.append(arg.task_id)
            return arg.value_future
        if self.transformer is not None and filter_check(self.filter, arg):
            start = time.perf_counter_ns()
            try:
                identifier = self.transformer.transform(arg)
            except TransformError as exc:
                raise SubmissionError(f"cannot transform argument: {exc}") from exc
            timing[0] += time.perf_counter_ns() - start
            return identifier
        return arg

    def submit(self, function: Union[str, Callable], *args) -> TaskFuture:
        """Submit a registered task; TaskFuture arguments become dependencies."""
        name = task_name(function)
        get_task(name)
        with self._lock:
            if self._closed:
                raise LifecycleError("engine is shut down")

        task_id = str(uuid.uuid4())
        submitted_at = now_us()
        parents: List[str] = []
        timing = [0]
        prepared = []
        for arg in args:
            if isinstance(arg, (list, tuple)) and any(isinstance(i, TaskFuture) for i in arg):
                prepared.append(type(arg)(self._prepare(i, parents, timing) for i in arg))
            else:
                prepared.append(self._prepare(arg, parents, timing))
        transform_us = math.ceil(timing[0] / 1000)

        future = TaskFuture(self, task_id, name, parents)
        with self._lock:
            if self._closed:
                raise LifecycleError("engine is shut down")
            self._inflight.add(future)
            self.submitted += 1
        try:
            low = self.executor.submit(
                RUN_TASK, [name, self._transformer_spec, self._filter_spec, *prepared], task_id)
        except Exception:
            with self._lock:
                self._inflight.discard(future)
                self.submitted -= 1
            raise
        future._low = low
        logger.debug(f"submitted {name} as {task_id} (parents {parents})")
        low.add_done_callback(
            lambda done: self._complete(future, done, submitted_at, transform_us))
        return future

    def map(self, function: Union[str, Callable], inputs: Iterable[Any]) -> List[TaskFuture]:
        """Submit ``function`` once per argument tuple, preserving order."""
        return [self.submit(function, *(args if isinstance(args, tuple) else (args,)))
                for args in inputs]

    def _complete(self, future: TaskFuture, low: Future, submitted_at: int,
                  transform_us: int) -> None:
        completed_at = now_us()
        error: Optional[BaseException] = None
        value = None
        resolve_us = result_us = arg_bytes = result_bytes = 0
        started = ended = completed_at
        if low.cancelled():
            error = LifecycleError("task was cancelled")
        elif low.exception() is not None:
            error = low.exception()
        else:
            (ok, value, kind, message, started, ended, resolve_us, result_us,
             arg_bytes, result_bytes) = low.result()
            if not ok:
                error = failure_from_kind(kind, message, task_id=future.task_id)

        if isinstance(error, TaskFailure):
            error.task_id = future.task_id
        elif error is not None:
            error = TaskFailure(str(error), kind=_error_kind(error), task_id=future.task_id)

        # worker clocks may drift slightly from the client's
        started = min(max(started, submitted_at), completed_at)
        ended = min(max(ended, started), completed_at)
        record = TaskRecord(
            task_id=future.task_id,
            function=future.function,
            parents=future.parents,
            submitted_at=submitted_at,
            completed_at=completed_at,
            exec_started_at=started,
            exec_ended_at=ended,
            transform_args_us=transform_us,
            resolve_args_us=resolve_us,
            transform_result_us=result_us,
            makespan_us=completed_at - submitted_at,
            status="failed" if error is not None else "succeeded",
            error_kind=error.kind if error is not None else "",
            executor=self.executor_kind,
            arg_bytes=arg_bytes,
            result_bytes=result_bytes,
        )
        try:
            self.record_sink.log(record)
        except LifecycleError as exc:
            logger.warning(f"record for {future.task_id} dropped: {exc}")

        with self._lock:
            self.max_object_bytes = max(self.max_object_bytes, arg_bytes, result_bytes)
            if error is not None:
                self.failed += 1
        if error is not None:
            if isinstance(error, DependencyFailure):
                logger.debug(f"task {future.task_id} skipped: {error}")
            else:
                logger.debug(f"task {future.task_id} failed ({error.kind}): {error}")
            future.value_future.set_exception(error)
        else:
            future.value_future.set_result(value)
        with self._lock:
            self._inflight.discard(future)

    def shutdown(self, wait: bool = True) -> None:
        """Stop accepting tasks; with ``wait``, block until every task finished
        and its record is written. Safe to call more than once."""
        with self._lock:
            if self._closed:
                return
            self._closed = True
            pending = [f.value_future for f in self._inflight]
        if wait and pending:
            cf.wait(pending)
        self.executor.shutdown(wait=wait)
        self.record_sink.close()
        if self.transformer is not None:
            self.transformer.close()
        if self._transformer_spec:
            release_transformer(self._transformer_spec)
        logger.info(f"engine stopped after {self.submitted} task(s), {self.failed} failed")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.shutdown(wait=True)


def engine_submit(engine: Engine, function, args: Sequence[Any]) -> TaskFuture:
    return engine.submit(function, *args)


def engine_map(engine: Engine, function, inputs: Iterable[Any]) -> List[TaskFuture]:
    return engine.map(function, inputs)
