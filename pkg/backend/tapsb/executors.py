"""Task executors.

Every executor runs registered tasks by name and returns a
concurrent.futures.Future. DependencyExecutor adds implicit dataflow on top
of any of them: futures passed as arguments are awaited without blocking the
submitter and replaced by their values before dispatch.
"""
import logging
import threading
import time
from abc import ABC, abstractmethod
from collections import deque
from concurrent import futures as cf
from concurrent.futures import Future
from typing import Any, Callable, Dict, List, Optional, Sequence

from . import wire
from .errors import (
    DependencyFailure, LifecycleError, SubmissionError, WireError,
)
from .registry import get_task, load_builtin_tasks
from .schemas import ExecutorSpec

logger = logging.getLogger(__name__)


class Executor(ABC):
    kind = "executor"

    @property
    @abstractmethod
    def workers(self) -> int:
        ...

    @abstractmethod
    def submit(self, name: str, args: Sequence[Any],
               task_id: Optional[str] = None) -> Future:
        """Schedule the registered task ``name`` with positional ``args``."""

    def shutdown(self, wait: bool = True) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.shutdown(wait=True)


def _run_into(future: Future, function: Callable, args: Sequence[Any]) -> None:
    if not future.set_running_or_notify_cancel():
        return
    try:
        result = function(*args)
    except BaseException as exc:
        future.set_exception(exc)
    else:
        future.set_result(result)


class SerialExecutor(Executor):
    """Runs each task inline, inside submit()."""
    kind = "serial"

    def __init__(self):
        self._closed = False

    @property
    def workers(self) -> int:
        return 1

    def submit(self, name, args, task_id=None):
        if self._closed:
            raise LifecycleError("serial executor is shut down")
        function = get_task(name)
        future = Future()
        _run_into(future, function, args)
        return future

    def shutdown(self, wait=True):
        self._closed = True


class ThreadPoolExecutor(Executor):
    kind = "thread-pool"

    def __init__(self, workers: int):
        self._workers = workers
        self._pool = cf.ThreadPoolExecutor(max_workers=workers,
                                           thread_name_prefix="tapsb-task")

    @property
    def workers(self) -> int:
        return self._workers

    def submit(self, name, args, task_id=None):
        function = get_task(name)
        try:
            return self._pool.submit(function, *args)
        except RuntimeError as exc:
            raise LifecycleError(f"thread pool is shut down: {exc}") from exc

    def shutdown(self, wait=True):
        self._pool.shutdown(wait=wait, cancel_futures=not wait)


class _Pending:
    __slots__ = ("name", "args", "task_id", "future", "queued_at")

    def __init__(self, name, args, task_id, future):
        self.name = name
        self.args = args
        self.task_id = task_id
        self.future = future
        self.queued_at = time.monotonic()


def _chain(source: Future, target: Future) -> None:
    def copy(done: Future) -> None:
        if target.done():
            return
        if done.cancelled():
            target.set_exception(LifecycleError("task was cancelled"))
            return
        exc = done.exception()
        if exc is not None:
            target.set_exception(exc)
        else:
            target.set_result(done.result())
    source.add_done_callback(copy)


def _payload_size(values: Any) -> int:
    try:
        return wire.encoded_size(values)
    except WireError:
        return 0


class LatencySimExecutor(Executor):
    """Emulates a hosted execution service in front of a local executor.

    Ready tasks are collected and dispatched in batches of at most
    ``batch_size`` once every ``sched_latency`` seconds. With ``bandwidth``
    set, inline argument and result payloads each add size/bandwidth seconds
    of transfer delay. ``max_payload`` rejects oversized submissions.
    """
    kind = "latency-sim"

    def __init__(self, inner: Executor, sched_latency: float, batch_size: int = 32,
                 bandwidth: Optional[float] = None, max_payload: Optional[int] = None):
        self.inner = inner
        self.sched_latency = sched_latency
        self.batch_size = batch_size
        self.bandwidth = bandwidth
        self.max_payload = max_payload
        self._queue: deque = deque()
        self._cond = threading.Condition()
        self._closed = False
        self._timers: List[threading.Timer] = []
        self._dispatcher = threading.Thread(target=self._dispatch_loop,
                                            name="tapsb-latency-sim", daemon=True)
        self._dispatcher.start()

    @property
    def workers(self) -> int:
        return self.inner.workers

    def submit(self, name, args, task_id=None):
        get_task(name)
        size = _payload_size(list(args))
        if self.max_payload is not None and size > self.max_payload:
            raise SubmissionError(
                f"task payload of {size} bytes exceeds the {self.max_payload}-byte limit")
        future = Future()
        with self._cond:
            if self._closed:
                raise LifecycleError("latency-sim executor is shut down")
            self._queue.append(_Pending(name, list(args), task_id, future))
            self._cond.notify()
        return future

    def _dispatch_loop(self):
        while True:
            with self._cond:
                while not self._queue and not self._closed:
                    self._cond.wait()
                if not self._queue and self._closed:
                    return
            time.sleep(self.sched_latency)
            with self._cond:
                batch = [self._queue.popleft()
                         for _ in range(min(self.batch_size, len(self._queue)))]
            for pending in batch:
                delay = self._transfer_delay(pending.args)
                if delay > 0:
                    self._later(delay, self._dispatch, pending)
                else:
                    self._dispatch(pending)

    def _transfer_delay(self, payload: Any) -> float:
        if not self.bandwidth:
            return 0.0
        return _payload_size(payload) / self.bandwidth

    def _later(self, delay: float, function: Callable, *args) -> None:
        timer = threading.Timer(delay, function, args=args)
        timer.daemon = True
        with self._cond:
            self._timers = [t for t in self._timers if t.is_alive()]
            self._timers.append(timer)
        timer.start()

    def _dispatch(self, pending: _Pending) -> None:
        if not pending.future.set_running_or_notify_cancel():
            return
        try:
            inner_future = self.inner.submit(pending.name, pending.args, pending.task_id)
        except Exception as exc:
            pending.future.set_exception(exc)
            return
        inner_future.add_done_callback(lambda done: self._deliver(done, pending.future))

    def _deliver(self, done: Future, target: Future) -> None:
        delay = 0.0
        if done.exception() is None:
            delay = self._transfer_delay(done.result())
        if delay > 0:
            self._later(delay, _chain, done, target)
        else:
            _chain(done, target)

    def shutdown(self, wait=True):
        with self._cond:
            self._closed = True
            self._cond.notify_all()
            if not wait:
                while self._queue:
                    pending = self._queue.popleft()
                    pending.future.set_exception(
                        LifecycleError("latency-sim executor shut down before dispatch"))
        if wait:
            self._dispatcher.join()
            while True:
                with self._cond:
                    timers = [t for t in self._timers if t.is_alive()]
                if not timers:
                    break
                for timer in timers:
                    timer.join()
        self.inner.shutdown(wait=wait)


def _find_futures(args: Sequence[Any]) -> List[Future]:
    """Futures among the top-level arguments and one level of list/tuple nesting."""
    found: Dict[int, Future] = {}
    for arg in args:
        if isinstance(arg, Future):
            found.setdefault(id(arg), arg)
        elif isinstance(arg, (list, tuple)):
            for item in arg:
                if isinstance(item, Future):
                    found.setdefault(id(item), item)
    return list(found.values())


def _substitute(args: Sequence[Any]) -> List[Any]:
    def value(item):
        return item.result() if isinstance(item, Future) else item

    resolved = []
    for arg in args:
        if isinstance(arg, Future):
            resolved.append(arg.result())
        elif isinstance(arg, (list, tuple)) and any(isinstance(i, Future) for i in arg):
            resolved.append(type(arg)(value(i) for i in arg))
        else:
            resolved.append(arg)
    return resolved


class _HeldTask:
    __slots__ = ("pending", "remaining", "settled")

    def __init__(self, pending: _Pending, remaining: int):
        self.pending = pending
        self.remaining = remaining
        self.settled = False


class DependencyExecutor(Executor):
    """Adds implicit dataflow to an executor that lacks it.

    Submissions holding futures are parked until every such future succeeds,
    then dispatched with the futures replaced by their results. If a parent
    fails, the child fails with DependencyFailure naming the parent's
    ``task_id`` attribute, when it has one.
    """
    kind = "dependency"

    def __init__(self, inner: Executor):
        self.inner = inner
        self._lock = threading.Lock()
        self._idle = threading.Condition(self._lock)
        self._held: Dict[int, _HeldTask] = {}
        self._closed = False

    @property
    def workers(self) -> int:
        return self.inner.workers

    @property
    def held_count(self) -> int:
        with self._lock:
            return len(self._held)

    def submit(self, name, args, task_id=None):
        with self._lock:
            if self._closed:
                raise LifecycleError("executor is shut down")
        parents = _find_futures(args)
        if not parents:
            return self.inner.submit(name, args, task_id)

        get_task(name)
        held = _HeldTask(_Pending(name, list(args), task_id, Future()), len(parents))
        with self._lock:
            self._held[id(held)] = held
        for parent in parents:
            parent.add_done_callback(lambda done, held=held: self._parent_done(held, done))
        return held.pending.future

    def _parent_done(self, held: _HeldTask, parent: Future) -> None:
        failed = parent.cancelled() or parent.exception() is not None
        with self._lock:
            if held.settled:
                return
            if failed:
                held.settled = True
            else:
                held.remaining -= 1
                if held.remaining:
                    return
                held.settled = True
            self._held.pop(id(held), None)
            self._idle.notify_all()

        pending = held.pending
        if failed:
            parent_id = getattr(parent, "task_id", None)
            logger.debug(f"task {pending.task_id} not dispatched: parent {parent_id} failed")
            pending.future.set_exception(DependencyFailure(parent_id, task_id=pending.task_id))
            return
        self._dispatch(pending)

    def _dispatch(self, pending: _Pending) -> None:
        pending.future.set_running_or_notify_cancel()
        try:
            inner_future = self.inner.submit(pending.name, _substitute(pending.args),
                                             pending.task_id)
        except Exception as exc:
            pending.future.set_exception(exc)
            return
        _chain(inner_future, pending.future)

    def shutdown(self, wait=True):
        with self._lock:
            self._closed = True
            if wait:
                while self._held:
                    self._idle.wait()
        self.inner.shutdown(wait=wait)


def find_executor(executor: Executor, kind: type) -> Optional[Executor]:
    """Walk the ``inner`` chain looking for an executor of the given class."""
    current = executor
    while current is not None:
        if isinstance(current, kind):
            return current
        current = getattr(current, "inner", None)
    return None


def build_executor(spec: ExecutorSpec) -> Executor:
    load_builtin_tasks()
    if spec.kind == "serial":
        return SerialExecutor()
    if spec.kind == "thread-pool":
        return ThreadPoolExecutor(spec.workers)
    if spec.kind == "worker-pool":
        from .workers import WorkerPoolExecutor
        return WorkerPoolExecutor(spec.workers, drain_timeout=spec.drain_timeout)
    if spec.kind == "latency-sim":
        return LatencySimExecutor(build_executor(spec.inner), spec.sched_latency,
                                  batch_size=spec.batch_size, bandwidth=spec.bandwidth,
                                  max_payload=spec.max_payload)
    raise ValueError(f"unknown executor kind {spec.kind!r}")


def dependency_wrap(executor: Executor) -> DependencyExecutor:
    if isinstance(executor, DependencyExecutor):
        return executor
    return DependencyExecutor(executor)
