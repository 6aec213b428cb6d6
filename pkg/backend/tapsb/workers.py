"""Multi-process worker pool.

Each worker is a separate Python process speaking the frame protocol over its
stdin/stdout pipes. Messages are list frames whose first element names the
message type:

    worker -> pool  ["REGISTER", index, pid, [task names]]
    pool -> worker  ["PING", n]                -> ["PONG", n]
    pool -> worker  ["TASK", id, name, [args]] -> ["RESULT", id, true, value]
                                                or ["RESULT", id, false, [kind, message]]

A worker runs one task at a time. Tasks are served FIFO by the first idle
worker. A dead worker fails its in-flight task with WorkerFailure and is
replaced.
"""
import logging
import os
import queue
import subprocess
import sys
import threading
import time
import uuid
from concurrent.futures import Future
from pathlib import Path
from typing import Any, List, Optional

from . import wire
from .errors import (
    LifecycleError, SubmissionError, TaskFailure, WireError, WorkerFailure,
    WorkerStartupError, failure_from_kind,
)
from .executors import Executor
from .registry import builtin_task_names, get_task, load_builtin_tasks, task_names

logger = logging.getLogger(__name__)

PACKAGE_ROOT = Path(__file__).resolve().parent.parent
DEFAULT_DRAIN_TIMEOUT = float(os.getenv("TAPSB_DRAIN_TIMEOUT", "30"))

_STOP = object()


class _Job:
    __slots__ = ("uid", "task_id", "message", "future")

    def __init__(self, uid: str, task_id: Optional[str], message: bytes, future: Future):
        self.uid = uid
        self.task_id = task_id
        self.message = message
        self.future = future


def _worker_env() -> dict:
    env = dict(os.environ)
    path = env.get("PYTHONPATH")
    env["PYTHONPATH"] = str(PACKAGE_ROOT) + (os.pathsep + path if path else "")
    # one BLAS thread per worker process
    env.setdefault("OMP_NUM_THREADS", "1")
    env.setdefault("OPENBLAS_NUM_THREADS", "1")
    env.setdefault("MKL_NUM_THREADS", "1")
    return env


class _WorkerHandle:
    """One worker process plus the pool thread that feeds it."""

    def __init__(self, index: int, pool: "WorkerPoolExecutor"):
        self.index = index
        self.pool = pool
        self.lock = threading.Lock()
        self.process: Optional[subprocess.Popen] = None
        self.current: Optional[_Job] = None
        self.thread = threading.Thread(target=self._serve, name=f"tapsb-worker-{index}",
                                       daemon=True)

    @property
    def pid(self) -> Optional[int]:
        return self.process.pid if self.process else None

    def alive(self) -> bool:
        return self.process is not None and self.process.poll() is None

    def spawn(self) -> None:
        try:
            self.process = subprocess.Popen(
                [sys.executable, "-m", "tapsb.workers", str(self.index)],
                stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                env=_worker_env(), close_fds=True,
            )
        except OSError as exc:
            raise WorkerStartupError(self.index, str(exc)) from exc

    def handshake(self) -> None:
        try:
            message = wire.read_frame(self.process.stdout)
        except (EOFError, OSError, WireError) as exc:
            self.terminate()
            raise WorkerStartupError(self.index, f"no REGISTER message ({exc})") from exc
        if not isinstance(message, list) or message[:1] != ["REGISTER"]:
            self.terminate()
            raise WorkerStartupError(self.index, f"unexpected message {message!r}")
        _, index, pid, names = message
        if names != self.pool.registry:
            self.terminate()
            missing = sorted(set(self.pool.registry) ^ set(names))
            raise WorkerStartupError(self.index, f"task registry differs: {missing}")
        try:
            wire.write_frame(self.process.stdin, ["PING", index])
            reply = wire.read_frame(self.process.stdout)
        except (EOFError, OSError, WireError) as exc:
            self.terminate()
            raise WorkerStartupError(self.index, f"no PONG ({exc})") from exc
        if reply != ["PONG", index]:
            self.terminate()
            raise WorkerStartupError(self.index, f"bad PONG {reply!r}")
        logger.debug(f"worker {self.index} registered as pid {pid}")

    def respawn(self) -> None:
        self.terminate()
        self.spawn()
        self.handshake()
        logger.warning(f"worker {self.index} replaced (pid {self.pid})")

    def terminate(self) -> None:
        process = self.process
        if process is None:
            return
        if process.poll() is None:
            process.kill()
        process.wait()
        for stream in (process.stdin, process.stdout):
            try:
                stream.close()
            except OSError:
                pass

    def kill(self) -> None:
        with self.lock:
            if self.process is not None and self.process.poll() is None:
                self.process.kill()
                self.process.wait()
            logger.info(f"worker {self.index} killed")
            if self.current is None and not self.pool.stopping:
                self.respawn()

    def _serve(self) -> None:
        while True:
            job = self.pool._queue.get()
            if job is _STOP:
                break
            if self.pool.stopping:
                job.future.set_exception(WorkerFailure("worker pool stopped before the task ran",
                                                       task_id=job.task_id))
                continue
            if not job.future.set_running_or_notify_cancel():
                continue
            with self.lock:
                if not self.alive():
                    try:
                        self.respawn()
                    except WorkerStartupError as exc:
                        job.future.set_exception(WorkerFailure(str(exc), task_id=job.task_id))
                        continue
                self.current = job
                stdin, stdout = self.process.stdin, self.process.stdout
            try:
                stdin.write(job.message)
                stdin.flush()
                reply = wire.read_frame(stdout)
            except (EOFError, OSError, WireError) as exc:
                self._lost(job, exc)
                continue
            with self.lock:
                self.current = None
            self._deliver(job, reply)
        self._close()

    def _lost(self, job: _Job, exc: Exception) -> None:
        code = self.process.poll() if self.process else None
        logger.warning(f"worker {self.index} lost while running task {job.task_id or job.uid}: "
                       f"{exc} (exit code {code})")
        job.future.set_exception(WorkerFailure(
            f"worker {self.index} died while running the task", task_id=job.task_id))
        with self.lock:
            self.current = None
            if not self.pool.stopping:
                try:
                    self.respawn()
                except WorkerStartupError as startup:
                    logger.error(str(startup))

    def _deliver(self, job: _Job, reply: Any) -> None:
        if not isinstance(reply, list) or len(reply) != 4 or reply[0] != "RESULT" \
                or reply[1] != job.uid:
            job.future.set_exception(WorkerFailure(
                f"worker {self.index} sent an unexpected reply", task_id=job.task_id))
            return
        _, _, ok, payload = reply
        if ok:
            job.future.set_result(payload)
        else:
            kind, message = payload
            job.future.set_exception(failure_from_kind(kind, message, task_id=job.task_id))

    def _close(self) -> None:
        with self.lock:
            process = self.process
            if process is None:
                return
            try:
                process.stdin.close()
            except OSError:
                pass
        try:
            process.wait(timeout=5)
        except subprocess.TimeoutExpired:
            process.kill()
            process.wait()


class WorkerPoolExecutor(Executor):
    kind = "worker-pool"

    def __init__(self, workers: int, drain_timeout: float = DEFAULT_DRAIN_TIMEOUT):
        if workers < 1:
            raise ValueError("worker pool needs at least one worker")
        self.registry = builtin_task_names()
        self.drain_timeout = drain_timeout
        self.stopping = False
        self._closed = False
        self._lock = threading.Lock()
        self._queue: queue.Queue = queue.Queue()
        self._handles = [_WorkerHandle(i, self) for i in range(workers)]
        start = time.perf_counter()
        try:
            for handle in self._handles:
                handle.spawn()
            for handle in self._handles:
                handle.handshake()
        except WorkerStartupError:
            for handle in self._handles:
                handle.terminate()
            raise
        for handle in self._handles:
            handle.thread.start()
        logger.info(f"started {workers} worker processes in "
                    f"{time.perf_counter() - start:.2f}s")

    @property
    def workers(self) -> int:
        return len(self._handles)

    @property
    def pids(self) -> List[Optional[int]]:
        return [handle.pid for handle in self._handles]

    def submit(self, name, args, task_id=None):
        get_task(name)
        uid = task_id or str(uuid.uuid4())
        try:
            message = wire.encode(["TASK", uid, name, list(args)])
        except WireError as exc:
            raise SubmissionError(f"cannot serialize arguments of {name}: {exc}") from exc
        future = Future()
        with self._lock:
            if self._closed:
                raise LifecycleError("worker pool is shut down")
            self._queue.put(_Job(uid, task_id, message, future))
        return future

    def worker_running(self, task_id: str) -> Optional[int]:
        """Index of the worker currently executing ``task_id``, if any."""
        for handle in self._handles:
            job = handle.current
            if job is not None and job.task_id == task_id:
                return handle.index
        return None

    def kill_worker(self, index: int) -> None:
        """Terminate a worker abruptly; the pool replaces it."""
        if not isinstance(index, int) or not 0 <= index < len(self._handles):
            raise ValueError(f"worker index {index!r} out of range 0..{len(self._handles) - 1}")
        self._handles[index].kill()

    def shutdown(self, wait=True):
        self.stop(wait=wait)

    def stop(self, wait: bool = True, drain_timeout: Optional[float] = None) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
        timeout = self.drain_timeout if drain_timeout is None else drain_timeout
        if not wait:
            timeout = 0.0
            self.stopping = True
        for _ in self._handles:
            self._queue.put(_STOP)
        deadline = time.monotonic() + timeout
        for handle in self._handles:
            handle.thread.join(max(0.0, deadline - time.monotonic()))
        if any(handle.thread.is_alive() for handle in self._handles):
            logger.warning(f"worker pool did not drain within {timeout}s; killing workers")
            self.stopping = True
            for handle in self._handles:
                handle.terminate()
            for handle in self._handles:
                handle.thread.join(5)
            self._fail_queued()
        logger.info("worker pool stopped")

    def _fail_queued(self) -> None:
        while True:
            try:
                job = self._queue.get_nowait()
            except queue.Empty:
                return
            if job is not _STOP:
                job.future.set_exception(WorkerFailure("worker pool stopped before the task ran",
                                                       task_id=job.task_id))


def worker_start(workers: int, drain_timeout: float = DEFAULT_DRAIN_TIMEOUT) -> WorkerPoolExecutor:
    return WorkerPoolExecutor(workers, drain_timeout=drain_timeout)


def worker_stop(executor: WorkerPoolExecutor, drain_timeout: Optional[float] = None) -> None:
    executor.stop(wait=True, drain_timeout=drain_timeout)


def _error_kind(exc: BaseException) -> str:
    if isinstance(exc, TaskFailure):
        return exc.kind
    return type(exc).__name__


def worker_main(index: int) -> None:
    """Entry point of a worker process."""
    # stdout carries frames only; stray prints go to stderr
    out = os.fdopen(os.dup(sys.stdout.fileno()), "wb")
    os.dup2(sys.stderr.fileno(), sys.stdout.fileno())
    sys.stdout = sys.stderr
    inp = sys.stdin.buffer

    load_builtin_tasks()
    wire.write_frame(out, ["REGISTER", index, os.getpid(), task_names()])
    while True:
        try:
            message = wire.read_frame(inp)
        except EOFError:
            break
        kind = message[0]
        if kind == "PING":
            wire.write_frame(out, ["PONG", message[1]])
            continue
        if kind != "TASK":
            logger.error(f"worker {index} ignoring message {kind!r}")
            continue
        _, uid, name, args = message
        try:
            reply = ["RESULT", uid, True, get_task(name)(*args)]
            data = wire.encode(reply)
        except Exception as exc:
            data = wire.encode(["RESULT", uid, False, [_error_kind(exc), str(exc)]])
        out.write(data)
        out.flush()


if __name__ == "__main__":
    logging.basicConfig(level=os.getenv("TAPSB_LOG_LEVEL", "WARNING"), stream=sys.stderr)
    worker_main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
