import time
import uuid

import numpy as np
import pytest

from tapsb.engine import Engine, engine_map, engine_submit
from tapsb.errors import (
    DependencyFailure, LifecycleError, RegistrationError, SubmissionError, TaskFailure,
    TaskTimeout,
)
from tapsb.executors import SerialExecutor
from tapsb.records import JSONRecordLogger, load_records
from tapsb.schemas import FilterSpec
from tapsb.store import StoreServer
from tapsb.tasks import add1, const_5
from tapsb.transform import FileTransformer, StoreTransformer, shared_transformers
from tapsb.wire import Identifier


def records_by_id(path):
    return {r.task_id: r for r in load_records(path)}


@pytest.mark.unit
class TestSubmit:
    """Submitting tasks and reading results"""

    def test_identity(self, engine):
        assert engine.submit("identity", 17).result(timeout=5) == 17

    def test_task_ids_are_uuids(self, engine):
        futures = [engine.submit("noop") for _ in range(20)]
        ids = {f.task_id for f in futures}
        assert len(ids) == 20
        for task_id in ids:
            assert str(uuid.UUID(task_id)) == task_id

    def test_function_object_or_name(self, engine):
        first = engine_submit(engine, const_5, [])
        assert engine.submit(add1, first).result(timeout=5) == 6

    def test_single_parent_chain(self, engine, records_path):
        first = engine.submit("const_5")
        second = engine.submit("add1", first)
        assert second.result(timeout=5) == 6
        engine.shutdown()
        records = records_by_id(records_path)
        assert records[second.task_id].parents == [first.task_id]
        assert records[first.task_id].parents == []

    def test_futures_inside_a_list(self, engine, records_path):
        parts = [engine.submit("identity", i) for i in range(3)]
        total = engine.submit("identity", parts)
        assert total.result(timeout=5) == [0, 1, 2]
        engine.shutdown()
        assert records_by_id(records_path)[total.task_id].parents == [p.task_id for p in parts]

    def test_repeated_parent_listed_once(self, engine, records_path):
        parent = engine.submit("const_5")
        child = engine.submit("add", parent, parent)
        assert child.result(timeout=5) == 10
        engine.shutdown()
        assert records_by_id(records_path)[child.task_id].parents == [parent.task_id]

    def test_unknown_function(self, engine):
        with pytest.raises(RegistrationError):
            engine.submit("does_not_exist")

    def test_future_from_another_engine(self, make_engine):
        first = make_engine()
        second = make_engine()
        foreign = first.submit("const_5")
        with pytest.raises(SubmissionError):
            second.submit("add1", foreign)

    def test_repeated_result_is_stable(self, engine):
        future = engine.submit("identity", b"bytes")
        assert future.result(timeout=5) == b"bytes"
        assert future.result() == b"bytes"
        assert future.state == "succeeded"
        assert future.done()


@pytest.mark.unit
class TestMap:
    """engine.map"""

    def test_results_in_order(self, engine):
        futures = engine.map("identity", [(1,), (2,), (3,)])
        assert [f.result(timeout=5) for f in futures] == [1, 2, 3]

    def test_bare_values_are_single_arguments(self, engine):
        futures = engine_map(engine, "add1", [1, 2])
        assert [f.result(timeout=5) for f in futures] == [2, 3]

    def test_empty(self, engine, records_path):
        assert engine.map("identity", []) == []
        engine.shutdown()
        assert load_records(records_path) == []

    def test_one_record_per_task(self, engine, records_path):
        engine.map("sleep_noop", [(b"", 0.0, 0)] * 1000)
        engine.shutdown()
        assert len(load_records(records_path)) == 1000


@pytest.mark.unit
class TestFailures:
    """Failed tasks and their dependents"""

    def test_task_exception(self, engine, records_path):
        future = engine.submit("fail", "boom")
        with pytest.raises(TaskFailure) as excinfo:
            future.result(timeout=5)
        assert excinfo.value.kind == "RuntimeError"
        assert excinfo.value.task_id == future.task_id
        assert future.state == "failed"
        engine.shutdown()
        record = load_records(records_path)[0]
        assert record.status == "failed"
        assert record.error_kind == "RuntimeError"

    def test_dependency_failure(self, engine, records_path):
        parent = engine.submit("fail")
        child = engine.submit("add1", parent)
        grandchild = engine.submit("add1", child)
        error = child.exception(timeout=5)
        assert isinstance(error, DependencyFailure)
        assert error.parent_id == parent.task_id
        assert isinstance(grandchild.exception(timeout=5), DependencyFailure)
        engine.shutdown()
        kinds = {r.task_id: r.error_kind for r in load_records(records_path)}
        assert kinds[parent.task_id] == "RuntimeError"
        assert kinds[child.task_id] == "dependency-failure"
        assert kinds[grandchild.task_id] == "dependency-failure"

    def test_timeout_leaves_task_running(self, make_engine):
        engine = make_engine("thread-pool", 2)
        future = engine.submit("sleep", 0.5, "late")
        with pytest.raises(TaskTimeout):
            future.result(timeout=0)
        assert future.state in ("pending", "running")
        assert future.result(timeout=5) == "late"


@pytest.mark.unit
class TestShutdown:
    """Engine lifecycle"""

    def test_idle_shutdown_is_immediate(self, make_engine):
        engine = make_engine()
        start = time.perf_counter()
        engine.shutdown()
        engine.shutdown()
        assert time.perf_counter() - start < 1

    def test_waits_for_inflight_tasks(self, make_engine, records_path):
        engine = make_engine("thread-pool", 4)
        futures = [engine.submit("sleep", 0.1) for _ in range(10)]
        engine.shutdown(wait=True)
        assert all(f.done() for f in futures)
        assert len(load_records(records_path)) == 10

    def test_submit_after_shutdown(self, make_engine):
        engine = make_engine()
        engine.shutdown()
        with pytest.raises(LifecycleError):
            engine.submit("noop")

    def test_filter_requires_transformer(self):
        with pytest.raises(ValueError):
            Engine(SerialExecutor(), filter=FilterSpec(kind="always"))


@pytest.mark.unit
class TestRecords:
    """Record fields written for every task"""

    def test_timestamps_are_ordered(self, engine, records_path):
        engine.map("sleep", [(0.01,)] * 8)
        engine.submit("fail")
        engine.shutdown()
        records = load_records(records_path)
        assert len(records) == 9
        for r in records:
            assert r.submitted_at <= r.exec_started_at <= r.exec_ended_at <= r.completed_at
            assert r.makespan_us == r.completed_at - r.submitted_at
            assert (r.status == "failed") == bool(r.error_kind)

    def test_record_written_before_future_completes(self, tmp_path):
        sink = JSONRecordLogger(tmp_path / "tasks.jsonl")
        engine = Engine(SerialExecutor(), record_sink=sink)
        seen = []
        future = engine.submit("noop")
        future.add_done_callback(lambda f: seen.append(sink.count))
        engine.shutdown()
        assert seen == [1]

    def test_children_start_after_parents_end(self, make_engine, records_path):
        engine = make_engine("thread-pool", 4)
        source = engine.submit("sleep", 0.02, 1)
        middle = [engine.submit("add1", source) for _ in range(2)]
        sink = engine.submit("add", *middle)
        assert sink.result(timeout=5) == 4
        engine.shutdown()
        records = records_by_id(records_path)
        for r in records.values():
            for parent in r.parents:
                assert records[parent].exec_ended_at <= r.exec_started_at

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_random_graph_parents(self, make_engine, records_path, seed):
        rng = np.random.Generator(np.random.PCG64(seed))
        engine = make_engine("thread-pool", 4)
        futures, expected_parents, expected_values = [], {}, []
        for index in range(40):
            count = int(rng.integers(0, min(index, 4) + 1))
            chosen = []
            if count:
                chosen = [int(i) for i in rng.choice(index, size=count, replace=False)]
            parents = [futures[i] for i in chosen]
            future = engine.submit("add", index, *parents)
            futures.append(future)
            expected_parents[future.task_id] = {p.task_id for p in parents}
            expected_values.append(index + sum(expected_values[i] for i in chosen))
        assert [f.result(timeout=10) for f in futures] == expected_values
        engine.shutdown()
        records = records_by_id(records_path)
        assert {task_id: set(r.parents) for task_id, r in records.items()} == expected_parents
        for r in records.values():
            assert len(r.parents) == len(set(r.parents))
            for parent in r.parents:
                assert records[parent].exec_ended_at <= r.exec_started_at

    def test_executor_kind_recorded(self, make_engine, records_path):
        engine = make_engine("thread-pool", 2)
        engine.submit("noop").result(timeout=5)
        engine.shutdown()
        assert load_records(records_path)[0].executor == "thread-pool"


@pytest.mark.unit
class TestTransformedData:
    """Arguments and results moved through a transformer"""

    def test_large_argument_is_transformed(self, make_engine, records_path, tmp_path):
        transformer = FileTransformer(tmp_path / "data")
        engine = make_engine(transformer=transformer,
                             filter=FilterSpec(kind="min-size", threshold=100))
        payload = np.random.Generator(np.random.PCG64(1)).bytes(1 << 20)
        future = engine.submit("identity", payload)
        assert future.result(timeout=5) == payload
        # the result is moved too and resolved on the client
        assert isinstance(future.value_future.result(), Identifier)
        engine.shutdown()
        record = load_records(records_path)[0]
        assert record.transform_args_us > 0
        assert record.resolve_args_us > 0
        assert record.transform_result_us > 0

    def test_small_values_stay_inline(self, make_engine, records_path, tmp_path):
        engine = make_engine(transformer=FileTransformer(tmp_path / "data"),
                             filter=FilterSpec(kind="min-size", threshold=100))
        future = engine.submit("identity", b"tiny")
        assert future.value_future.result(timeout=5) == b"tiny"
        engine.shutdown()
        assert load_records(records_path)[0].transform_args_us == 0

    def test_transformed_parent_result_feeds_child(self, make_engine, tmp_path):
        engine = make_engine("thread-pool", 2, transformer=FileTransformer(tmp_path / "data"),
                             filter=FilterSpec(kind="always"))
        parent = engine.submit("identity", b"x" * 5000)
        child = engine.submit("identity", parent)
        assert child.result(timeout=5) == b"x" * 5000

    def test_results_unchanged_by_transformer(self, make_engine, tmp_path):
        plain = make_engine()
        moved = make_engine(transformer=FileTransformer(tmp_path / "data"),
                            filter=FilterSpec(kind="always"))
        for size in (0, 1, 100, 10_000):
            payload = np.random.Generator(np.random.PCG64(size)).bytes(size)
            assert moved.submit("identity", payload).result(timeout=5) == \
                plain.submit("identity", payload).result(timeout=5)


@pytest.mark.unit
class TestStoreTransformedData:
    """Values moved through the key-value store"""

    @pytest.fixture
    def store(self):
        with StoreServer() as server:
            yield server

    def test_results_readable_after_shutdown(self, make_engine, store):
        engine = make_engine("thread-pool", 2, transformer=StoreTransformer(store.address),
                             filter=FilterSpec(kind="always"))
        payload = b"x" * 1000
        future = engine.submit("identity", payload)
        engine.shutdown(wait=True)
        assert isinstance(future.value_future.result(), Identifier)
        assert future.result() == payload

    def test_closed_transformer_rejects_submission(self, make_engine, store):
        transformer = StoreTransformer(store.address)
        engine = make_engine(transformer=transformer, filter=FilterSpec(kind="always"))
        transformer.close()
        with pytest.raises(SubmissionError):
            engine.submit("identity", b"payload")

    def test_shared_transformer_released_at_shutdown(self, make_engine, store):
        transformer = StoreTransformer(store.address)
        spec_json = transformer.spec().model_dump_json()
        engine = make_engine(transformer=transformer, filter=FilterSpec(kind="always"))
        assert engine.submit("identity", b"y" * 100).result(timeout=5) == b"y" * 100
        assert spec_json in shared_transformers
        engine.shutdown()
        assert spec_json not in shared_transformers
