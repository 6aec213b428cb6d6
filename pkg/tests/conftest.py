import os
import sys

import pytest

# Add backend to path like the package layout expects
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'backend'))

from tapsb.engine import Engine
from tapsb.executors import SerialExecutor, ThreadPoolExecutor
from tapsb.records import JSONRecordLogger, RECORDS_FILE


def make_executor(kind: str, workers: int = 4):
    if kind == "serial":
        return SerialExecutor()
    if kind == "thread-pool":
        return ThreadPoolExecutor(workers)
    raise ValueError(kind)


@pytest.fixture
def records_path(tmp_path):
    return tmp_path / RECORDS_FILE


@pytest.fixture
def make_engine(records_path):
    """Build engines writing to one tasks.jsonl; all are shut down afterwards."""
    engines = []

    def build(kind: str = "serial", workers: int = 4, **kwargs):
        kwargs.setdefault("record_sink", JSONRecordLogger(records_path))
        engine = Engine(make_executor(kind, workers), **kwargs)
        engines.append(engine)
        return engine

    yield build
    for engine in engines:
        engine.shutdown(wait=True)


@pytest.fixture(params=["serial", "thread-pool"])
def engine(request, make_engine):
    return make_engine(request.param)
