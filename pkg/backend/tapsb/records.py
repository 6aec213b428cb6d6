"""Task record sinks and the record loader.

The JSON-lines sink appends one object per line through a single O_APPEND
descriptor; each record is written with one os.write call, so lines from
concurrent writers never interleave.
"""
import json
import logging
import os
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import List, Optional, Union

from pydantic import ValidationError

from .errors import LifecycleError, RecordParseError
from .schemas import RecordSinkSpec, TaskRecord

logger = logging.getLogger(__name__)

RECORDS_FILE = "tasks.jsonl"
RECORDS_DB = "tasks.db"


class RecordLogger(ABC):
    @abstractmethod
    def log(self, record: TaskRecord) -> None:
        ...

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


class JSONRecordLogger(RecordLogger):
    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fd: Optional[int] = os.open(
            self.path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
        self._lock = threading.Lock()
        self.count = 0

    def log(self, record):
        line = (record.model_dump_json() + "\n").encode("utf-8")
        with self._lock:
            if self._fd is None:
                raise LifecycleError(f"record sink {self.path} is closed")
            os.write(self._fd, line)
            self.count += 1

    def close(self):
        with self._lock:
            if self._fd is not None:
                os.close(self._fd)
                self._fd = None


class SQLRecordLogger(JSONRecordLogger):
    """JSON-lines sink that also stores every record in a SQLite database."""

    def __init__(self, path: Union[str, Path], db_path: Union[str, Path]):
        super().__init__(path)
        from .database import database_url, init_database
        self.db_path = Path(db_path)
        self.engine, self.SessionLocal = init_database(database_url(self.db_path))

    def log(self, record):
        from .models import TaskRecordRow
        super().log(record)
        fields = record.model_dump()
        fields["parents"] = json.dumps(fields["parents"])
        db = self.SessionLocal()
        try:
            db.add(TaskRecordRow(**fields))
            db.commit()
        except Exception as e:
            db.rollback()
            logger.error(f"Failed to store record {record.task_id}: {e}")
            raise
        finally:
            db.close()

    def close(self):
        super().close()
        self.engine.dispose()


class NullRecordLogger(RecordLogger):
    """Discards records; used to measure engine overhead without I/O."""

    def __init__(self):
        self._closed = False
        self.count = 0

    def log(self, record):
        if self._closed:
            raise LifecycleError("record sink is closed")
        self.count += 1

    def close(self):
        self._closed = True


def build_record_sink(spec: RecordSinkSpec, run_dir: Optional[Union[str, Path]] = None
                      ) -> RecordLogger:
    if spec.kind == "null":
        return NullRecordLogger()
    base = Path(run_dir) if run_dir is not None else Path.cwd()
    path = Path(spec.path) if spec.path else base / RECORDS_FILE
    if spec.kind == "sqlite":
        return SQLRecordLogger(path, path.with_name(RECORDS_DB))
    return JSONRecordLogger(path)


def record_log(sink: RecordLogger, record: TaskRecord) -> None:
    sink.log(record)


def load_records(path: Union[str, Path]) -> List[TaskRecord]:
    """Parse a tasks.jsonl file, preserving order."""
    records = []
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(TaskRecord.model_validate_json(line))
            except ValidationError as exc:
                raise RecordParseError(str(path), number, exc.errors()[0]["msg"]) from exc
    return records


record_load = load_records
