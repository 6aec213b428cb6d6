from sqlalchemy import Column, BigInteger, Integer, String, Text
from .database import Base


class TaskRecordRow(Base):
    __tablename__ = "task_records"

    id = Column(Integer, primary_key=True, index=True)
    task_id = Column(String(36), unique=True, index=True, nullable=False)
    function = Column(String, index=True, nullable=False)
    # JSON list of parent task ids
    parents = Column(Text, default="[]", nullable=False)
    submitted_at = Column(BigInteger, nullable=False)
    completed_at = Column(BigInteger, nullable=False)
    exec_started_at = Column(BigInteger, nullable=False)
    exec_ended_at = Column(BigInteger, nullable=False)
    transform_args_us = Column(BigInteger, default=0, nullable=False)
    resolve_args_us = Column(BigInteger, default=0, nullable=False)
    transform_result_us = Column(BigInteger, default=0, nullable=False)
    makespan_us = Column(BigInteger, nullable=False)
    status = Column(String(16), index=True, nullable=False)
    error_kind = Column(String, default="", nullable=False)
    executor = Column(String, nullable=False)
    arg_bytes = Column(BigInteger, default=0, nullable=False)
    result_bytes = Column(BigInteger, default=0, nullable=False)
