from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Any, Dict, List, Literal, Optional

ExecutorKind = Literal["serial", "thread-pool", "worker-pool", "latency-sim"]
FilterKind = Literal["never", "always", "min-size", "type-tag"]
TransformerKind = Literal["file", "store"]
RecordSinkKind = Literal["jsonl", "sqlite", "null"]
TaskStatus = Literal["succeeded", "failed"]


class ExecutorSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: ExecutorKind = "serial"
    workers: int = Field(1, ge=1)
    inner: Optional["ExecutorSpec"] = None
    # latency-sim only
    sched_latency: float = Field(0.0, ge=0)
    batch_size: int = Field(32, ge=1)
    bandwidth: Optional[float] = Field(None, gt=0)
    max_payload: Optional[int] = Field(None, ge=0)
    # worker-pool only
    drain_timeout: float = Field(30.0, ge=0)

    @model_validator(mode="after")
    def check_inner(self):
        if self.kind == "latency-sim":
            if self.inner is None:
                raise ValueError("latency-sim requires an inner executor")
            if self.inner.kind == "latency-sim":
                raise ValueError("latency-sim cannot wrap another latency-sim")
        elif self.inner is not None:
            raise ValueError(f"{self.kind} executor does not take an inner executor")
        return self

    @property
    def label(self) -> str:
        if self.kind == "latency-sim":
            return f"latency-sim({self.inner.label})"
        if self.kind == "serial":
            return "serial"
        return f"{self.kind}({self.workers})"

    def get_executor(self):
        from .executors import build_executor
        return build_executor(self)


class FilterSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: FilterKind = "never"
    threshold: int = Field(0, ge=0)
    allowed: List[str] = Field(default_factory=list)

    @classmethod
    def parse(cls, text: str) -> "FilterSpec":
        """Parse the command-line form: never, always, min-size:BYTES,
        type-tag:TAG[,TAG...]."""
        kind, _, argument = text.partition(":")
        if kind == "min-size":
            return cls(kind=kind, threshold=argument or 0)
        if kind == "type-tag":
            return cls(kind=kind, allowed=[t for t in argument.split(",") if t])
        return cls(kind=kind)

    def __str__(self) -> str:
        if self.kind == "min-size":
            return f"min-size:{self.threshold}"
        if self.kind == "type-tag":
            return "type-tag:" + ",".join(self.allowed)
        return self.kind


class TransformerSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: TransformerKind
    data_dir: Optional[str] = None
    address: Optional[str] = None


class RecordSinkSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: RecordSinkKind = "jsonl"
    path: Optional[str] = None


class EngineSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    executor: ExecutorSpec = Field(default_factory=ExecutorSpec)
    transformer: Optional[TransformerSpec] = None
    filter: FilterSpec = Field(default_factory=FilterSpec)
    record_sink: RecordSinkSpec = Field(default_factory=RecordSinkSpec)

    @model_validator(mode="after")
    def check_filter(self):
        if self.transformer is None and self.filter.kind != "never":
            raise ValueError("a filter other than 'never' requires a transformer")
        return self


class TaskRecord(BaseModel):
    task_id: str
    function: str
    parents: List[str] = Field(default_factory=list)
    submitted_at: int
    completed_at: int
    exec_started_at: int
    exec_ended_at: int
    transform_args_us: int = 0
    resolve_args_us: int = 0
    transform_result_us: int = 0
    makespan_us: int
    status: TaskStatus
    error_kind: str = ""
    executor: str
    arg_bytes: int = 0
    result_bytes: int = 0


class AppSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    params: Dict[str, Any] = Field(default_factory=dict)


class RunConfig(BaseModel):
    """Everything needed to reproduce one benchmark invocation."""
    model_config = ConfigDict(extra="forbid")

    app: AppSpec
    executor: ExecutorSpec = Field(default_factory=ExecutorSpec)
    transformer: Optional[TransformerSpec] = None
    filter: FilterSpec = Field(default_factory=FilterSpec)
    record_sink: RecordSinkSpec = Field(default_factory=RecordSinkSpec)
    run_dir: str = "runs"
    seed: int = 0
    repeat: int = Field(1, ge=1)

    @model_validator(mode="after")
    def check_filter(self):
        if self.transformer is None and self.filter.kind != "never":
            raise ValueError("a filter other than 'never' requires a transformer")
        return self

    def engine_spec(self) -> EngineSpec:
        return EngineSpec(executor=self.executor, transformer=self.transformer,
                          filter=self.filter, record_sink=self.record_sink)


class AppConfig(BaseModel):
    """Base class for registered application configurations.

    Subclasses declare their parameters as fields and return the runnable
    application from get_app(). The run seed is injected by the harness.
    """
    model_config = ConfigDict(extra="forbid")

    seed: int = 0

    def get_app(self):
        raise NotImplementedError

    def saved_params(self) -> Dict[str, Any]:
        """Parameters as written to config.json; the run seed is stored separately."""
        return self.model_dump(exclude={"seed"})


class BenchmarkRow(BaseModel):
    label: str
    metric: str
    unit: str
    rep: int
    value: Optional[float] = None
    run_dir: Optional[str] = None
    failed: bool = False


# Run browser responses

class RunInfo(BaseModel):
    name: str
    app: Optional[str] = None
    executor: Optional[str] = None
    status: Optional[str] = None
    makespan_s: Optional[float] = None
    task_count: Optional[int] = None


class FunctionStats(BaseModel):
    function: str
    count: int
    failed: int
    mean_exec_s: float


class RunStats(BaseModel):
    name: str
    task_count: int
    failed: int
    functions: List[FunctionStats]
