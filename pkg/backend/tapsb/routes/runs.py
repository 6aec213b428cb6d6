from fastapi import APIRouter, Depends, HTTPException, Query, Request
from pathlib import Path
from typing import List, Optional
import json
import logging
import pandas as pd
from ..errors import RecordParseError
from ..harness import CONFIG_FILE, SUMMARY_FILE
from ..records import RECORDS_FILE, load_records
from ..schemas import FunctionStats, RunInfo, RunStats, TaskRecord, TaskStatus

logger = logging.getLogger(__name__)

router = APIRouter()


def get_run_root(request: Request) -> Path:
    return request.app.state.run_root


def _run_dir(root: Path, name: str) -> Path:
    path = (root / name).resolve()
    if path.parent != root.resolve() or not (path / CONFIG_FILE).is_file():
        raise HTTPException(status_code=404, detail="Run not found")
    return path


def _read_json(path: Path):
    if not path.is_file():
        raise HTTPException(status_code=404, detail=f"{path.name} not found")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        logger.error(f"Unreadable {path}: {e}")
        raise HTTPException(status_code=500, detail=f"{path.name} is not valid JSON")


def _records(run_dir: Path) -> List[TaskRecord]:
    path = run_dir / RECORDS_FILE
    if not path.is_file():
        return []
    try:
        return load_records(path)
    except RecordParseError as e:
        raise HTTPException(status_code=500, detail=str(e))


@router.get("/", response_model=List[RunInfo])
def list_runs(root: Path = Depends(get_run_root)):
    """All run directories, newest first"""
    if not root.is_dir():
        return []
    runs = []
    for path in sorted(root.iterdir(), key=lambda p: p.stat().st_mtime, reverse=True):
        if not (path / CONFIG_FILE).is_file():
            continue
        info = RunInfo(name=path.name)
        summary_path = path / SUMMARY_FILE
        if summary_path.is_file():
            try:
                summary = json.loads(summary_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                summary = {}
            info = RunInfo(
                name=path.name,
                app=summary.get("app"),
                executor=summary.get("executor"),
                status=summary.get("status"),
                makespan_s=summary.get("makespan_s"),
                task_count=summary.get("task_count"),
            )
        runs.append(info)
    return runs


@router.get("/{name}/config")
def get_config(name: str, root: Path = Depends(get_run_root)):
    return _read_json(_run_dir(root, name) / CONFIG_FILE)


@router.get("/{name}/summary")
def get_summary(name: str, root: Path = Depends(get_run_root)):
    return _read_json(_run_dir(root, name) / SUMMARY_FILE)


@router.get("/{name}/records", response_model=List[TaskRecord])
def get_records(
    name: str,
    status: Optional[TaskStatus] = Query(None),
    root: Path = Depends(get_run_root)
):
    """Task records of a run, optionally only succeeded or failed ones"""
    records = _records(_run_dir(root, name))
    if status is not None:
        records = [r for r in records if r.status == status]
    return records


@router.get("/{name}/stats", response_model=RunStats)
def get_stats(name: str, root: Path = Depends(get_run_root)):
    """Task and failure counts plus mean execution time per function"""
    records = _records(_run_dir(root, name))
    if not records:
        return RunStats(name=name, task_count=0, failed=0, functions=[])

    df = pd.DataFrame([r.model_dump() for r in records])
    df["exec_s"] = (df["exec_ended_at"] - df["exec_started_at"]) / 1e6
    df["is_failed"] = df["status"] == "failed"
    grouped = df.groupby("function").agg(
        count=("task_id", "size"),
        failed=("is_failed", "sum"),
        mean_exec_s=("exec_s", "mean"),
    ).reset_index()
    functions = [
        FunctionStats(function=row["function"], count=int(row["count"]),
                      failed=int(row["failed"]), mean_exec_s=float(row["mean_exec_s"]))
        for row in grouped.to_dict("records")
    ]
    return RunStats(name=name, task_count=len(df), failed=int(df["is_failed"].sum()),
                    functions=functions)
