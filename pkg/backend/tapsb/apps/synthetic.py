"""Synthetic workflows built from sleep tasks with configurable data sizes."""
import logging
import threading
import time
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import Field

from ..registry import register_app, task
from ..schemas import AppConfig
from . import App

logger = logging.getLogger(__name__)

Structure = Literal["sequential", "reduce", "bag", "diamond"]


def random_bytes(size: int, seed: int = 0) -> bytes:
    return np.random.Generator(np.random.PCG64(seed)).bytes(size)


@task("sleep_noop")
def sleep_noop(data, sleep: float, output_bytes: int) -> bytes:
    if sleep > 0:
        time.sleep(sleep)
    return random_bytes(output_bytes)


@task("sleep_gather")
def sleep_gather(parts: list, sleep: float, output_bytes: int) -> bytes:
    """Sink of reduce and diamond graphs: waits on every part, then sleeps."""
    if sleep > 0:
        time.sleep(sleep)
    return random_bytes(output_bytes)


def expected_task_count(structure: str, task_count: int) -> int:
    if structure == "reduce":
        return task_count + 1
    if structure == "diamond":
        return task_count + 2
    return task_count


def submit_bag(engine, count: int, args: tuple, outstanding: int) -> List:
    """Keep at most ``outstanding`` tasks in flight, replacing each as it finishes."""
    slots = threading.Semaphore(outstanding)
    futures = []
    for _ in range(count):
        slots.acquire()
        future = engine.submit(sleep_noop, *args)
        future.add_done_callback(lambda _: slots.release())
        futures.append(future)
    return futures


def run_synthetic(engine, config: "SyntheticConfig") -> List:
    """Submit the configured graph and wait for it; returns the terminal futures."""
    data = random_bytes(config.input_bytes, config.seed)
    sleep, out = config.sleep, config.output_bytes
    n = config.task_count

    if config.structure == "sequential":
        current = engine.submit(sleep_noop, data, sleep, out)
        for _ in range(n - 1):
            current = engine.submit(sleep_noop, current, sleep, out)
        terminal = [current]
    elif config.structure == "reduce":
        leaves = [engine.submit(sleep_noop, data, sleep, out) for _ in range(n)]
        terminal = [engine.submit(sleep_gather, leaves, sleep, out)]
    elif config.structure == "diamond":
        source = engine.submit(sleep_noop, data, sleep, out)
        middle = [engine.submit(sleep_noop, source, sleep, out) for _ in range(n)]
        terminal = [engine.submit(sleep_gather, middle, sleep, out)]
    else:
        outstanding = config.outstanding or engine.workers
        terminal = submit_bag(engine, n, (data, sleep, out), outstanding)

    for future in terminal:
        future.result()
    return terminal


class SyntheticApp(App):
    def __init__(self, config: "SyntheticConfig"):
        self.config = config

    def run(self, engine, run_dir: Path):
        config = self.config
        logger.info(f"running {config.structure} workflow of "
                    f"{expected_task_count(config.structure, config.task_count)} tasks")
        run_synthetic(engine, config)
        return {
            "structure": config.structure,
            "expected_tasks": expected_task_count(config.structure, config.task_count),
        }


@register_app("synthetic")
class SyntheticConfig(AppConfig):
    structure: Structure = "bag"
    task_count: int = Field(10, ge=1)
    input_bytes: int = Field(0, ge=0)
    output_bytes: int = Field(0, ge=0)
    sleep: float = Field(0.0, ge=0)
    # bag only: tasks kept in flight, defaults to the executor's worker count
    outstanding: Optional[int] = Field(None, ge=1)

    def get_app(self):
        return SyntheticApp(self)
