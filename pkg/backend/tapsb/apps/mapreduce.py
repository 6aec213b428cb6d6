"""Word-frequency MapReduce over a generated corpus or a directory of text files."""
import logging
import re
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence

import numpy as np
from pydantic import Field, model_validator

from ..registry import register_app, task
from ..schemas import AppConfig
from . import App

logger = logging.getLogger(__name__)

OUTPUT_FILE = "word_counts.txt"

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> List[str]:
    """Lowercase, then split on every non-alphanumeric character."""
    return _TOKEN.findall(text.lower())


def generate_corpus(docs: int, words_per_doc: int, vocab_size: int, seed: int) -> List[str]:
    if min(docs, words_per_doc, vocab_size) < 1:
        raise ValueError("docs, words_per_doc and vocab_size must be at least 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    vocabulary = [f"w{i:06d}" for i in range(vocab_size)]
    picks = rng.integers(0, vocab_size, size=(docs, words_per_doc))
    return [" ".join(vocabulary[i] for i in row) for row in picks]


def list_files(root: str) -> List[str]:
    base = Path(root)
    if not base.is_dir():
        raise FileNotFoundError(f"corpus directory {root} does not exist")
    return [str(p.resolve()) for p in sorted(base.rglob("*")) if p.is_file()]


def shard(items: Sequence, parts: int) -> List[list]:
    """Split into ``parts`` contiguous shards whose sizes differ by at most one."""
    size, extra = divmod(len(items), parts)
    shards, start = [], 0
    for index in range(parts):
        end = start + size + (1 if index < extra else 0)
        shards.append(list(items[start:end]))
        start = end
    return shards


def count_words(texts: Iterable[str]) -> Counter:
    counts = Counter()
    for text in texts:
        counts.update(tokenize(text))
    return counts


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8", errors="replace") as handle:
            return handle.read()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc


@task("map_task")
def map_task(mode: str, items: List[str]) -> Dict[str, int]:
    if mode == "files":
        return dict(count_words(_read(path) for path in items))
    return dict(count_words(items))


@task("reduce_task")
def reduce_task(parts: List[Dict[str, int]]) -> Dict[str, int]:
    total = Counter()
    for part in parts:
        total.update(part)
    return dict(total)


def top_words(counts: Dict[str, int], n: int) -> List[tuple]:
    return sorted(counts.items(), key=lambda item: (-item[1], item[0]))[:n]


def write_counts(path: Path, rows: List[tuple]) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for word, count in rows:
            handle.write(f"{word}\t{count}\n")
    return path


def run_mapreduce(engine, config: "MapReduceConfig", run_dir: Path) -> Path:
    if config.mode == "files":
        items = list_files(config.dir)
    else:
        items = generate_corpus(config.docs, config.words_per_doc, config.vocab, config.seed)
    if config.map_tasks > len(items):
        raise ValueError(f"{config.map_tasks} map tasks for only {len(items)} inputs")

    maps = [engine.submit(map_task, config.mode, part)
            for part in shard(items, config.map_tasks)]
    counts = engine.submit(reduce_task, maps).result()
    return write_counts(Path(run_dir) / OUTPUT_FILE, top_words(counts, config.top))


class MapReduceApp(App):
    def __init__(self, config: "MapReduceConfig"):
        self.config = config

    def run(self, engine, run_dir: Path):
        output = run_mapreduce(engine, self.config, run_dir)
        logger.info(f"top {self.config.top} words written to {output}")
        return {
            "mode": self.config.mode,
            "map_tasks": self.config.map_tasks,
            "expected_tasks": self.config.map_tasks + 1,
            "output": str(output),
        }


@register_app("mapreduce")
class MapReduceConfig(AppConfig):
    mode: Literal["generated", "files"] = "generated"
    docs: int = Field(1000, ge=1)
    words_per_doc: int = Field(100, ge=1)
    vocab: int = Field(1000, ge=1)
    dir: Optional[str] = None
    map_tasks: int = Field(32, ge=1)
    top: int = Field(10, ge=1)

    @model_validator(mode="after")
    def check_mode(self):
        if self.mode == "files" and not self.dir:
            raise ValueError("files mode requires dir")
        if self.mode == "generated" and self.map_tasks > self.docs:
            raise ValueError("map_tasks must not exceed docs")
        return self

    def get_app(self):
        return MapReduceApp(self)
