"""Benchmark applications.

Each module registers its task functions with ``@task`` and its configuration
model with ``@register_app``; ``AppConfig.get_app()`` builds the runnable App.
"""
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict


class App(ABC):
    @abstractmethod
    def run(self, engine, run_dir: Path) -> Dict[str, Any]:
        """Run to completion on ``engine``; return fields for summary.json."""

    def close(self) -> None:
        pass
