"""Tiled Cholesky factorization.

The input A = (B + Bᵀ) + n·I is split into square tiles (edge tiles may be
ragged) and factored with the right-looking algorithm, one task per tile
kernel. Dependencies between kernels are expressed only by passing futures.

Kernels use explicit loops with np.einsum for the inner products, so results
do not depend on the BLAS library or its thread count and L is bit-identical
across executors.
"""
import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import Field, model_validator

from ..errors import NumericalError
from ..registry import register_app, task
from ..schemas import AppConfig
from . import App

logger = logging.getLogger(__name__)


@dataclass
class TileMatrix:
    n: int
    b: int
    tiles: List[List[np.ndarray]]

    @property
    def t(self) -> int:
        return len(self.tiles)

    def tile(self, i: int, j: int) -> np.ndarray:
        return self.tiles[i][j]

    def assemble(self) -> np.ndarray:
        return np.block(self.tiles)

    @classmethod
    def from_dense(cls, a: np.ndarray, b: int) -> "TileMatrix":
        n = a.shape[0]
        edges = tile_edges(n, b)
        tiles = [[np.ascontiguousarray(a[r0:r1, c0:c1]) for c0, c1 in edges]
                 for r0, r1 in edges]
        return cls(n=n, b=b, tiles=tiles)


def tile_edges(n: int, b: int) -> List[Tuple[int, int]]:
    return [(start, min(start + b, n)) for start in range(0, n, b)]


def tile_count(n: int, b: int) -> int:
    return math.ceil(n / b)


def expected_task_count(t: int) -> int:
    return t + t * (t - 1) + t * (t - 1) * (t - 2) // 6


def generate_matrix(n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("matrix side length must be at least 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    b = rng.random((n, n))
    return (b + b.T) + n * np.eye(n)


def generate_input(n: int, seed: int, block: Optional[int] = None) -> TileMatrix:
    return TileMatrix.from_dense(generate_matrix(n, seed), block or n)


@task("potrf")
def potrf(tile: np.ndarray) -> np.ndarray:
    """Cholesky–Banachiewicz: fill L one row at a time."""
    m = tile.shape[0]
    lower = np.zeros((m, m))
    for i in range(m):
        for j in range(i):
            s = np.einsum("k,k->", lower[i, :j], lower[j, :j])
            lower[i, j] = (tile[i, j] - s) / lower[j, j]
        pivot = tile[i, i] - np.einsum("k,k->", lower[i, :i], lower[i, :i])
        if not pivot > 0:
            raise NumericalError(f"non-positive pivot {pivot!r} at row {i}")
        lower[i, i] = math.sqrt(pivot)
    return lower


@task("trsm")
def trsm(l_kk: np.ndarray, a_ik: np.ndarray) -> np.ndarray:
    """Solve X·l_kkᵀ = a_ik by forward substitution over columns of X."""
    cols = l_kk.shape[0]
    x = np.zeros(a_ik.shape)
    for j in range(cols):
        d = l_kk[j, j]
        if d == 0:
            raise NumericalError(f"zero diagonal at column {j}")
        s = np.einsum("rk,k->r", x[:, :j], l_kk[j, :j])
        x[:, j] = (a_ik[:, j] - s) / d
    return x


@task("syrk")
def syrk(a_ii: np.ndarray, l_ik: np.ndarray) -> np.ndarray:
    return a_ii - np.einsum("ik,jk->ij", l_ik, l_ik)


@task("gemm")
def gemm(c_ij: np.ndarray, l_ik: np.ndarray, l_jk: np.ndarray) -> np.ndarray:
    return c_ij - np.einsum("ik,jk->ij", l_ik, l_jk)


def submit_cholesky(engine, a: TileMatrix) -> Dict[Tuple[int, int], object]:
    """Submit the right-looking task graph; returns the future of each lower tile."""
    t = a.t
    tiles: Dict[Tuple[int, int], object] = {
        (i, j): a.tile(i, j) for i in range(t) for j in range(i + 1)
    }
    for k in range(t):
        tiles[k, k] = engine.submit(potrf, tiles[k, k])
        for i in range(k + 1, t):
            tiles[i, k] = engine.submit(trsm, tiles[k, k], tiles[i, k])
        for i in range(k + 1, t):
            tiles[i, i] = engine.submit(syrk, tiles[i, i], tiles[i, k])
            for j in range(k + 1, i):
                tiles[i, j] = engine.submit(gemm, tiles[i, j], tiles[i, k], tiles[j, k])
    return tiles


def run_cholesky(engine, config: "CholeskyConfig") -> TileMatrix:
    a = generate_input(config.n, config.seed, config.block)
    tiles = submit_cholesky(engine, a)
    edges = tile_edges(a.n, a.b)
    grid = []
    for i, (r0, r1) in enumerate(edges):
        row = []
        for j, (c0, c1) in enumerate(edges):
            if j > i:
                row.append(np.zeros((r1 - r0, c1 - c0)))
            else:
                row.append(tiles[i, j].result())
        grid.append(row)
    return TileMatrix(n=a.n, b=a.b, tiles=grid)


def reconstruction_error(lower: np.ndarray, a: np.ndarray) -> float:
    return float(np.linalg.norm(lower @ lower.T - a) / np.linalg.norm(a))


class CholeskyApp(App):
    def __init__(self, config: "CholeskyConfig"):
        self.config = config

    def run(self, engine, run_dir: Path):
        config = self.config
        t = tile_count(config.n, config.block)
        logger.info(f"factoring a {config.n}x{config.n} matrix in {t}x{t} tiles "
                    f"({expected_task_count(t)} tasks)")
        lower = run_cholesky(engine, config).assemble()
        error = reconstruction_error(lower, generate_matrix(config.n, config.seed))
        logger.info(f"reconstruction error {error:.3e}")
        return {
            "n": config.n,
            "block": config.block,
            "tiles": t,
            "expected_tasks": expected_task_count(t),
            "reconstruction_error": error,
            "l_sha256": hashlib.sha256(np.ascontiguousarray(lower).tobytes()).hexdigest(),
        }


@register_app("cholesky")
class CholeskyConfig(AppConfig):
    n: int = Field(1000, ge=1)
    block: int = Field(100, ge=1)

    @model_validator(mode="after")
    def check_block(self):
        if self.block > self.n:
            raise ValueError("block must not exceed n")
        return self

    def get_app(self):
        return CholeskyApp(self)
