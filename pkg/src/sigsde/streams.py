"""Reproducible random streams.

Paths are drawn in fixed-size blocks; block ``b`` always gets child ``b`` of
the root seed sequence, so a batch is bit-identical however it is split
across workers.
"""

from __future__ import annotations

from collections.abc import Iterator

import numpy as np

DEFAULT_BLOCK = 1024


def block_streams(
    seed: int | np.random.SeedSequence, n_paths: int, block_size: int = DEFAULT_BLOCK
) -> Iterator[tuple[int, int, np.random.Generator]]:
    """Yield ``(start, stop, generator)`` covering paths ``0..n_paths-1``."""
    if n_paths < 0:
        raise ValueError("n_paths must be non-negative")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    n_blocks = -(-n_paths // block_size)
    for b, child in enumerate(root.spawn(n_blocks)):
        start = b * block_size
        yield start, min(start + block_size, n_paths), np.random.Generator(np.random.PCG64(child))


def uniform_grid(T: float = 1.0, n_steps: int = 500) -> np.ndarray:
    if T <= 0 or n_steps < 1:
        raise ValueError("need T > 0 and at least one step")
    return T * np.arange(n_steps + 1) / n_steps


def check_grid(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2:
        raise ValueError("grid needs at least two nodes")
    if grid[0] != 0.0:
        raise ValueError("grid must start at time 0")
    if not np.all(np.diff(grid) > 0):
        raise ValueError("grid must be strictly increasing")
    return grid
