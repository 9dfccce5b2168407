"""Seeded random streams and deterministic block-parallel replicate evaluation.

Every replicate ``i`` of an experiment stream ``s`` draws from its own
generator seeded by ``SeedSequence(seed, spawn_key=(s, i))``.  Replicates are
grouped into fixed-size blocks whose boundaries depend only on the replicate
count and the block size, never on the number of workers, so the output of
:func:`map_blocks` is bit-identical for any ``workers``.
"""
from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Callable, Sequence

import numpy as np

MAX_SIDE_ENV = "GFFTIGHT_MAX_SIDE"
DEFAULT_MAX_SIDE = 512


class ResourceCapError(RuntimeError):
    """Raised when a request exceeds the configured grid-size cap."""


def max_side() -> int:
    """Current grid side cap (environment override or the default)."""
    raw = os.environ.get(MAX_SIDE_ENV)
    if raw is None:
        return DEFAULT_MAX_SIDE
    return int(raw)


def check_side(N: int, cap: int | None = None, what: str = "grid") -> None:
    cap = max_side() if cap is None else cap
    if N > cap:
        raise ResourceCapError(f"{what} side {N} exceeds resource cap {cap}")


def replicate_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Generator for replicate ``index`` of experiment stream ``stream``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def replicate_rngs(seed: int, start: int, stop: int, stream: int = 0) -> list[np.random.Generator]:
    return [replicate_rng(seed, i, stream) for i in range(start, stop)]


def block_size_for(cells_per_replicate: int, budget: int = 1 << 22, cap: int = 64) -> int:
    """Replicates per block so that one block holds about ``budget`` floats."""
    return int(max(1, min(cap, budget // max(1, cells_per_replicate))))


def _call(fn: Callable, bounds: tuple[int, int]):
    return fn(*bounds)


def map_blocks(
    fn: Callable[[int, int], np.ndarray],
    reps: int,
    block: int,
    workers: int = 1,
) -> np.ndarray:
    """Evaluate ``fn(start, stop)`` over consecutive replicate blocks.

    ``fn`` must return an array whose leading axis has length ``stop - start``;
    the blocks are concatenated in replicate order.  With ``workers > 1`` the
    blocks are distributed over a process pool (``fn`` must be picklable).
    """
    if reps < 0:
        raise ValueError("reps must be nonnegative")
    bounds = [(s, min(s + block, reps)) for s in range(0, reps, block)]
    if not bounds:
        return np.empty((0,))
    if workers <= 1 or len(bounds) == 1:
        parts: Sequence[np.ndarray] = [fn(a, b) for a, b in bounds]
    else:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
            parts = list(ex.map(partial(_call, fn), bounds))
    return np.concatenate([np.asarray(p) for p in parts], axis=0)
