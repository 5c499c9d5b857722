"""Deterministic data-parallel helpers.

Results always come back in input order, so a parallel run is
indistinguishable from a serial one; DEPTHFORGE_THREADS caps the pool.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

from .errors import ConfigError

THREADS_ENV = "DEPTHFORGE_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def worker_count(requested: int | None = None) -> int:
    """Effective worker count: explicit argument, else env cap, else CPUs."""
    if requested is not None:
        if requested < 1:
            raise ConfigError(f"worker count must be >= 1, got {requested}")
        return requested
    raw = os.environ.get(THREADS_ENV)
    if raw is not None:
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        if value < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """Order-preserving map, threaded when more than one worker is allowed."""
    items = list(items)
    count = min(worker_count(workers), max(len(items), 1))
    if count == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=count) as pool:
        return list(pool.map(fn, items))
