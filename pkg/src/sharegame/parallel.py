"""Process-level parallel map with deterministic result ordering."""

from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Optional, Sequence

THREADS_ENV_VAR = "SHAREGAME_THREADS"


def resolve_workers(workers: Optional[int] = None) -> int:
    """Explicit argument, then the environment variable, then the core count."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(THREADS_ENV_VAR)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def parallel_map(fn: Callable, tasks: Sequence, workers: Optional[int] = None) -> list:
    """Apply ``fn`` to each task, in processes when workers > 1.

    Results come back in task order, so output is identical for any worker
    count (each task carries its own seed; nothing depends on scheduling).
    """
    workers = resolve_workers(workers)
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    context = multiprocessing.get_context("fork" if os.name == "posix" else "spawn")
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks)),
                             mp_context=context) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (workers * 8))))
