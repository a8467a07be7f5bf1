"""Bounded fan-out of independent solves and simulations."""

import asyncio
import sys
import time
from typing import Callable, List, Sequence, TypeVar

T = TypeVar("T")


async def _run_all(tasks: Sequence[Callable[[], T]], jobs: int) -> List[T]:
    gate = asyncio.Semaphore(jobs)

    async def one(task: Callable[[], T]) -> T:
        async with gate:
            return await asyncio.to_thread(task)

    return await asyncio.gather(*(one(t) for t in tasks))


def run_parallel(tasks: Sequence[Callable[[], T]], jobs: int = 1, label: str = "tasks") -> List[T]:
    """
    Run blocking callables with at most ``jobs`` in flight.

    Args:
        tasks: Zero-argument callables
        jobs: Worker cap; 1 runs them in order on the calling thread
        label: Name used in the progress lines

    Returns:
        Results in submission order, whatever order the tasks finished in
    """
    tasks = list(tasks)
    if not tasks:
        return []
    jobs = max(1, int(jobs))
    print(f"[parallel] Start: {label} count={len(tasks)} jobs={jobs}", file=sys.stderr)
    start = time.perf_counter()
    if jobs == 1 or len(tasks) == 1:
        results = [t() for t in tasks]
    else:
        results = asyncio.run(_run_all(tasks, jobs))
    print(
        f"[parallel] Complete: {label} count={len(tasks)} elapsed={time.perf_counter() - start:.2f}s",
        file=sys.stderr,
    )
    return list(results)
