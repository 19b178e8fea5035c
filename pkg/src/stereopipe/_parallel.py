"""Row-band scheduling for the nogil kernels.

Every kernel writes a disjoint band of rows, so results never depend on the
number of workers or on completion order.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable


def row_bands(height: int, threads: int) -> list[tuple[int, int]]:
    threads = max(1, min(threads, height))
    step = -(-height // threads)
    return [(y0, min(height, y0 + step)) for y0 in range(0, height, step)]


def for_rows(kernel: Callable[[int, int], None], height: int, threads: int = 1) -> None:
    """Call ``kernel(y0, y1)`` over disjoint bands covering ``range(height)``."""
    bands = row_bands(height, threads)
    if len(bands) == 1:
        kernel(*bands[0])
        return
    with ThreadPoolExecutor(max_workers=len(bands)) as pool:
        for fut in [pool.submit(kernel, y0, y1) for y0, y1 in bands]:
            fut.result()


def run_all(tasks: list[Callable[[], object]], threads: int = 1) -> list[object]:
    """Run independent callables, returning results in submission order."""
    if threads <= 1 or len(tasks) <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
        return [fut.result() for fut in [pool.submit(task) for task in tasks]]
