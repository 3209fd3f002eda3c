"""Order-preserving parallel map.

Results always come back in input order, so any reduction over them is
deterministic no matter how many workers ran. Worker count only changes
wall-clock time, never output bytes.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def parallel_map(fn, items, workers: int = 1) -> list:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
