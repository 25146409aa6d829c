"""Bounded worker-pool helper.

Order-preserving map over independent work items. ``workers <= 1`` runs
serially in-process, which is also the path used under pytest; larger
values fan out to a process pool. Results come back in input order, so
seeded pipelines stay deterministic regardless of pool size.
"""

from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, items, workers=1):
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    n_workers = min(workers, len(items))
    chunksize = max(1, len(items) // (4 * n_workers))
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
