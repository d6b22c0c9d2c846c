"""Small shared helpers."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

__all__ = ["parallel_map"]


def parallel_map(fn, payloads, n_jobs=1):
    """Map fn over payloads, optionally across processes.

    Results come back in payload order regardless of scheduling, so callers
    that derive per-payload RNG substreams get order-independent,
    reproducible aggregation for free.
    """
    payloads = list(payloads)
    if n_jobs is None or n_jobs <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    workers = min(n_jobs, len(payloads))
    chunk = max(1, len(payloads) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, payloads, chunksize=chunk))
