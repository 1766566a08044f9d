"""Brute-force nearest-descriptor search.

Exact squared-Euclidean argmin between descriptor columns, chunked over the
query side to bound the distance-matrix memory. Ties resolve to the lowest
candidate index (row-major scan order when candidates are bbox pixels).
"""

from __future__ import annotations

import numpy as np


def nearest_columns(
    queries: np.ndarray, candidates: np.ndarray, chunk: int = 512
) -> tuple[np.ndarray, np.ndarray]:
    """For each query column (L, nq) find the nearest candidate column (L, nc).

    Returns (indices, squared_distances), both of length nq.
    """
    if candidates.shape[1] == 0:
        raise ValueError("empty candidate set")
    nq = queries.shape[1]
    cand_sq = (candidates * candidates).sum(axis=0)
    idx = np.empty(nq, dtype=np.intp)
    dist = np.empty(nq, dtype=np.float64)
    for lo in range(0, nq, chunk):
        q = queries[:, lo : lo + chunk]
        d2 = (q * q).sum(axis=0)[:, None] + cand_sq[None, :] - 2.0 * (q.T @ candidates)
        best = d2.argmin(axis=1)
        idx[lo : lo + chunk] = best
        dist[lo : lo + chunk] = np.maximum(d2[np.arange(best.size), best], 0.0)
    return idx, dist
