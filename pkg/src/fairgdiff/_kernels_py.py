"""Numpy implementations of the compiled kernels.

Distances are accumulated one coordinate at a time so the floating point
result is identical to the compiled loop.
"""
from __future__ import annotations

import numpy as np

_CHUNK = 256


def nearest_rows(queries: np.ndarray, candidates: np.ndarray):
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    candidates = np.ascontiguousarray(candidates, dtype=np.float64)
    p, q = len(queries), len(candidates)
    best_idx = np.full(p, -1, dtype=np.intp)
    best_dist = np.full(p, np.inf)
    if q == 0:
        return best_idx, best_dist
    for start in range(0, p, _CHUNK):
        block = queries[start:start + _CHUNK]
        acc = np.zeros((len(block), q))
        for k in range(queries.shape[1]):
            diff = block[:, k, None] - candidates[None, :, k]
            acc += diff * diff
        arg = np.argmin(acc, axis=1)
        best_idx[start:start + _CHUNK] = arg
        best_dist[start:start + _CHUNK] = np.sqrt(acc[np.arange(len(block)), arg])
    return best_idx, best_dist


def triangles_per_node(indptr: np.ndarray, indices: np.ndarray) -> np.ndarray:
    n = len(indptr) - 1
    adj = np.zeros((n, n), dtype=np.int64)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    adj[rows, indices] = 1
    return ((adj @ adj) * adj).sum(axis=1) // 2
