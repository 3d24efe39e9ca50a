# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled inner loops. Results must match ``_kernels_py`` bit for bit."""

import numpy as np

from libc.math cimport INFINITY, sqrt


def nearest_rows(const double[:, ::1] queries, const double[:, ::1] candidates):
    """Index and Euclidean distance of the nearest candidate row per query.

    Ties go to the lowest candidate index. Returns ``(-1, inf)`` for every
    query when there are no candidates.
    """
    cdef Py_ssize_t p = queries.shape[0]
    cdef Py_ssize_t q = candidates.shape[0]
    cdef Py_ssize_t d = queries.shape[1]
    best_idx = np.full(p, -1, dtype=np.intp)
    best_dist = np.full(p, np.inf, dtype=np.float64)
    cdef Py_ssize_t[::1] bi = best_idx
    cdef double[::1] bd = best_dist
    cdef Py_ssize_t i, j, k, arg
    cdef double acc, diff, best
    if q == 0:
        return best_idx, best_dist
    with nogil:
        for i in range(p):
            best = INFINITY
            arg = -1
            for j in range(q):
                acc = 0.0
                for k in range(d):
                    diff = queries[i, k] - candidates[j, k]
                    acc = acc + diff * diff
                    # partial sums only grow, so this can never drop a winner
                    if acc > best:
                        break
                if acc < best:
                    best = acc
                    arg = j
            bi[i] = arg
            bd[i] = sqrt(best)
    return best_idx, best_dist


def triangles_per_node(const Py_ssize_t[::1] indptr, const Py_ssize_t[::1] indices):
    """Number of triangles incident to each node of a CSR graph.

    Neighbour lists must be sorted ascending and free of self loops.
    """
    cdef Py_ssize_t n = indptr.shape[0] - 1
    counts = np.zeros(n, dtype=np.int64)
    cdef long long[::1] tri = counts
    cdef Py_ssize_t u, v, a, b, a_end, b_end, pv, wa, wb
    with nogil:
        for u in range(n):
            for pv in range(indptr[u], indptr[u + 1]):
                v = indices[pv]
                if v <= u:
                    continue
                # common neighbours w > v of u and v
                a = indptr[u]
                a_end = indptr[u + 1]
                b = indptr[v]
                b_end = indptr[v + 1]
                while a < a_end and b < b_end:
                    wa = indices[a]
                    wb = indices[b]
                    if wa <= v:
                        a += 1
                    elif wb <= v:
                        b += 1
                    elif wa < wb:
                        a += 1
                    elif wb < wa:
                        b += 1
                    else:
                        tri[u] += 1
                        tri[v] += 1
                        tri[wa] += 1
                        a += 1
                        b += 1
    return counts
