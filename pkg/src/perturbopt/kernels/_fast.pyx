# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of the batch hot-loop kernels in _ref.py.

Floating-point operations run in the same order as the reference, so the
two backends agree bit for bit.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def perm_ranks(theta):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t k = th.shape[0], d = th.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ranks = np.empty((k, d), dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.empty(d, dtype=np.int64)
    cdef Py_ssize_t i, a, b, j
    cdef double key
    cdef long long idx
    for i in range(k):
        for a in range(d):
            order[a] = a
        # stable insertion sort, ascending in theta
        for a in range(1, d):
            idx = order[a]
            key = th[i, idx]
            b = a - 1
            while b >= 0 and th[i, order[b]] > key:
                order[b + 1] = order[b]
                b -= 1
            order[b + 1] = idx
        for a in range(d):
            ranks[i, order[a]] = <double>(a + 1)
    return ranks


def scheduling_total_completion(theta, release, processing):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] r = np.ascontiguousarray(release, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p = np.ascontiguousarray(processing, dtype=np.float64)
    cdef Py_ssize_t k = th.shape[0], d = th.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] total = np.zeros(k, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.empty(d, dtype=np.int64)
    cdef Py_ssize_t i, a, b
    cdef double key, clock, tot
    cdef long long idx, j
    for i in range(k):
        for a in range(d):
            order[a] = a
        # stable insertion sort, descending in theta
        for a in range(1, d):
            idx = order[a]
            key = th[i, idx]
            b = a - 1
            while b >= 0 and th[i, order[b]] < key:
                order[b + 1] = order[b]
                b -= 1
            order[b + 1] = idx
        clock = 0.0
        tot = 0.0
        for a in range(d):
            j = order[a]
            if clock < r[j]:
                clock = r[j]
            clock = clock + p[j]
            tot = tot + clock
        total[i] = tot
    return total


def dag_longest_path(theta, tails, heads, source, sink, n_nodes):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] tl = np.ascontiguousarray(tails, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] hd = np.ascontiguousarray(heads, dtype=np.int64)
    cdef Py_ssize_t k = th.shape[0], m = th.shape[1]
    cdef Py_ssize_t n = n_nodes
    cdef long long src = source, snk = sink
    cdef cnp.ndarray[cnp.float64_t, ndim=1] values = np.empty(k, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y = np.zeros((k, m), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] best = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] pred = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t i, e
    cdef long long node
    cdef double cand, neg_inf = -np.inf
    for i in range(k):
        for e in range(n):
            best[e] = neg_inf
            pred[e] = -1
        best[src] = 0.0
        for e in range(m):
            cand = best[tl[e]] + th[i, e]
            if cand > best[hd[e]]:
                best[hd[e]] = cand
                pred[hd[e]] = e
        values[i] = best[snk]
        node = snk
        while node != src:
            e = pred[node]
            y[i, e] = 1.0
            node = tl[e]
    return values, y
