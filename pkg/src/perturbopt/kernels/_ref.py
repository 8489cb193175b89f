"""Pure numpy reference implementation of the batch hot-loop kernels.

The compiled twin in _fast.pyx performs the identical floating-point
operations in the identical order, so both backends return bit-identical
results; tests assert this.
"""

from __future__ import annotations

import numpy as np


def perm_ranks(theta: np.ndarray) -> np.ndarray:
    """Ascending ranks per row: the permutahedron oracle vertex.

    theta: (K, d).  Returns (K, d) float64 with entries 1..d; the entry j
    gets rank r when theta[j] is the r-th smallest (ties broken by index).
    """
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    k, d = theta.shape
    order = np.argsort(theta, axis=1, kind="stable")
    ranks = np.empty((k, d), dtype=np.float64)
    rows = np.arange(k)[:, None]
    ranks[rows, order] = np.arange(1, d + 1, dtype=np.float64)[None, :]
    return ranks


def scheduling_total_completion(
    theta: np.ndarray, release: np.ndarray, processing: np.ndarray
) -> np.ndarray:
    """Total completion time of the schedule induced by theta, per row.

    Jobs run in decreasing theta order (score = priority; ties by index).
    Completion recursion: C = max(C_prev, r_j) + p_j; returns sum of C.
    """
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    release = np.asarray(release, dtype=np.float64)
    processing = np.asarray(processing, dtype=np.float64)
    k, d = theta.shape
    order = np.argsort(-theta, axis=1, kind="stable")
    clock = np.zeros(k)
    total = np.zeros(k)
    for pos in range(d):
        j = order[:, pos]
        clock = np.maximum(clock, release[j]) + processing[j]
        total = total + clock
    return total


def dag_longest_path(
    theta: np.ndarray,
    tails: np.ndarray,
    heads: np.ndarray,
    source: int,
    sink: int,
    n_nodes: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Longest source->sink path per row of theta over a DAG.

    Nodes must be numbered 0..n_nodes-1 in topological order and arcs
    sorted by head.  Returns (values (K,), indicators (K, m) float64).
    Ties keep the earliest arc in the given order.
    """
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    k, m = theta.shape
    best = np.full((k, n_nodes), -np.inf)
    best[:, source] = 0.0
    pred = np.full((k, n_nodes), -1, dtype=np.int64)
    for e in range(m):
        t, h = tails[e], heads[e]
        cand = best[:, t] + theta[:, e]
        mask = cand > best[:, h]
        best[mask, h] = cand[mask]
        pred[mask, h] = e
    values = best[:, sink].copy()
    y = np.zeros((k, m))
    node = np.full(k, sink, dtype=np.int64)
    rows = np.arange(k)
    for _ in range(n_nodes):
        active = node != source
        if not np.any(active):
            break
        e = pred[rows[active], node[active]]
        y[rows[active], e] = 1.0
        node[active] = tails[e]
    return values, y
