import itertools

import numpy as np
import pytest

from perturbopt import kernels
from perturbopt.kernels import _ref

try:
    from perturbopt.kernels import _fast
except ImportError:
    _fast = None

needs_ext = pytest.mark.skipif(_fast is None, reason="compiled extension not built")


def random_batches(rng, d, k=200, ties=True):
    theta = rng.standard_normal((k, d))
    if ties:
        theta[: k // 4] = rng.integers(-1, 2, (k // 4, d)).astype(float)
    return theta


def test_perm_ranks_matches_brute_force():
    rng = np.random.default_rng(0)
    theta = random_batches(rng, 5, k=50)
    ranks = kernels.perm_ranks(theta)
    for row, y in zip(theta, ranks):
        best = max(
            sum(p[i] * row[i] for i in range(5))
            for p in itertools.permutations(range(1, 6))
        )
        assert float(y @ row) == pytest.approx(best, rel=1e-12, abs=1e-12)
        assert sorted(y.tolist()) == [1.0, 2.0, 3.0, 4.0, 5.0]


def test_scheduling_cost_hand_examples():
    release = np.array([0.0, 0.0])
    processing = np.array([1.0, 2.0])
    # priority (2,1): job 1 first -> C = 1, 3 -> 4
    assert kernels.scheduling_total_completion(
        np.array([[2.0, 1.0]]), release, processing
    )[0] == pytest.approx(4.0)
    # priority (1,2): job 2 first -> C = 2, 3 -> 5
    assert kernels.scheduling_total_completion(
        np.array([[1.0, 2.0]]), release, processing
    )[0] == pytest.approx(5.0)


def test_scheduling_cost_with_release_gap():
    # one job released late: machine idles
    release = np.array([0.0, 5.0])
    processing = np.array([1.0, 1.0])
    cost = kernels.scheduling_total_completion(
        np.array([[2.0, 1.0]]), release, processing
    )[0]
    # C1 = 1, C2 = max(1, 5) + 1 = 6 -> 7
    assert cost == pytest.approx(7.0)


def test_dag_longest_path_matches_enumeration():
    # diamond: 0->1->3, 0->2->3, 0->3
    tails = np.array([0, 0, 1, 2, 0], dtype=np.int64)
    heads = np.array([1, 2, 3, 3, 3], dtype=np.int64)
    rng = np.random.default_rng(1)
    theta = rng.standard_normal((100, 5))
    values, y = kernels.dag_longest_path(theta, tails, heads, 0, 3, 4)
    paths = [[0, 2], [1, 3], [4]]
    for k in range(100):
        best = max(sum(theta[k, e] for e in p) for p in paths)
        assert values[k] == pytest.approx(best)
        chosen = [e for e in range(5) if y[k, e] == 1.0]
        assert sorted(chosen) in [sorted(p) for p in paths]
        assert sum(theta[k, e] for e in chosen) == pytest.approx(best)


@needs_ext
def test_backends_bit_identical():
    rng = np.random.default_rng(2)
    for d in (2, 4, 7):
        theta = random_batches(rng, d, k=500)
        assert np.array_equal(_ref.perm_ranks(theta), _fast.perm_ranks(theta))
        release = rng.random(d)
        processing = rng.random(d) + 0.1
        a = _ref.scheduling_total_completion(theta, release, processing)
        b = _fast.scheduling_total_completion(theta, release, processing)
        assert np.array_equal(a, b)  # bitwise

    tails = np.array([0, 0, 1, 2, 0], dtype=np.int64)
    heads = np.array([1, 2, 3, 3, 3], dtype=np.int64)
    theta = random_batches(rng, 5, k=500)
    va, ya = _ref.dag_longest_path(theta, tails, heads, 0, 3, 4)
    vb, yb = _fast.dag_longest_path(theta, tails, heads, 0, 3, 4)
    assert np.array_equal(va, vb)
    assert np.array_equal(ya, yb)


def test_backend_reports_name():
    assert kernels.backend() in ("cython", "numpy")
