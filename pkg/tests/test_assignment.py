import itertools
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linear_sum_assignment

from dcqap import Permutation, hungarian, permut_proj
from dcqap.assignment import assignment_value


def brute_assignment(cost):
    n = cost.shape[0]
    return min(cost[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n)))


@pytest.mark.parametrize("n", [3, 4, 5, 6, 7])
def test_optimal_vs_brute_force(n):
    rng = np.random.default_rng(n)
    for _ in range(100):
        cost = rng.standard_normal((n, n)) * 10
        assert assignment_value(cost, hungarian(cost)) == pytest.approx(brute_assignment(cost), abs=1e-9)


def test_identity_cost_gives_derangement():
    pi = hungarian(np.eye(2))
    assert pi == Permutation([1, 0])
    for n in range(2, 7):
        assert assignment_value(np.eye(n), hungarian(np.eye(n))) == 0


def test_ties_are_deterministic_lowest_index():
    assert hungarian(np.zeros((5, 5))) == Permutation.identity(5)
    assert permut_proj(np.full((4, 4), 0.25)) == Permutation.identity(4)
    c = np.zeros((4, 4))
    assert hungarian(c) == hungarian(c.copy())


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        hungarian(np.array([[0.0, np.inf], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        hungarian(np.zeros((2, 3)))


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_projection_idempotent_exhaustive(n):
    for img in itertools.permutations(range(n)):
        pi = Permutation(img)
        assert permut_proj(pi.matrix()) == pi


def test_projection_robust_to_small_noise():
    rng = np.random.default_rng(1)
    for img in itertools.permutations(range(4)):
        pi = Permutation(img)
        assert permut_proj(pi.matrix() + 0.01 * rng.standard_normal((4, 4))) == pi


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(-1e3, 1e3)))
def test_matches_scipy_value(cost):
    r, c = linear_sum_assignment(cost)
    assert assignment_value(cost, hungarian(cost)) == pytest.approx(cost[r, c].sum(), abs=1e-6)


def test_runtime_roughly_cubic():
    rng = np.random.default_rng(0)
    times = {}
    for n in (64, 128):
        cost = rng.random((n, n))
        hungarian(cost)
        t = time.perf_counter()
        for _ in range(3):
            hungarian(cost)
        times[n] = time.perf_counter() - t
    assert times[128] <= 10 * times[64]
