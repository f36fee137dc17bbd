import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcqap import Permutation, QapInstance, bundled_instance, local_search, objective, permut_proj
from dcqap.localsearch import SwapMove, delta_matrix, epalmls_hook, swap_delta
from dcqap.oracle import brute_force

from conftest import perm_vec, random_instance


def recomputed(inst, pi, i, j):
    sw = np.array(pi)
    sw[i], sw[j] = sw[j], sw[i]
    return objective(inst, sw) - objective(inst, pi)


def test_swap_delta_exact_random_triples():
    rng = np.random.default_rng(0)
    worst = 0.0
    for t in range(1000):
        n = int(rng.integers(2, 9))
        inst = random_instance(n, t, low=-5, symmetric=bool(t % 2), with_c=bool(t % 3 == 0))
        pi = rng.permutation(n)
        i, j = rng.choice(n, 2, replace=False)
        worst = max(worst, abs(swap_delta(inst, pi, SwapMove(int(i), int(j))) - recomputed(inst, pi, i, j)))
    assert worst <= 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1), st.booleans(), st.booleans())
def test_delta_matrix_matches_recomputation(n, seed, sym, with_c):
    inst = random_instance(n, seed, low=-5, symmetric=sym, with_c=with_c)
    pi = np.random.default_rng(seed).permutation(n)
    D = delta_matrix(inst, pi)
    for i, j in itertools.combinations(range(n), 2):
        assert D[i, j] == pytest.approx(recomputed(inst, pi, i, j), abs=1e-9)
        assert D[j, i] == pytest.approx(D[i, j], abs=1e-9)


def test_degenerate_identity_data():
    inst = QapInstance("eye", np.eye(4), np.eye(4))
    assert np.all(delta_matrix(inst, np.arange(4)) == 0)


def test_best_move_strictly_improves():
    inst = random_instance(6, 3)
    pi = np.arange(6)
    D = delta_matrix(inst, pi)
    i, j = np.unravel_index(np.argmin(D), D.shape)
    if D[i, j] < 0:
        sw = pi.copy()
        sw[i], sw[j] = sw[j], sw[i]
        assert objective(inst, sw) < objective(inst, pi)


def test_swap_move_validation():
    with pytest.raises(ValueError):
        SwapMove(1, 1)


def test_local_search_from_optimum_unchanged():
    inst = random_instance(6, 1)
    perm, val = brute_force(inst)
    res = local_search(inst, perm)
    assert res.perm == perm and res.value == val and res.local_optimum and res.sweeps == 0


def test_local_search_outputs_are_local_optima():
    rng = np.random.default_rng(4)
    inst = random_instance(6, 8)
    for _ in range(20):
        start = rng.permutation(6)
        res = local_search(inst, start)
        assert res.value <= objective(inst, start)
        assert res.value == objective(inst, res.perm)
        pi = res.perm.array()
        assert all(recomputed(inst, pi, i, j) >= -1e-9 for i, j in itertools.combinations(range(6), 2))


def test_local_search_sweep_cap():
    inst = random_instance(8, 2)
    res = local_search(inst, np.arange(8), max_sweeps=1)
    assert res.sweeps <= 1


def test_local_search_reaches_chr12a_optimum_on_some_restart():
    inst = bundled_instance("chr12a")
    rng = np.random.default_rng(0)
    best = min(local_search(inst, rng.permutation(12)).value for _ in range(300))
    assert best == 9552


def test_hook_examples():
    inst = random_instance(5, 6)
    perm, opt = brute_force(inst)
    V = np.outer([0.6, 0.8], perm_vec(perm.array(), 5))
    hook = epalmls_hook(V, inst)
    assert hook.value == opt and hook.perm == perm
    rng = np.random.default_rng(2)
    for _ in range(10):
        V = rng.standard_normal((6, 25)) + 2 * np.outer(np.ones(6), perm_vec(rng.permutation(5), 5))
        hook = epalmls_hook(V, inst)
        sig_top = np.linalg.svd(V)[2][0]
        x = sig_top if sig_top.sum() >= 0 else -sig_top
        top_only = objective(inst, permut_proj(x.reshape(5, 5, order="F")))
        assert opt <= hook.value <= top_only


def test_hook_never_worsens_incumbent():
    inst = random_instance(5, 7)
    perm, opt = brute_force(inst)
    V = np.random.default_rng(1).standard_normal((4, 25))
    hook = epalmls_hook(V, inst, (opt, perm))
    assert hook.value == opt and hook.perm == perm and hook.index is None
    hook = epalmls_hook(V, inst, (np.inf, None))
    assert hook.value >= opt and hook.perm is not None
