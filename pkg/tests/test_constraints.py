import itertools

import numpy as np
import pytest

from dcqap.constraints import (
    LiftedConstraints,
    OrthogonalityConstraints,
    adjoint_weight,
    equiv_residuals,
    eval_F,
    neg_part_gram,
    neg_residual,
)
from dcqap.oracle import dykstra_project
from dcqap.specfact import penalty_gap

from conftest import all_perms, dense_D, perm_vec


def dense_ops(n):
    """Dense symmetric matrices S_k with F_k(V) = <S_k, V^T V> - const_k."""
    p = n * n
    ops = [dense_D(n), np.ones((p, p))]
    for i in range(n):  # ||V_i||^2: block i = columns i*n..(i+1)*n
        S = np.zeros((p, p))
        idx = np.arange(i * n, (i + 1) * n)
        S[idx, idx] = 1
        ops.append(S)
    for i in range(n):  # sum_t ||column i of block t||^2
        S = np.zeros((p, p))
        idx = i + n * np.arange(n)
        S[idx, idx] = 1
        ops.append(S)
    consts = np.array([0.0, p] + [1.0] * (2 * n))
    return ops, consts


def test_F_matches_dense(rng):
    n = 3
    ops, consts = dense_ops(n)
    for _ in range(5):
        V = rng.standard_normal((4, 9))
        Y = V.T @ V
        ref = np.array([np.vdot(S, Y) for S in ops]) - consts
        np.testing.assert_allclose(eval_F(V), ref, atol=1e-12)


def test_adjoint_matches_dense(rng):
    n = 3
    ops, _ = dense_ops(n)
    V = rng.standard_normal((4, 9))
    assert np.all(adjoint_weight(V, np.zeros(8)) == 0)
    e1 = np.zeros(8)
    e1[0] = 1
    np.testing.assert_allclose(adjoint_weight(V, e1), 2 * V @ ops[0], atol=1e-12)
    for _ in range(5):
        mu = rng.standard_normal(8)
        E = rng.standard_normal((9, 9))
        E = E + E.T
        S = sum(mu[k] * ops[k] for k in range(8)) + E
        np.testing.assert_allclose(adjoint_weight(V, mu, extra=E), 2 * V @ S, atol=1e-12)


def test_adjoint_is_gradient_by_finite_differences(rng):
    V = rng.standard_normal((4, 9))
    mu = rng.standard_normal(8)
    G = adjoint_weight(V, mu)
    h = 1e-6
    fd = np.zeros_like(V)
    for idx in np.ndindex(V.shape):
        E = np.zeros_like(V)
        E[idx] = h
        fd[idx] = (mu @ eval_F(V + E) - mu @ eval_F(V - E)) / (2 * h)
    assert np.linalg.norm(fd - G) <= 1e-6 * np.linalg.norm(G)


def test_neg_residual_examples(rng):
    assert neg_residual(np.array([[1.0, -1.0]])) == pytest.approx(np.sqrt(2))
    x = perm_vec([2, 0, 1], 3)
    assert neg_residual(np.outer([1.0, 2.0], x)) == 0
    V = rng.standard_normal((3, 9))
    Y = V.T @ V
    np.testing.assert_array_equal(neg_part_gram(V), np.minimum(Y, 0))


@pytest.mark.parametrize("n", [2, 3, 4])
def test_lifted_permutations_feasible(n):
    u = np.array([0.6, 0.8])
    for pi in all_perms(n):
        V = np.outer(u, perm_vec(pi, n))
        assert np.abs(eval_F(V)).max() < 1e-12
        assert neg_residual(V) == 0
        assert abs(penalty_gap(V)) < 1e-12
        assert np.abs(OrthogonalityConstraints(n).residual(V)).max() < 1e-12


def test_random_infeasible_points_fail(rng):
    for _ in range(100):
        V = rng.standard_normal((3, 9))
        bad = np.abs(eval_F(V)).max() > 1e-8 or neg_residual(V) > 1e-8 or penalty_gap(V) > 1e-8
        assert bad


def test_orthogonality_constraints_dense(rng):
    n = 3
    model = OrthogonalityConstraints(n)
    V = rng.standard_normal((4, 9))
    Vb = [V[:, i * n:(i + 1) * n] for i in range(n)]
    h1 = sum(B.T @ B for B in Vb) - np.eye(n)
    h2 = np.array([[np.vdot(Vb[i], Vb[j]) for j in range(n)] for i in range(n)]) - np.eye(n)
    h3 = V.sum(axis=1) @ V.sum(axis=1) - 9
    np.testing.assert_allclose(model.residual(V), np.concatenate([h1.ravel(), h2.ravel(), [h3]]), atol=1e-12)
    # Z = I contribution: gradient of <I, sum V_i^T V_i> is 2 V
    w = np.zeros(model.size)
    w[:9] = np.eye(3).ravel()
    np.testing.assert_allclose(model.weighted_grad(V, w), 2 * V, atol=1e-12)
    w = rng.standard_normal(model.size)
    h = 1e-6
    fd = np.zeros_like(V)
    for idx in np.ndindex(V.shape):
        E = np.zeros_like(V)
        E[idx] = h
        fd[idx] = (w @ model.residual(V + E) - w @ model.residual(V - E)) / (2 * h)
    G = model.weighted_grad(V, w)
    assert np.linalg.norm(fd - G) <= 1e-6 * np.linalg.norm(G)


def test_equiv_residuals_examples():
    n = 3
    x1, x2 = perm_vec([0, 1, 2], 3), perm_vec([1, 2, 0], 3)
    for Y in (np.outer(x1, x1), 0.3 * np.outer(x1, x1) + 0.7 * np.outer(x2, x2)):
        left, right = equiv_residuals(Y, n)
        assert np.abs(left).max() < 1e-12 and np.abs(right).max() < 1e-12
    for c in (1.0, 9.0, 1.0 / 3.0):
        Y = c * np.ones((9, 9)) / 9
        left, right = equiv_residuals(Y, n)
        assert (np.abs(left).max() > 1e-10) == (np.abs(right).max() > 1e-10)


def test_equiv_residuals_rejects_bad_input(rng):
    Y = rng.random((9, 9))
    with pytest.raises(ValueError):
        equiv_residuals(Y, 3)
    with pytest.raises(ValueError):
        equiv_residuals(-np.ones((9, 9)), 3)


def test_equivalence_on_hull_and_projected_points():
    rng = np.random.default_rng(5)
    perms = all_perms(3)
    for _ in range(100):
        w = rng.dirichlet(np.ones(len(perms)))
        Y = sum(wk * np.outer(perm_vec(p, 3), perm_vec(p, 3)) for wk, p in zip(w, perms))
        left, right = equiv_residuals(Y, 3)
        assert np.abs(left).max() <= 1e-10 and np.abs(right).max() <= 1e-10
    for k in range(10):
        Z = rng.random((9, 9))
        res = dykstra_project(Z + Z.T, 3, max_cycles=20000)
        Y = np.maximum(0.5 * (res.Y + res.Y.T), 0)
        left, right = equiv_residuals(Y, 3, tol=1e-6)
        assert (np.linalg.norm(left) <= 1e-8) == (np.linalg.norm(right) <= 1e-8)


def test_models_share_interface(rng):
    V = rng.standard_normal((3, 9))
    for model in (LiftedConstraints(3), OrthogonalityConstraints(3)):
        assert model.residual(V).shape == (model.size,)
        assert model.weighted_grad(V, np.zeros(model.size)).shape == V.shape
