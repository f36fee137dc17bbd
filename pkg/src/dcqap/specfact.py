"""Spectral quantities of the factor ``V`` (m x p) via its m x m Gram matrix.

The rank-one penalty is ``||V||_F^2 - ||V||^2`` and its concave part
``psi(V) = -||V||^2`` has the subgradient ``-2 V Q1 Q1^T`` built from the top
right singular vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POWER_TOL = 1e-10
POWER_MAX_ITERS = 500
RANK_TOL = 1e-8


@dataclass(frozen=True)
class SingularTriplet:
    sigma1: float
    P1: np.ndarray  # unit m-vector
    Q1: np.ndarray  # unit p-vector
    degenerate: bool = False  # True when V == 0


def _start_vector(m: int) -> np.ndarray:
    x = np.ones(m) + 1e-3 * np.sin(np.arange(1, m + 1))
    return x / np.linalg.norm(x)


def _fix_sign(P1: np.ndarray, Q1: np.ndarray):
    nz = np.flatnonzero(Q1)
    if nz.size and Q1[nz[0]] < 0:
        return -P1, -Q1
    return P1, Q1


def top_singular_triplet(V: np.ndarray) -> SingularTriplet:
    """Largest singular value of ``V`` with unit left/right vectors.

    Power iteration on ``G = V V^T`` from a fixed start vector; when the
    iteration stalls (slow convergence through a tiny spectral gap) a dense
    ``eigh`` of ``G`` is used instead.  The returned ``Q1`` has its first
    nonzero entry nonnegative.
    """
    V = np.asarray(V, dtype=float)
    m, p = V.shape
    G = V @ V.T
    if not np.any(G):
        return SingularTriplet(0.0, _start_vector(m), np.zeros(p), degenerate=True)
    x = _start_vector(m)
    lam = 0.0
    converged = False
    for _ in range(POWER_MAX_ITERS):
        y = G @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            break
        y /= ny
        if np.linalg.norm(y - x) <= POWER_TOL:
            x = y
            converged = True
            break
        x = y
    if converged:
        lam = float(x @ G @ x)
    if not converged or lam <= 0.0:
        w, U = np.linalg.eigh(G)
        lam = float(w[-1])
        x = U[:, -1]
    sigma1 = np.sqrt(max(lam, 0.0))
    if sigma1 == 0.0:
        return SingularTriplet(0.0, x, np.zeros(p), degenerate=True)
    Q1 = V.T @ x / sigma1
    # renormalize to absorb the power-iteration error in lam
    nq = np.linalg.norm(Q1)
    Q1 = Q1 / nq
    sigma1 = float(x @ V @ Q1)
    P1, Q1 = _fix_sign(x, Q1)
    if sigma1 < 0:
        sigma1 = -sigma1
        P1 = -P1
    return SingularTriplet(float(sigma1), P1, Q1)


def singular_values(V: np.ndarray) -> np.ndarray:
    """All singular values of ``V`` in descending order.

    Uses a thin SVD of ``V`` rather than the Gram eigenvalues: square roots of
    Gram eigenvalues carry absolute noise near ``1e-8 * sigma_1``, which is the
    rank threshold itself.
    """
    V = np.asarray(V, dtype=float)
    return np.linalg.svd(V, compute_uv=False)


def right_singular_directions(V: np.ndarray):
    """``(sigma, Q)`` with ``Q[:, k]`` the k-th right singular vector of ``V``.

    Zero singular values are dropped.  Each column gets the same sign
    normalization as :func:`top_singular_triplet`.
    """
    V = np.asarray(V, dtype=float)
    U, sig, Vt = np.linalg.svd(V, full_matrices=False)
    keep = sig > 0
    U, sig, Q = U[:, keep], sig[keep], Vt[keep].T.copy()
    for k in range(Q.shape[1]):
        _, Q[:, k] = _fix_sign(U[:, k], Q[:, k])
    return sig, Q


def penalty_gap(V: np.ndarray, triplet: SingularTriplet = None) -> float:
    """``||V||_F^2 - sigma_1^2``, the sum of the squared trailing singular values."""
    V = np.asarray(V, dtype=float)
    if triplet is None:
        triplet = top_singular_triplet(V)
    return float(np.vdot(V, V) - triplet.sigma1 ** 2)


def psi_value(V: np.ndarray) -> float:
    """``psi(V) = -||V||_2^2``."""
    return -float(singular_values(V)[0] ** 2) if np.any(V) else 0.0


def psi_subgradient(V: np.ndarray, triplet: SingularTriplet = None) -> np.ndarray:
    """``W = -2 V Q1 Q1^T``, an element of the subdifferential of ``psi`` at ``V``."""
    V = np.asarray(V, dtype=float)
    if triplet is None:
        triplet = top_singular_triplet(V)
    if triplet.degenerate:
        return np.zeros_like(V)
    return -2.0 * np.outer(V @ triplet.Q1, triplet.Q1)


def numerical_rank(V: np.ndarray, tol: float = RANK_TOL) -> int:
    """Number of singular values exceeding ``tol * sigma_1``."""
    s = singular_values(V)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))
