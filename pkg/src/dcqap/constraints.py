"""Equality constraints on ``Y = V^T V`` and their adjoint-weighted gradients.

``V`` is ``m x p`` with ``p = n^2`` and n column blocks ``V_j = V[:, j*n:(j+1)*n]``.
``V.reshape(m, n, n)[:, j, i]`` is column ``i`` of block ``j`` (global column
``i + j*n``).  Every p x p operator below stays implicit; only
``min(V^T V, 0)`` is ever formed densely.

Two constraint sets are provided with a common interface
(``residual(V)`` and ``weighted_grad(V, w)`` = gradient of ``<w, residual(V)>``):

* :class:`LiftedConstraints`, the compact 2n+2 system used by the main solver:
  ``<D,Y> = 0``, ``<e e^T, Y> = p``, ``tr Y^{ii} = 1`` and
  ``sum_t (Y^{tt})_{ii} = 1``.
* :class:`OrthogonalityConstraints`, the 2n^2+1 system
  ``sum_i V_i^T V_i = I``, ``<V_i, V_j> = delta_ij``, ``<e e^T, Y> = p``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _blocks(V: np.ndarray, n: int) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[1] != n * n:
        raise ValueError(f"V must have {n * n} columns, got shape {V.shape}")
    return V.reshape(V.shape[0], n, n)


def eval_F(V: np.ndarray, n: int = None) -> np.ndarray:
    """Constraint map of length 2n+2 (see module docstring for the order)."""
    V = np.asarray(V, dtype=float)
    if n is None:
        n = int(round(np.sqrt(V.shape[1])))
    Vb = _blocks(V, n)
    p = n * n
    row_sums = Vb.sum(axis=2)  # (m, n): V_j e
    block_sum = Vb.sum(axis=1)  # (m, n): sum_j V_j
    sq = Vb * Vb
    block_norms = sq.sum(axis=(0, 2))  # ||V_j||_F^2
    d_val = np.vdot(row_sums, row_sums) + np.vdot(block_sum, block_sum) - 2.0 * block_norms.sum()
    ve = V.sum(axis=1)
    out = np.empty(2 * n + 2)
    out[0] = d_val
    out[1] = ve @ ve - p
    out[2:2 + n] = block_norms - 1.0
    out[2 + n:] = sq.sum(axis=(0, 1)) - 1.0
    return out


def adjoint_weight(V: np.ndarray, mu: np.ndarray, extra: np.ndarray = None, n: int = None) -> np.ndarray:
    """``2 V S`` with ``S = mu1 D + mu2 J + sum mu_{2+i} S_i + sum mu_{2+n+i} T_i + extra``.

    This is the gradient of ``V -> <mu, F(V)>`` (plus ``<extra, V^T V>`` when
    ``extra`` is a symmetric p x p matrix).
    """
    V = np.asarray(V, dtype=float)
    if n is None:
        n = int(round(np.sqrt(V.shape[1])))
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (2 * n + 2,):
        raise ValueError(f"mu must have length {2 * n + 2}")
    Vb = _blocks(V, n)
    m = V.shape[0]
    # D: block j of V D is (V_j e) e^T + sum_i V_i - 2 V_j
    out = mu[0] * (Vb.sum(axis=2)[:, :, None] + Vb.sum(axis=1)[:, None, :] - 2.0 * Vb)
    out += Vb * (mu[2:2 + n][None, :, None] + mu[2 + n:][None, None, :])
    out = out.reshape(m, n * n)
    out += mu[1] * V.sum(axis=1)[:, None]
    if extra is not None:
        out += V @ extra
    return 2.0 * out


def neg_part_gram(V: np.ndarray) -> np.ndarray:
    """Dense ``min(V^T V, 0)``."""
    V = np.asarray(V, dtype=float)
    return np.minimum(V.T @ V, 0.0)


def neg_residual(V: np.ndarray) -> float:
    """``||min(V^T V, 0)||_F``."""
    return float(np.linalg.norm(neg_part_gram(V)))


def equiv_residuals(Y: np.ndarray, n: int = None, tol: float = 1e-12):
    """Residuals of two equivalent descriptions of the assignment constraints.

    ``left`` stacks ``vec(sum_i Y^{ii} - I)`` and ``tr(Y^{ij}) - delta_ij``;
    ``right`` stacks ``<D,Y>``, ``tr(Y^{ii}) - 1`` and
    ``sum_t (Y^{tt})_{ii} - 1``.  On nonnegative ``Y`` both vanish together.
    """
    Y = np.asarray(Y, dtype=float)
    p = Y.shape[0]
    if n is None:
        n = int(round(np.sqrt(p)))
    if Y.shape != (n * n, n * n):
        raise ValueError(f"Y must be {n * n}x{n * n}")
    scale = max(1.0, np.abs(Y).max())
    if np.abs(Y - Y.T).max() > tol * scale:
        raise ValueError("Y is not symmetric")
    if Y.min() < -tol * scale:
        raise ValueError("Y has negative entries")
    # Yb[i, a, j, b] = (Y^{ij})_{ab}
    Yb = Y.reshape(n, n, n, n)
    diag_blocks = np.einsum("iaib->iab", Yb)
    traces = np.einsum("iaja->ij", Yb)
    left = np.concatenate([(diag_blocks.sum(axis=0) - np.eye(n)).ravel(), (traces - np.eye(n)).ravel()])
    D_val = _d_inner(Yb, n)
    right = np.concatenate([[D_val], np.diag(traces) - 1.0, np.einsum("iaa->a", diag_blocks) - 1.0])
    return left, right


def _d_inner(Yb: np.ndarray, n: int) -> float:
    """``<D, Y>`` from the block view: off-diagonal entries of diagonal blocks
    plus traces of off-diagonal blocks."""
    diag_blocks = np.einsum("iaib->iab", Yb)
    traces = np.einsum("iaja->ij", Yb)
    offdiag_in_diag = diag_blocks.sum() - np.einsum("iaa->", diag_blocks)
    offdiag_traces = traces.sum() - np.trace(traces)
    return float(offdiag_in_diag + offdiag_traces)


# ---------------------------------------------------------------------------
# constraint models used by the augmented Lagrangian


@dataclass(frozen=True)
class LiftedConstraints:
    """The 2n+2 equality system ``F(V) = 0``."""

    n: int

    @property
    def size(self) -> int:
        return 2 * self.n + 2

    def residual(self, V: np.ndarray) -> np.ndarray:
        return eval_F(V, self.n)

    def weighted_grad(self, V: np.ndarray, w: np.ndarray) -> np.ndarray:
        return adjoint_weight(V, w, n=self.n)


@dataclass(frozen=True)
class OrthogonalityConstraints:
    """``h1 = sum_i V_i^T V_i - I``, ``h2_ij = <V_i, V_j> - delta_ij``, ``h3 = ||V e||^2 - p``.

    The residual vector is ``[vec(h1), vec(h2), h3]`` (length 2n^2 + 1); a
    weight vector is read the same way as ``[vec(Z), vec(Gamma), lam]``.
    """

    n: int

    @property
    def size(self) -> int:
        return 2 * self.n * self.n + 1

    def residual(self, V: np.ndarray) -> np.ndarray:
        n = self.n
        Vb = _blocks(V, n)
        h1 = np.einsum("mik,mil->kl", Vb, Vb) - np.eye(n)
        h2 = np.einsum("mik,mjk->ij", Vb, Vb) - np.eye(n)
        ve = np.asarray(V).sum(axis=1)
        return np.concatenate([h1.ravel(), h2.ravel(), [ve @ ve - n * n]])

    def split(self, w: np.ndarray):
        n = self.n
        w = np.asarray(w, dtype=float)
        return w[:n * n].reshape(n, n), w[n * n:2 * n * n].reshape(n, n), float(w[-1])

    def weighted_grad(self, V: np.ndarray, w: np.ndarray) -> np.ndarray:
        n = self.n
        V = np.asarray(V, dtype=float)
        Vb = _blocks(V, n)
        Z, G, lam = self.split(w)
        Zs = 0.5 * (Z + Z.T)
        Gs = 0.5 * (G + G.T)
        out = Vb @ Zs + np.einsum("ij,mjk->mik", Gs, Vb)
        out = out.reshape(V.shape) + lam * V.sum(axis=1)[:, None]
        return 2.0 * out
