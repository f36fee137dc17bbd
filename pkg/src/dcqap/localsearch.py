"""Pairwise-exchange (2-swap) local search and the per-iterate rounding hook."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .assignment import permut_proj
from .instance import Permutation, QapInstance, objective
from .specfact import numerical_rank, right_singular_directions


@dataclass(frozen=True)
class SwapMove:
    i: int
    j: int

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("a swap needs two distinct indices")


def _as_array(perm) -> np.ndarray:
    return perm.array() if isinstance(perm, Permutation) else np.asarray(perm, dtype=np.intp)


def _touched(inst: QapInstance, pi: np.ndarray, idx) -> float:
    """Objective terms that involve rows/columns ``idx`` of the assignment."""
    A, B, C = inst.A, inst.B, inst.C
    idx = np.asarray(idx)
    rows = np.sum(A[idx, :] * B[pi[None, :], pi[idx][:, None]])
    cols = np.sum(A[:, idx] * B[pi[idx][None, :], pi[:, None]])
    both = np.sum(A[np.ix_(idx, idx)] * B[np.ix_(pi[idx], pi[idx])].T)
    return float(rows + cols - both + C[idx, pi[idx]].sum())


def swap_delta(inst: QapInstance, perm, move: SwapMove) -> float:
    """``objective(perm with i, j exchanged) - objective(perm)`` in O(n)."""
    pi = _as_array(perm)
    i, j = move.i, move.j
    sw = pi.copy()
    sw[i], sw[j] = pi[j], pi[i]
    return _touched(inst, sw, (i, j)) - _touched(inst, pi, (i, j))


def delta_matrix(inst: QapInstance, perm) -> np.ndarray:
    """All swap deltas at once, ``D[r, s]`` for ``r != s`` (diagonal is 0), O(n^3).

    With ``M[i, k] = B[pi(k), pi(i)]`` the objective is ``<A, M> + sum C[i, pi(i)]``
    and a swap conjugates ``M`` by a transposition.
    """
    pi = _as_array(perm)
    A = inst.A
    M = inst.B[np.ix_(pi, pi)].T
    n = A.shape[0]
    G = A @ M.T
    H = A.T @ M
    g, h = np.diag(G), np.diag(H)
    aD, mD = np.diag(A), np.diag(M)
    D = G + G.T - g[:, None] - g[None, :] + H + H.T - h[:, None] - h[None, :]
    # remove the k in {r, s} terms counted by the full sums, then add the 2x2 block
    Ar, Ac = A, A.T  # Ar[r, s] = A_rs, Ac[r, s] = A_sr
    Mr, Mc = M, M.T
    D -= (aD[:, None] - Ac) * (Mc - mD[:, None])  # T1, k = r
    D -= (Ar - aD[None, :]) * (mD[None, :] - Mr)  # T1, k = s
    D -= (aD[:, None] - Ar) * (Mr - mD[:, None])  # T2, k = r
    D -= (Ac - aD[None, :]) * (mD[None, :] - Mc)  # T2, k = s
    D += (aD[:, None] - aD[None, :]) * (mD[None, :] - mD[:, None])
    D += (Ar - Ac) * (Mc - Mr)
    Cp = inst.C[:, pi]  # Cp[r, s] = C[r, pi(s)]
    cd = np.diag(Cp)
    D += Cp + Cp.T - cd[:, None] - cd[None, :]
    D[np.arange(n), np.arange(n)] = 0.0
    return D


@dataclass(frozen=True)
class LocalSearchResult:
    perm: Permutation
    value: float
    sweeps: int
    local_optimum: bool


def local_search(inst: QapInstance, perm, max_sweeps: int = 100, tol: float = 1e-9) -> LocalSearchResult:
    """Best-improvement 2-swap descent.

    Each sweep applies the most negative swap (lowest ``(i, j)`` on ties) and
    stops at a 2-swap local optimum or after ``max_sweeps`` moves.  ``tol`` is
    relative to the current objective magnitude, which keeps float noise from
    producing zero-gain cycles.
    """
    pi = _as_array(perm).copy()
    value = objective(inst, pi)
    n = pi.size
    iu = np.triu_indices(n, 1)
    for sweep in range(1, max_sweeps + 1):
        D = delta_matrix(inst, pi)[iu]
        k = int(np.argmin(D))
        if D[k] >= -tol * max(1.0, abs(value)):
            return LocalSearchResult(Permutation(pi), value, sweep - 1, True)
        i, j = iu[0][k], iu[1][k]
        pi[i], pi[j] = pi[j], pi[i]
        value = objective(inst, pi)
    D = delta_matrix(inst, pi)[iu]
    at_opt = bool(D.min() >= -tol * max(1.0, abs(value))) if D.size else True
    return LocalSearchResult(Permutation(pi), value, max_sweeps, at_opt)


@dataclass(frozen=True)
class HookResult:
    value: float
    perm: Optional[Permutation]
    index: Optional[int]  # which singular direction produced the incumbent


def epalmls_hook(
    V: np.ndarray,
    inst: QapInstance,
    best_so_far: Tuple[float, Optional[Permutation]] = (np.inf, None),
    max_sweeps: int = 100,
    max_directions: Optional[int] = None,
) -> HookResult:
    """Round every significant right singular direction of ``V`` and polish it.

    For each direction ``k < numerical_rank(V)``: project ``mat(sigma_k Q_k)``
    onto the permutations, run :func:`local_search`, and keep the best
    objective (ties keep the earlier incumbent).  Returns an incumbent no worse
    than ``best_so_far``.
    """
    best_val, best_perm = best_so_far
    best_idx = None
    n = inst.n
    rank = numerical_rank(V)
    if rank == 0:
        return HookResult(best_val, best_perm, None)
    sig, Q = right_singular_directions(V)
    count = rank if max_directions is None else min(rank, max_directions)
    for k in range(count):
        x = sig[k] * Q[:, k]
        # orient like the top-direction extraction: nonnegative total mass
        if x.sum() < 0:
            x = -x
        start = permut_proj(x.reshape(n, n, order="F"))
        res = local_search(inst, start, max_sweeps)
        if res.value < best_val:
            best_val, best_perm, best_idx = res.value, res.perm, k
    return HookResult(best_val, best_perm, best_idx)
