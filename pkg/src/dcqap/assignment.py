"""Linear assignment (Hungarian method) and projection onto permutations."""

from __future__ import annotations

import numpy as np

from .instance import Permutation

_ZERO_TOL = 1e-12


def hungarian(cost: np.ndarray) -> Permutation:
    """Minimum-cost assignment ``argmin_pi sum_i cost[i, pi(i)]``.

    Potential-based shortest augmenting path variant, O(n^3).  Ties in the
    column scan resolve to the lowest column index, so the result is
    deterministic.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    n = cost.shape[0]
    if n == 0:
        return Permutation(())
    # 1-indexed arrays with a virtual column 0 holding the row being inserted
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.intp)  # match[j] = row assigned to column j
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cols = np.nonzero(free)[0] + 1
            cur = cost[i0 - 1, cols - 1] - u[i0] - v[cols]
            better = cur < minv[cols] - _ZERO_TOL
            minv[cols[better]] = cur[better]
            way[cols[better]] = j0
            cand = minv[cols]
            j1 = cols[int(np.argmin(cand))]  # argmin picks the lowest index on ties
            delta = minv[j1]
            u[match[used]] += delta
            v[used] -= delta
            minv[cols] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    image = np.empty(n, dtype=np.intp)
    image[match[1:] - 1] = np.arange(n)
    return Permutation(image)


def assignment_value(cost: np.ndarray, perm: Permutation) -> float:
    cost = np.asarray(cost, dtype=float)
    return float(cost[np.arange(cost.shape[0]), perm.array()].sum())


def permut_proj(M: np.ndarray) -> Permutation:
    """Nearest permutation matrix in Frobenius norm, i.e. ``argmax_P <M, P>``."""
    return hungarian(-np.asarray(M, dtype=float))
