"""Small-scale ground truth: exhaustive QAP search, rank-one distances,
nonnegative eigendecomposition, Dykstra projection and two empirical probes.

Everything here is meant for tiny ``n`` (p = n^2 <= 36) and favours clarity
over speed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .alm import AlmConfig, alm_solve
from .epalm import extract_solution
from .instance import LiftedCost, Permutation, QapInstance, objective, preprocess
from .specfact import penalty_gap

BRUTE_FORCE_MAX_N = 9
GAMMA_MAX_N = 6


class GuardError(ValueError):
    """Request exceeds a hard size guard of an exhaustive routine."""


# ---------------------------------------------------------------------------
# exhaustive search


def brute_force(inst: QapInstance, batch: int = 5040):
    """Global optimum by enumerating all ``n!`` permutations in lexicographic order.

    Returns ``(perm, value)``; ties keep the lexicographically first permutation.
    """
    n = inst.n
    if n > BRUTE_FORCE_MAX_N:
        raise GuardError(f"brute force is limited to n <= {BRUTE_FORCE_MAX_N}, got n={n}")
    A, B, C = inst.A, inst.B, inst.C
    rows = np.arange(n)
    best_val, best_perm = np.inf, None
    it = itertools.permutations(range(n))
    while True:
        chunk = np.array(list(itertools.islice(it, batch)), dtype=np.intp)
        if chunk.size == 0:
            break
        # objective = sum_{i,k} A[i,k] B[pi(k), pi(i)] + sum_i C[i, pi(i)]
        Bp = B[chunk[:, None, :], chunk[:, :, None]]  # Bp[t, i, k] = B[pi(k), pi(i)]
        vals = np.einsum("ik,tik->t", A, Bp) + C[rows, chunk].sum(axis=1)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best_perm = float(vals[k]), Permutation(chunk[k])
    return best_perm, best_val


def lifted_permutations(n: int) -> np.ndarray:
    """``vec(X)`` for every permutation matrix, one per row (lexicographic order)."""
    if n > GAMMA_MAX_N:
        raise GuardError(f"enumerating lifted permutations is limited to n <= {GAMMA_MAX_N}")
    out = []
    for perm in itertools.permutations(range(n)):
        out.append(Permutation(perm).matrix().reshape(-1, order="F"))
    return np.array(out)


# ---------------------------------------------------------------------------
# nonnegative eigendecomposition


@dataclass(frozen=True)
class PerronDecomposition:
    eigvals: np.ndarray  # descending
    eigvecs: np.ndarray  # columns, orthonormal; column 0 is entrywise nonnegative
    multiplicity: int  # multiplicity of the top eigenvalue

    @property
    def u1(self) -> np.ndarray:
        return self.eigvecs[:, 0]


def _check_nonneg_symmetric(Y: np.ndarray, tol: float = 1e-12):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
        raise ValueError("Y must be square")
    scale = max(1.0, float(np.abs(Y).max()))
    if np.abs(Y - Y.T).max() > tol * scale:
        raise ValueError("Y must be symmetric")
    if Y.min() < -tol * scale:
        raise ValueError("Y must be entrywise nonnegative")
    return 0.5 * (Y + Y.T)


def perron_decomposition(Y: np.ndarray, eig_tol: float = 1e-9) -> PerronDecomposition:
    """Symmetric eigendecomposition of a nonnegative ``Y`` with a nonnegative top eigenvector.

    When the top eigenvalue is simple its eigenvector is sign-fixed.  When it
    is multiple, the eigenspace is spanned by the Perron vectors of the
    irreducible diagonal blocks of ``Y`` that attain it (disjoint supports, so
    they are orthonormal); these replace the solver's basis of that eigenspace.
    """
    Y = _check_nonneg_symmetric(Y)
    w, U = np.linalg.eigh(Y)
    w, U = w[::-1].copy(), U[:, ::-1].copy()
    lam1 = w[0]
    thresh = eig_tol * max(1.0, abs(lam1))
    k = int(np.sum(w >= lam1 - thresh))
    if k == 1:
        u = U[:, 0]
        if u.sum() < 0:
            u = -u
        U[:, 0] = u
        return PerronDecomposition(w, U, 1)
    ncomp, labels = connected_components(Y > 0, directed=False)
    basis = []
    for c in range(ncomp):
        idx = np.flatnonzero(labels == c)
        sw, sU = np.linalg.eigh(Y[np.ix_(idx, idx)])
        if sw[-1] >= lam1 - thresh:
            v = np.zeros(Y.shape[0])
            u = sU[:, -1]
            v[idx] = u if u.sum() >= 0 else -u
            basis.append(v)
    if len(basis) != k:
        # numerically ambiguous block structure: fall back to projecting the
        # all-ones direction into the eigenspace and clamping
        E = U[:, :k]
        v = np.maximum(E @ (E.T @ np.ones(Y.shape[0])), 0.0)
        basis = [v / np.linalg.norm(v)]
    B = np.column_stack(basis + [U[:, j] for j in range(k)])
    Qm, _ = np.linalg.qr(B)
    Qm = Qm[:, :k]
    u1 = basis[0]
    Qm[:, 0] = u1  # QR may flip the sign; the first column spans u1 exactly
    U[:, :k] = Qm
    return PerronDecomposition(w, U, k)


# ---------------------------------------------------------------------------
# distances


def dist_rank_one(Y: np.ndarray) -> float:
    """Distance to the rank-<=1 symmetric matrices: drop all but the largest-|lambda| term."""
    w = np.linalg.eigvalsh(np.asarray(Y, dtype=float))
    j = int(np.argmax(np.abs(w)))
    return float(np.sqrt(np.sum(np.delete(w, j) ** 2)))


def dist_psd_rank_one(Y: np.ndarray) -> float:
    """Distance to ``{z z^T}``: ``||Y - max(0, lambda_1) u1 u1^T||_F``."""
    w, U = np.linalg.eigh(np.asarray(Y, dtype=float))
    u = U[:, -1]
    return float(np.linalg.norm(Y - max(0.0, w[-1]) * np.outer(u, u)))


def dist_dnn_rank_one(Y: np.ndarray) -> float:
    """Distance from a nonnegative ``Y`` to ``{z z^T : z >= 0}`` via the Perron vector."""
    dec = perron_decomposition(Y)
    u = np.maximum(dec.u1, 0.0)
    u /= np.linalg.norm(u)
    return float(np.linalg.norm(Y - max(0.0, dec.eigvals[0]) * np.outer(u, u)))


def dist_gamma(Y: np.ndarray, n: Optional[int] = None) -> float:
    """Distance to the lifted permutation matrices ``{vec(X) vec(X)^T}``."""
    Y = np.asarray(Y, dtype=float)
    if n is None:
        n = int(round(np.sqrt(Y.shape[0])))
    X = lifted_permutations(n)
    # ||Y - x x^T||^2 = ||Y||^2 - 2 x^T Y x + ||x||^4
    quad = np.einsum("ti,ij,tj->t", X, Y, X)
    d2 = np.vdot(Y, Y) - 2.0 * quad + float(n) ** 2
    return float(np.sqrt(max(d2.min(), 0.0)))


@dataclass(frozen=True)
class Distances:
    to_rank_one: float
    to_psd_rank_one: float
    to_Kp_rank_one: Optional[float]
    to_gamma: Optional[float]


def distances(Y: np.ndarray, n: Optional[int] = None) -> Distances:
    """All four distances; nonnegative-only and enumeration-only fields are ``None``
    when their preconditions fail."""
    Y = np.asarray(Y, dtype=float)
    if n is None:
        n = int(round(np.sqrt(Y.shape[0])))
    scale = max(1.0, float(np.abs(Y).max()))
    kp = dist_dnn_rank_one(Y) if Y.min() >= -1e-12 * scale else None
    gam = dist_gamma(Y, n) if n <= GAMMA_MAX_N else None
    return Distances(dist_rank_one(Y), dist_psd_rank_one(Y), kp, gam)


def dnn_rank_one_multistart(Y: np.ndarray, starts: int = 100, iters: int = 3000, seed: int = 0) -> float:
    """Independent estimate of ``min_{z >= 0} ||Y - z z^T||_F`` by projected gradient.

    Used only to cross-check :func:`dist_dnn_rank_one`.
    """
    Y = np.asarray(Y, dtype=float)
    p = Y.shape[0]
    rng = np.random.default_rng(seed)
    L = 12.0 * max(1.0, np.linalg.norm(Y, 2))  # rough Lipschitz bound on the gradient
    best = np.inf
    for s in range(starts):
        z = np.abs(rng.standard_normal(p)) * np.sqrt(max(np.trace(Y), 1e-12) / p)
        for _ in range(iters):
            g = 4.0 * ((z @ z) * z - Y @ z)
            z_new = np.maximum(z - g / (L + 4.0 * (z @ z)), 0.0)
            if np.linalg.norm(z_new - z) <= 1e-13 * max(1.0, np.linalg.norm(z)):
                z = z_new
                break
            z = z_new
        best = min(best, float(np.linalg.norm(Y - np.outer(z, z))))
    return best


# ---------------------------------------------------------------------------
# Dykstra projection onto {tr Y^{ii} = 1} n {diag Y^{ij} = 0, i != j} n {Y >= 0} n PSD


def _proj_block_traces(Y, n):
    Y = Y.copy()
    Yb = Y.reshape(n, n, n, n)
    for i in range(n):
        tr = np.trace(Yb[i, :, i, :])
        Yb[i, np.arange(n), i, np.arange(n)] += (1.0 - tr) / n
    return Y


def _offdiag_block_diag_mask(n):
    M = np.zeros((n, n, n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            if i != j:
                M[i, np.arange(n), j, np.arange(n)] = True
    return M.reshape(n * n, n * n)


def _proj_nonneg(Y):
    return np.maximum(0.5 * (Y + Y.T), 0.0)


def _proj_psd(Y):
    w, U = np.linalg.eigh(0.5 * (Y + Y.T))
    return (U * np.maximum(w, 0.0)) @ U.T


@dataclass(frozen=True)
class DykstraResult:
    Y: np.ndarray
    cycles: int
    converged: bool


def set_residuals(Y: np.ndarray, n: int) -> dict:
    """Distances from ``Y`` to each of the four sets used by :func:`dykstra_project`."""
    mask = _offdiag_block_diag_mask(n)
    return {
        "traces": float(np.linalg.norm(Y - _proj_block_traces(Y, n))),
        "offdiag_diag": float(np.linalg.norm(Y[mask])),
        "nonneg": float(np.linalg.norm(np.minimum(Y, 0.0))),
        "psd": float(np.linalg.norm(np.minimum(np.linalg.eigvalsh(0.5 * (Y + Y.T)), 0.0))),
    }


def dykstra_project(Y0: np.ndarray, n: Optional[int] = None, max_cycles: int = 2000, tol: float = 1e-10) -> DykstraResult:
    """Dykstra's alternating projections onto the intersection of the four sets.

    Stops when one full cycle moves the iterate by at most ``tol`` (Frobenius).
    Convergence can be slow from far-away starts; the result is then flagged
    ``converged=False``.
    """
    Y = 0.5 * (np.asarray(Y0, dtype=float) + np.asarray(Y0, dtype=float).T)
    if n is None:
        n = int(round(np.sqrt(Y.shape[0])))
    mask = _offdiag_block_diag_mask(n)

    def proj_mask(Z):
        Z = Z.copy()
        Z[mask] = 0.0
        return Z

    projs = [lambda Z: _proj_block_traces(Z, n), proj_mask, _proj_nonneg, _proj_psd]
    incr = [np.zeros_like(Y) for _ in projs]
    for cycle in range(1, max_cycles + 1):
        start = Y
        for k, P in enumerate(projs):
            Z = Y + incr[k]
            Y_new = P(Z)
            incr[k] = Z - Y_new
            Y = Y_new
        if np.linalg.norm(Y - start) <= tol:
            return DykstraResult(Y, cycle, True)
    return DykstraResult(Y, max_cycles, False)


# ---------------------------------------------------------------------------
# probes


@dataclass
class ErrorBoundReport:
    n: int
    samples: int
    seed: int
    radius: float
    ratios: list
    excluded: int  # samples with dist to rank-one < 1e-12 (exact points)
    all_finite: bool
    max_ratio: Optional[float]
    median_ratio: Optional[float]
    kappa_fit: Optional[float]  # max ratio over the first half
    holdout_max: Optional[float]  # max ratio over the second half
    holdout_ok: Optional[bool]  # holdout_max <= 2 * kappa_fit
    unconverged: int

    def to_record(self) -> dict:
        d = dict(self.__dict__)
        d["ratios"] = [float(r) for r in self.ratios]
        return d


def error_bound_probe(n: int = 3, samples: int = 100, seed: int = 0, radius: float = 0.1,
                      max_cycles: int = 2000, tol: float = 1e-10) -> ErrorBoundReport:
    """Sample ``Y`` near lifted permutations, project onto the relaxed feasible set,
    and record ``dist(Y, lifted permutations) / dist(Y, rank <= 1)``.
    """
    if n > 4:
        raise GuardError("error-bound probe is limited to n <= 4")
    if samples < 2:
        raise ValueError("need at least two samples")
    p = n * n
    gamma = lifted_permutations(n)
    children = np.random.SeedSequence(seed).spawn(samples)
    ratios, fit_ratios, hold_ratios = [], [], []
    excluded = unconverged = 0
    for s, child in enumerate(children):
        rng = np.random.default_rng(child)
        x = gamma[rng.integers(len(gamma))]
        G = rng.standard_normal((p, p))
        Y0 = np.outer(x, x) + radius * 0.5 * (G + G.T)
        res = dykstra_project(Y0, n, max_cycles, tol)
        unconverged += not res.converged
        Y = res.Y
        dr = dist_rank_one(Y)
        if dr < 1e-12:
            excluded += 1
            continue
        r = dist_gamma(Y, n) / dr
        ratios.append(r)
        (fit_ratios if s < samples // 2 else hold_ratios).append(r)
    finite = bool(np.all(np.isfinite(ratios))) if ratios else True
    kappa = max(fit_ratios) if fit_ratios else None
    hold = max(hold_ratios) if hold_ratios else None
    ok = None if kappa is None or hold is None else bool(hold <= 2.0 * kappa)
    return ErrorBoundReport(
        n=n, samples=samples, seed=seed, radius=radius, ratios=ratios, excluded=excluded,
        all_finite=finite,
        max_ratio=max(ratios) if ratios else None,
        median_ratio=float(np.median(ratios)) if ratios else None,
        kappa_fit=kappa, holdout_max=hold, holdout_ok=ok, unconverged=unconverged,
    )


DEFAULT_RHO_GRID = tuple(10.0 ** k for k in range(-3, 4))


@dataclass
class PenaltyRow:
    rho: float
    best_value: float  # penalized objective on the normalized lifted cost
    best_penalty_gap: float
    best_feasibility: float
    extracted_obj: float  # original objective of the extracted permutation
    matches_optimum: bool


@dataclass
class ExactPenaltyReport:
    optimum: float
    rows: list = field(default_factory=list)
    threshold_rho: Optional[float] = None  # smallest rho from which every larger rho matches

    def to_record(self) -> dict:
        return {"optimum": self.optimum, "threshold_rho": self.threshold_rho,
                "rows": [r.__dict__ for r in self.rows]}


def exact_penalty_probe(inst: QapInstance, rho_grid: Sequence[float] = DEFAULT_RHO_GRID,
                        multistarts: int = 50, seed: int = 0, tau: float = 1e-5,
                        m: Optional[int] = None, cfg: AlmConfig = AlmConfig(max_iters=2000),
                        starts: Optional[Sequence[np.ndarray]] = None) -> ExactPenaltyReport:
    """Multistart minimization of the rank-penalized problem over a grid of ``rho``.

    Every start sweeps the grid in increasing order, warm-starting each
    constrained solve (augmented Lagrangian to tolerance ``tau``) from the
    previous ``rho``.  For each ``rho`` the reported point is the certified
    run with the lowest penalized value ``<C~, V^T V> + rho * penalty_gap``.
    ``starts`` overrides the random ``m x p`` start matrices.
    """
    n = inst.n
    if n > 4:
        raise GuardError("exact-penalty probe is limited to n <= 4")
    _, optimum = brute_force(inst)
    shifted, _ = preprocess(inst)
    cost = LiftedCost.from_instance(shifted, normalize=True)
    p = inst.p
    m = p if m is None else m
    if starts is None:
        starts = [np.random.default_rng(c).standard_normal((m, p))
                  for c in np.random.SeedSequence(seed).spawn(multistarts)]
    grid = sorted(float(r) for r in rho_grid)
    best = [None] * len(grid)
    for V0 in starts:
        V, mult = np.array(V0, dtype=float), None
        for g, rho in enumerate(grid):
            res = alm_solve(V, rho, tau, cost, cfg, mult=mult)
            V, mult = res.V, res.mult
            pg = penalty_gap(V)
            value = cost.quad(V) + rho * pg
            key = (not res.certified, value)
            if best[g] is None or key < best[g][0]:
                best[g] = (key, V, value, pg, max(res.cert.r1, res.cert.neg))
    report = ExactPenaltyReport(optimum=optimum)
    scale_tol = 1e-6 * max(1.0, abs(optimum))
    for rho, (_, V, value, pg, feas) in zip(grid, best):
        _, perm = extract_solution(V, n)
        ext = objective(inst, perm)
        report.rows.append(PenaltyRow(rho, value, pg, feas, ext, abs(ext - optimum) <= scale_tol))
    thr = None
    for row in reversed(report.rows):
        if not row.matches_optimum:
            break
        thr = row.rho
    report.threshold_rho = thr
    return report
