"""Augmented Lagrangian solver for the rank-penalized factorized subproblem.

For fixed ``rho`` the subproblem is

    min_V  <C~, V^T V> + rho (||V||_F^2 - ||V||_2^2)
    s.t.   h(V) = 0,  V^T V >= 0 entrywise,

with ``h`` one of the constraint models in :mod:`dcqap.constraints`.  Its
augmented Lagrangian is ``Phi_beta(V) + rho (||V||_F^2 + psi(V))`` where

    Phi_beta = <C~,Y> + <mu,h> + beta/2 ||h||^2
               + beta/2 ||min(Y - Lambda/beta, 0)||_F^2 - ||Lambda||_F^2 / (2 beta),

``Y = V^T V``.  Each ALM step minimizes it by majorization-minimization: the
concave ``psi`` is linearized at the current point and the resulting smooth
majorizer is handed to L-BFGS.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional, TextIO

import numpy as np

from .constraints import LiftedConstraints, OrthogonalityConstraints
from .instance import LiftedCost
from .lbfgs import LbfgsMemory, lbfgs_minimize
from .specfact import psi_subgradient, top_singular_triplet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MultiplierState:
    """Dual variables: ``Lambda`` (p x p, >= 0) for ``V^T V >= 0`` and ``eq`` for ``h(V) = 0``.

    For the 2n+2 lifted system ``eq = (lam; eta; xi)`` with ``lam`` in R^2
    (the two scalar constraints), ``eta`` and ``xi`` in R^n.
    """

    Lambda: np.ndarray
    eq: np.ndarray

    @classmethod
    def zeros(cls, p: int, k: int) -> "MultiplierState":
        return cls(np.zeros((p, p)), np.zeros(k))

    @property
    def n_blocks(self) -> int:
        return (self.eq.size - 2) // 2

    @property
    def lam(self) -> np.ndarray:
        return self.eq[:2]

    @property
    def eta(self) -> np.ndarray:
        return self.eq[2:2 + self.n_blocks]

    @property
    def xi(self) -> np.ndarray:
        return self.eq[2 + self.n_blocks:]

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.Lambda, self.Lambda) + self.eq @ self.eq))


@dataclass(frozen=True)
class AlmConfig:
    beta0: float = 1.0
    gamma_beta: float = 1.05
    beta_max: float = 1e8
    inner_eps_factor: float = 0.9  # eps_k = inner_eps_factor * tau
    mm_eps_factor: float = 0.1  # L-BFGS tolerance = mm_eps_factor * eps_k
    mm_max_cycles: int = 100
    lbfgs_memory: int = 15
    lbfgs_max_iters: int = 300
    max_iters: int = 500
    safeguard_floor: float = 1e3
    warm_start_beta: bool = False  # reuse the last beta across subproblems

    def __post_init__(self):
        if self.beta0 <= 0:
            raise ValueError("beta0 must be positive")
        if self.gamma_beta <= 1:
            raise ValueError("gamma_beta must exceed 1")


@dataclass(frozen=True)
class StationarityCertificate:
    r1: float  # ||h(V)||
    r2: float  # complementarity-aware nonnegativity residual
    r3: float  # ||grad Phi + rho (2V + W)|| with updated multipliers
    neg: float  # ||min(V^T V, 0)||_F

    def passed(self, tau: float) -> bool:
        return max(self.r1, self.r2, self.r3) <= tau

    @property
    def worst(self) -> float:
        return max(self.r1, self.r2, self.r3)


# ---------------------------------------------------------------------------
# value / gradient


def _parts(V, mult, beta, cost, model):
    VC = cost.apply(V)
    h = model.residual(V)
    Y = V.T @ V
    N = np.minimum(Y - mult.Lambda / beta, 0.0)
    return VC, h, N


def phi_value_grad(V: np.ndarray, mult: MultiplierState, beta: float, cost: LiftedCost, model=None):
    """Value and gradient of ``Phi_beta`` (no ``rho`` terms)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    model = model or LiftedConstraints(cost.n)
    V = np.asarray(V, dtype=float)
    VC, h, N = _parts(V, mult, beta, cost, model)
    value = (
        np.vdot(VC, V)
        + mult.eq @ h
        + 0.5 * beta * (h @ h)
        + 0.5 * beta * np.vdot(N, N)
        - np.vdot(mult.Lambda, mult.Lambda) / (2.0 * beta)
    )
    grad = 2.0 * VC + model.weighted_grad(V, mult.eq + beta * h) + 2.0 * beta * (V @ N)
    return float(value), grad


def phi_hat_value_grad(V, Z, Gam, Lambda, lam, beta, cost: LiftedCost):
    """``Phi_beta`` for the orthogonality constraint system.

    Multipliers: ``Z`` for ``sum_i V_i^T V_i = I``, ``Gam`` for
    ``<V_i, V_j> = delta_ij``, ``lam`` for ``||V e||^2 = p`` and ``Lambda`` for
    ``V^T V >= 0``.
    """
    model = OrthogonalityConstraints(cost.n)
    eq = np.concatenate([np.asarray(Z, float).ravel(), np.asarray(Gam, float).ravel(), [float(lam)]])
    return phi_value_grad(V, MultiplierState(np.asarray(Lambda, float), eq), beta, cost, model)


def lagrangian_value(V, mult, beta, rho, cost, model=None) -> float:
    """``L = Phi_beta + rho (||V||_F^2 - ||V||_2^2)`` (exact spectral norm)."""
    phi, _ = phi_value_grad(V, mult, beta, cost, model)
    s1 = np.linalg.svd(V, compute_uv=False)[0]
    return phi + rho * (np.vdot(V, V) - s1 ** 2)


def majorizer_grad(V, anchor_W, mult, beta, rho, cost, model=None):
    """Smooth upper model of the augmented Lagrangian, tangent at the anchor.

    ``M(V) = Phi_beta(V) + rho (||V||_F^2 + <W, V - V~>) + rho psi(V~)``.
    For ``W = -2 V~ Q1 Q1^T`` one has ``psi(V~) - <W, V~> = ||V~||_2^2 = ||W||_F^2 / 4``,
    so the anchor point itself is not needed.
    """
    phi, g = phi_value_grad(V, mult, beta, cost, model)
    value = phi + rho * (np.vdot(V, V) + np.vdot(anchor_W, V) + 0.25 * np.vdot(anchor_W, anchor_W))
    return float(value), g + rho * (2.0 * V + anchor_W)


# ---------------------------------------------------------------------------
# majorization-minimization


@dataclass
class MmResult:
    V: np.ndarray
    residual: float
    cycles: int
    converged: bool
    lbfgs_iters: int
    lbfgs_fallbacks: int


def mm_solve(V_start, mult, beta, rho, eps_k, cost, model=None, cfg: AlmConfig = AlmConfig(),
             deadline: Optional[float] = None) -> MmResult:
    """Approximate stationary point of the augmented Lagrangian for fixed multipliers.

    Each cycle linearizes ``psi`` at the current point, minimizes the majorizer
    with L-BFGS to ``mm_eps_factor * eps_k``, then measures
    ``||grad Phi(V) + rho (2V + W(V))||_F`` with the subgradient re-evaluated at
    the new point.  Stops when that is ``<= eps_k``; a start point that already
    meets the rule is returned after zero cycles.  ``deadline`` (a
    ``time.perf_counter`` value) ends the loop early with the best cycle so far.
    """
    if eps_k <= 0:
        raise ValueError("eps_k must be positive")
    model = model or LiftedConstraints(cost.n)
    V = np.array(V_start, dtype=float)
    W = psi_subgradient(V)
    # the start point may already meet the rule (typical late in the outer loop)
    _, g0 = majorizer_grad(V, W, mult, beta, rho, cost, model)
    resid0 = float(np.linalg.norm(g0))
    if resid0 <= eps_k:
        return MmResult(V, resid0, 0, True, 0, 0)
    best = (resid0, V)
    iters = fallbacks = 0
    # successive majorizers differ by a linear term, so curvature pairs carry over
    mem = LbfgsMemory(cfg.lbfgs_memory)
    for cycle in range(1, cfg.mm_max_cycles + 1):
        res = lbfgs_minimize(
            lambda X, W=W: majorizer_grad(X, W, mult, beta, rho, cost, model),
            V,
            eps=cfg.mm_eps_factor * eps_k,
            max_iters=cfg.lbfgs_max_iters,
            memory=cfg.lbfgs_memory,
            mem=mem,
        )
        iters += res.iters
        fallbacks += res.fallback_steps
        V = res.x
        W_new = psi_subgradient(V)
        # grad M(V; W) + rho (W_new - W) = grad Phi + rho (2V + W_new)
        resid = float(np.linalg.norm(res.grad + rho * (W_new - W)))
        W = W_new
        log.debug("MM cycle %d: residual %.3e, lbfgs %d iters (converged=%s)", cycle, resid, res.iters, res.converged)
        if resid < best[0]:
            best = (resid, V)
        if resid <= eps_k:
            return MmResult(V, resid, cycle, True, iters, fallbacks)
        if deadline is not None and time.perf_counter() > deadline:
            return MmResult(best[1], best[0], cycle, False, iters, fallbacks)
    log.debug("MM cap reached with residual %.3e", best[0])
    return MmResult(best[1], best[0], cfg.mm_max_cycles, False, iters, fallbacks)


# ---------------------------------------------------------------------------
# multipliers


def multiplier_update(mult: MultiplierState, V: np.ndarray, beta: float, model) -> MultiplierState:
    Y = V.T @ V
    Lam = np.maximum(mult.Lambda - beta * Y, 0.0)
    return MultiplierState(Lam, mult.eq + beta * model.residual(V))


def safeguard(mult: MultiplierState, radius: float) -> MultiplierState:
    """Project the multiplier tuple onto the Euclidean ball of the given radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    nrm = mult.norm()
    if nrm <= radius:
        return mult
    t = radius / nrm
    return MultiplierState(mult.Lambda * t, mult.eq * t)


def safeguard_radius(V0: np.ndarray, cost: LiftedCost, floor: float = 1e3) -> float:
    return max(floor, abs(cost.quad(V0)))


def certificate(V, mult: MultiplierState, rho: float, cost: LiftedCost, model=None) -> StationarityCertificate:
    """Residuals of the approximate KKT system for the given primal-dual pair.

    ``r3`` uses ``Lambda`` directly as the cone multiplier:
    ``2V C~ + grad<eq, h> - 2 V Lambda + rho (2V + W)``.  ``r2`` is the
    smallest perturbation making ``V^T V`` nonnegative and complementary to
    ``Lambda``: entries where ``Lambda > 0`` must vanish, others must be >= 0.
    """
    model = model or LiftedConstraints(cost.n)
    V = np.asarray(V, dtype=float)
    Y = V.T @ V
    h = model.residual(V)
    active = mult.Lambda > 0
    r2 = np.sqrt(np.sum(np.where(active, Y, np.minimum(Y, 0.0)) ** 2))
    W = psi_subgradient(V)
    G = 2.0 * cost.apply(V) + model.weighted_grad(V, mult.eq) - 2.0 * (V @ mult.Lambda) + rho * (2.0 * V + W)
    return StationarityCertificate(
        r1=float(np.linalg.norm(h)),
        r2=float(r2),
        r3=float(np.linalg.norm(G)),
        neg=float(np.linalg.norm(np.minimum(Y, 0.0))),
    )


# ---------------------------------------------------------------------------
# ALM driver


@dataclass
class AlmResult:
    V: np.ndarray
    mult: MultiplierState
    cert: StationarityCertificate
    certified: bool
    iters: int
    beta: float
    trace: list = field(default_factory=list)


def alm_solve(
    V_start: np.ndarray,
    rho: float,
    tau: float,
    cost: LiftedCost,
    cfg: AlmConfig = AlmConfig(),
    model=None,
    mult: Optional[MultiplierState] = None,
    radius: Optional[float] = None,
    beta: Optional[float] = None,
    trace_stream: Optional[TextIO] = None,
    deadline: Optional[float] = None,
) -> AlmResult:
    """Drive the augmented Lagrangian iterations until the certificate passes at ``tau``.

    ``mult`` warm-starts the multipliers (zeros when omitted) and ``radius``
    is the safeguard ball radius (defaults to
    ``max(safeguard_floor, |<C~, V0^T V0>|)``).  Past ``deadline`` (a
    ``time.perf_counter`` value) the best iterate so far is returned uncertified.
    """
    model = model or LiftedConstraints(cost.n)
    V = np.array(V_start, dtype=float)
    if mult is None:
        mult = MultiplierState.zeros(cost.p, model.size)
    if radius is None:
        radius = safeguard_radius(V, cost, cfg.safeguard_floor)
    beta = cfg.beta0 if beta is None else beta
    eps_k = cfg.inner_eps_factor * tau
    trace = []
    best = None
    for k in range(1, cfg.max_iters + 1):
        hat = safeguard(mult, radius)
        mm = mm_solve(V, hat, beta, rho, eps_k, cost, model, cfg, deadline)
        V = mm.V
        mult = multiplier_update(hat, V, beta, model)
        cert = certificate(V, mult, rho, cost, model)
        rec = {
            "k": k, "beta": beta, "r1": cert.r1, "r2": cert.r2, "r3": cert.r3,
            "mm_cycles": mm.cycles, "lbfgs_iters": mm.lbfgs_iters,
        }
        trace.append(rec)
        if trace_stream is not None:
            trace_stream.write(json.dumps(rec) + "\n")
        if best is None or cert.worst < best[2].worst:
            best = (V, mult, cert, beta)
        if cert.passed(tau):
            return AlmResult(V, mult, cert, True, k, beta, trace)
        if deadline is not None and time.perf_counter() > deadline:
            V, mult, cert, beta = best
            log.info("deadline reached in ALM iteration %d", k)
            return AlmResult(V, mult, cert, False, k, beta, trace)
        beta = min(cfg.beta_max, cfg.gamma_beta * beta)
    V, mult, cert, beta = best
    log.warning("ALM iteration cap reached; best residual %.3e > tau %.3e", cert.worst, tau)
    return AlmResult(V, mult, cert, False, cfg.max_iters, beta, trace)
