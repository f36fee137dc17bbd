"""Outer exact-penalty loop: increase ``rho`` until the factor is rank one.

Each outer iteration solves the rank-penalized subproblem with the augmented
Lagrangian solver at tolerance ``tau``, then grows ``rho`` and shrinks ``tau``.
The run stops once ``||V||_F^2 - ||V||_2^2 <= eps1`` and the feasibility
residual ``sqrt(||h(V)||^2 + ||min(V^T V, 0)||_F^2) <= eps2``.
"""

from __future__ import annotations

import logging
import struct
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .alm import AlmConfig, MultiplierState, alm_solve
from .assignment import permut_proj
from .constraints import LiftedConstraints, OrthogonalityConstraints, neg_residual
from .instance import LiftedCost, Permutation, QapInstance, infeasibility, objective, preprocess, relative_gap
from .localsearch import epalmls_hook
from .specfact import numerical_rank, penalty_gap, top_singular_triplet

log = logging.getLogger(__name__)

VARIANTS = ("epalm", "epalm1")


@dataclass(frozen=True)
class EpalmConfig:
    m: int = 100
    l_max: int = 1000
    rho0: float = 1e-8
    rho_max: float = 1e5
    eps1: float = 1e-5
    eps2: float = 1e-5
    tau1: float = 0.5
    tau_floor: float = 1e-3
    varsigma: float = 0.9
    sigma_fast: float = 1.3  # rho growth while rho <= sigma_switch
    sigma_slow: float = 1.2  # rho growth once rho > sigma_switch
    sigma_switch: float = 1e-3
    seed: int = 0
    variant: str = "epalm"
    local_search: bool = False
    ls_sweeps: int = 100
    normalize_cost: bool = True
    time_limit_s: Optional[float] = None  # soft limit, checked between MM cycles
    alm: AlmConfig = field(default_factory=AlmConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if not 0 < self.rho0 < self.rho_max:
            raise ValueError("need 0 < rho0 < rho_max")
        if not 0 < self.tau_floor < self.tau1 < 1:
            raise ValueError("need 0 < tau_floor < tau1 < 1")
        if self.m < 2:
            raise ValueError("m must be at least 2")

    def sigma(self, rho: float) -> float:
        return self.sigma_slow if rho > self.sigma_switch else self.sigma_fast


@dataclass
class SolveReport:
    instance: str
    variant: str
    seed: int
    obj: float
    gap_pct: Optional[float]
    infeas: float
    time_s: float
    rank_out: int
    final_rho: float
    certified: bool
    permutation: Permutation
    outer_iters: int
    penalty_gap: float
    feasibility: float
    extracted_obj: float  # objective of the top-direction projection alone
    local_search: bool = False
    trace: list = field(default_factory=list)
    V: Optional[np.ndarray] = field(default=None, repr=False)
    mult: Optional[MultiplierState] = field(default=None, repr=False)

    @property
    def label(self) -> str:
        return "epalmls" if self.local_search else self.variant

    def to_record(self, with_trace: bool = False) -> dict:
        rec = {
            "instance": self.instance,
            "variant": self.label,
            "seed": self.seed,
            "obj": self.obj,
            "gap_pct": self.gap_pct,
            "infeas": self.infeas,
            "time_s": self.time_s,
            "rank_out": self.rank_out,
            "final_rho": self.final_rho,
            "certified": self.certified,
            "outer_iters": self.outer_iters,
            "penalty_gap": self.penalty_gap,
            "feasibility": self.feasibility,
            "permutation": [int(i) for i in self.permutation],
        }
        if with_trace:
            rec["trace"] = self.trace
        return rec


def extract_solution(V: np.ndarray, n: int):
    """``(X_raw, perm)`` from the dominant rank-one component of ``V``.

    ``X_raw = mat(sigma1 Q1)`` with the sign chosen so its entries sum to a
    nonnegative value; ``perm`` is the nearest permutation to ``X_raw``.
    """
    trip = top_singular_triplet(V)
    x = trip.sigma1 * trip.Q1
    if x.sum() < 0:
        x = -x
    X_raw = x.reshape(n, n, order="F")
    return X_raw, permut_proj(X_raw)


def _model(variant: str, n: int):
    return LiftedConstraints(n) if variant == "epalm" else OrthogonalityConstraints(n)


def epalm_solve(inst: QapInstance, cfg: EpalmConfig = EpalmConfig(), trace_stream=None) -> SolveReport:
    """Run the exact-penalty relaxation on ``inst`` (original, unshifted data).

    Data are shifted to be nonnegative and the lifted cost is normalized by
    its spectral norm internally; the reported objective is evaluated on the
    original matrices.  The number of rows of ``V`` is ``min(cfg.m, n^2)``.
    """
    t0 = time.perf_counter()
    deadline = None if cfg.time_limit_s is None else t0 + cfg.time_limit_s
    n, p = inst.n, inst.p
    shifted, _ = preprocess(inst)
    cost = LiftedCost.from_instance(shifted, normalize=cfg.normalize_cost)
    model = _model(cfg.variant, n)
    m = min(cfg.m, p)
    rng = np.random.default_rng(cfg.seed)
    V = rng.standard_normal((m, p))

    rho, tau = cfg.rho0, cfg.tau1
    mult = None
    beta = None
    best_val, best_perm = np.inf, None
    trace = []
    certified = False
    pg = feas = np.inf
    l = 0
    for l in range(1, cfg.l_max + 1):
        res = alm_solve(V, rho, tau, cost, cfg.alm, model, mult=mult, beta=beta, trace_stream=trace_stream,
                        deadline=deadline)
        V, mult = res.V, res.mult
        if cfg.alm.warm_start_beta:
            beta = res.beta
        pg = penalty_gap(V)
        feas = float(np.hypot(np.linalg.norm(model.residual(V)), neg_residual(V)))
        rec = {
            "l": l, "rho": rho, "tau": tau, "alm_iters": res.iters, "alm_certified": res.certified,
            "r1": res.cert.r1, "r2": res.cert.r2, "r3": res.cert.r3,
            "penalty_gap": pg, "feasibility": feas,
        }
        if cfg.local_search:
            hook = epalmls_hook(V, inst, (best_val, best_perm), cfg.ls_sweeps)
            best_val, best_perm = hook.value, hook.perm
            rec["ls_best"] = best_val
        rec["time_s"] = time.perf_counter() - t0
        trace.append(rec)
        log.debug("outer %d: %s", l, rec)
        if pg <= cfg.eps1 and feas <= cfg.eps2:
            certified = True
            break
        if cfg.time_limit_s is not None and time.perf_counter() - t0 > cfg.time_limit_s:
            log.info("time limit reached after %d outer iterations", l)
            break
        if l < cfg.l_max:
            rho = min(cfg.sigma(rho) * rho, cfg.rho_max)
            tau = max(cfg.varsigma * tau, cfg.tau_floor)

    X_raw, perm = extract_solution(V, n)
    ext_val = objective(inst, perm)
    if ext_val <= best_val:
        best_val, best_perm = ext_val, perm
    elapsed = time.perf_counter() - t0
    return SolveReport(
        instance=inst.name,
        variant=cfg.variant,
        seed=cfg.seed,
        obj=float(best_val),
        gap_pct=relative_gap(best_val, inst.best_known),
        infeas=infeasibility(X_raw),
        time_s=elapsed,
        rank_out=max(1, numerical_rank(V)),
        final_rho=rho,
        certified=certified,
        permutation=best_perm,
        outer_iters=l,
        penalty_gap=pg,
        feasibility=feas,
        extracted_obj=ext_val,
        local_search=cfg.local_search,
        trace=trace,
        V=V,
        mult=mult,
    )


def epalm1_solve(inst: QapInstance, cfg: EpalmConfig = EpalmConfig(), trace_stream=None) -> SolveReport:
    """The same outer loop with the orthogonality-constraint subproblem."""
    return epalm_solve(inst, replace(cfg, variant="epalm1"), trace_stream)


# ---------------------------------------------------------------------------
# checkpoints: magic, version, m, p, k (little-endian uint32) then float64 data
# V (m x p), Lambda (p x p), eq (k), all row-major

_MAGIC = b"DCQP"
_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


def save_checkpoint(path: Union[str, Path], V: np.ndarray, mult: MultiplierState) -> None:
    V = np.ascontiguousarray(V, dtype="<f8")
    m, p = V.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, m, p, mult.eq.size))
        fh.write(V.tobytes())
        fh.write(np.ascontiguousarray(mult.Lambda, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(mult.eq, dtype="<f8").tobytes())


def load_checkpoint(path: Union[str, Path]):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("checkpoint too short")
    magic, version, m, p, k = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError("not a checkpoint file")
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    expected = _HEADER.size + 8 * (m * p + p * p + k)
    if len(data) != expected:
        raise ValueError(f"checkpoint size {len(data)} != expected {expected}")
    arr = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    V = arr[:m * p].reshape(m, p).copy()
    Lam = arr[m * p:m * p + p * p].reshape(p, p).copy()
    eq = arr[m * p + p * p:].copy()
    return V, MultiplierState(Lam, eq)
