"""Limited-memory BFGS for smooth matrix-valued problems.

The two-loop recursion is implemented here; step lengths come from
``scipy.optimize.line_search`` (strong Wolfe).  When that fails the step falls
back to Armijo backtracking along the steepest-descent direction.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional, Tuple
import warnings

import numpy as np
from scipy.optimize import line_search
from scipy.optimize._linesearch import LineSearchWarning

ValueGrad = Callable[[np.ndarray], Tuple[float, np.ndarray]]


@dataclass
class LbfgsResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    grad_norm: float
    iters: int
    evals: int
    converged: bool
    fallback_steps: int  # line-search failures rescued by backtracking


class _Cache:
    """Memoizes the last few ``(x, f, g)`` so separate f/g callbacks share work."""

    def __init__(self, fun: ValueGrad, shape):
        self.fun = fun
        self.shape = shape
        self.evals = 0
        self._store = deque(maxlen=4)

    def __call__(self, x: np.ndarray):
        for xs, f, g in reversed(self._store):
            if xs is x or np.array_equal(xs, x):
                return f, g
        f, g = self.fun(x.reshape(self.shape))
        g = np.asarray(g, dtype=float).ravel()
        self.evals += 1
        self._store.append((x.copy(), float(f), g))
        return float(f), g

    def f(self, x):
        return self(x)[0]

    def g(self, x):
        return self(x)[1]


def lbfgs_minimize(
    fun: ValueGrad,
    x0: np.ndarray,
    eps: float,
    max_iters: int = 300,
    memory: int = 15,
    c1: float = 1e-4,
    c2: float = 0.9,
    mem: Optional["LbfgsMemory"] = None,
) -> LbfgsResult:
    """Minimize ``fun`` (returning value and gradient) from ``x0``.

    Stops at the first iterate with ``||grad||_F <= eps``; otherwise returns the
    lowest-value iterate seen after ``max_iters`` iterations.  Passing ``mem``
    reuses (and updates) curvature pairs from an earlier call, which is exact
    when the new objective differs from the old one by a linear term.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    shape = np.shape(x0)
    cache = _Cache(fun, shape)
    x = np.array(x0, dtype=float).ravel()
    f, g = cache(x)
    gnorm = float(np.linalg.norm(g))
    best = (f, x.copy(), g.copy(), gnorm)
    if mem is None:
        mem = LbfgsMemory(memory)
    fallbacks = 0
    it = 0
    while gnorm > eps and it < max_iters:
        it += 1
        d = mem.direction(g)
        if g @ d >= 0:  # not a descent direction: reset memory
            mem.clear()
            d = -g
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LineSearchWarning)
            alpha, _, _, f_new, _, g_new = line_search(
                cache.f, cache.g, x, d, gfk=g, old_fval=f, c1=c1, c2=c2, maxiter=30
            )
        if alpha is None or f_new is None or not np.isfinite(f_new):
            fallbacks += 1
            mem.clear()
            d = -g
            alpha, f_new, g_new = _backtrack(cache, x, f, g, d, c1)
            if alpha is None:
                break
        if g_new is None:
            g_new = cache.g(x + alpha * d)
        s = alpha * d
        x_new = x + s
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(s @ s):
            mem.push(s, y)
        x, f, g = x_new, float(f_new), g_new
        gnorm = float(np.linalg.norm(g))
        if f < best[0] or gnorm <= eps:
            best = (f, x.copy(), g.copy(), gnorm)
    converged = gnorm <= eps
    if converged:
        best = (f, x, g, gnorm)
    fb, xb, gb, nb = best
    return LbfgsResult(xb.reshape(shape), fb, gb.reshape(shape), nb, it, cache.evals, converged, fallbacks)


class LbfgsMemory:
    """The most recent curvature pairs ``(s, y, 1 / s.y)``."""

    def __init__(self, size: int):
        self.pairs = deque(maxlen=size)

    def __len__(self):
        return len(self.pairs)

    def clear(self):
        self.pairs.clear()

    def push(self, s, y):
        self.pairs.append((s, y, 1.0 / float(s @ y)))

    def direction(self, g):
        """``-H g`` by the two-loop recursion (steepest descent when empty)."""
        q = -g
        if not self.pairs:
            return q
        q = q.copy()
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        s, y, _ = self.pairs[-1]
        q *= (s @ y) / (y @ y)
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            q += (a - rho * (y @ q)) * s
        return q


def _backtrack(cache, x, f, g, d, c1, shrink=0.5, max_halvings=60):
    slope = float(g @ d)
    gn = np.linalg.norm(g)
    alpha = 1.0 / max(gn, 1.0)
    for _ in range(max_halvings):
        f_new, g_new = cache(x + alpha * d)
        if np.isfinite(f_new) and f_new <= f + c1 * alpha * slope:
            return alpha, f_new, g_new
        alpha *= shrink
    return None, None, None
