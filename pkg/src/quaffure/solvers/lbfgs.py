"""Limited-memory BFGS with Armijo backtracking."""
from __future__ import annotations

import time
from collections import deque

import numpy as np

from ..errors import DivergedError, StagnationError
from .base import EquilibriumResult, SolveConfig, trace_row

CURVATURE_EPS = 1e-12


def two_loop(g, pairs, h0=None):
    """Apply the inverse-Hessian estimate to ``g`` by the two-loop recursion.

    ``h0`` applies the initial inverse Hessian; without it the usual scalar
    ``s^T y / y^T y`` is used.
    """
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    if h0 is not None:
        q = h0(q)
    elif pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _factor(H, reg):
    """Return ``q -> (H + mu I)^-1 q`` with ``mu`` relative to the mean diagonal."""
    from scipy import sparse
    from scipy.sparse.linalg import splu

    n = H.shape[0]
    diag = H.diagonal()
    mu = reg * max(float(np.mean(np.abs(diag))), 1e-300)
    lu = splu((H + mu * sparse.identity(n, format="csc")).tocsc())
    return lu.solve


def minimize_lbfgs(energy_fn, x0, config: SolveConfig = None):
    """Quasi-Newton descent; the recorded energy trace is non-increasing.

    Curvature pairs with ``y^T s <= 1e-12`` are rejected, and a failed line
    search clears the memory so the next attempt is steepest descent.  Fifty
    consecutive failures raise :class:`StagnationError`.
    """
    config = config or SolveConfig()
    shape = np.shape(x0)
    start = time.perf_counter()
    x = np.array(x0, dtype=np.float64).ravel()
    e, g = energy_fn(x)
    n_evals = 1
    trace = [trace_row(0, e, getattr(energy_fn, "last_terms", None))]
    if not np.isfinite(e) or not np.all(np.isfinite(g)):
        raise DivergedError("non-finite energy at the initial state", trace)
    pairs = deque(maxlen=config.memory)
    failures = 0
    precision_floor = False
    converged = np.max(np.abs(g), initial=0.0) <= config.gtol
    it = 0
    h0 = None
    refresh = 0
    use_pc = config.precondition and hasattr(energy_fn, "hessian_approx")
    while not converged and it < config.max_iter:
        if use_pc and (h0 is None or refresh >= config.precondition_every):
            h0 = _factor(energy_fn.hessian_approx(x), config.precondition_reg)
            pairs.clear()
            refresh = 0
        refresh += 1
        d = -two_loop(g, list(pairs), h0)
        slope = g @ d
        if not slope < 0:
            pairs.clear()
            d = -g if h0 is None else -h0(g)
            slope = g @ d
        alpha = 1.0
        if not pairs and h0 is None:
            # first steepest-descent step: move at most ~1e-3 per coordinate
            alpha = min(1.0, 1e-3 / max(np.max(np.abs(d)), 1e-300))
        accepted = False
        spread = 0.0
        g_norm = np.linalg.norm(g)
        for _ in range(config.max_backtracks):
            x_new = x + alpha * d
            e_new, g_new = energy_fn(x_new)
            n_evals += 1
            if np.isfinite(e_new) and e_new <= e + config.armijo_c * alpha * slope:
                # at roundoff level Armijo cannot tell points apart; then require a smaller gradient
                if e_new < e or np.linalg.norm(g_new) < g_norm:
                    accepted = True
                    break
            spread = max(spread, abs(e_new - e)) if np.isfinite(e_new) else np.inf
            alpha *= config.backtrack
        if not accepted:
            if not pairs and spread <= 64 * np.finfo(float).eps * max(abs(e), np.finfo(float).tiny):
                # every trial is within roundoff of e: nothing left to gain
                precision_floor = True
                break
            failures += 1
            if failures >= config.max_line_search_failures:
                raise StagnationError(f"line search failed {failures} consecutive times", trace)
            pairs.clear()
            continue
        failures = 0
        it += 1
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > CURVATURE_EPS:
            pairs.append((s, y, 1.0 / sy))
        else:
            # rejected curvature pair: restart from (preconditioned) steepest descent
            pairs.clear()
        x, e, g = x_new, e_new, g_new
        trace.append(trace_row(it, e, getattr(energy_fn, "last_terms", None)))
        if np.max(np.abs(g)) <= config.gtol:
            converged = True
        elif config.ftol > 0 and it >= config.ftol_window:
            window = trace[-1 - config.ftol_window]["total"] - e
            if window <= config.ftol * max(abs(e), np.finfo(float).tiny):
                converged = True
    return EquilibriumResult(
        positions=x.reshape(shape), trace=trace, n_iter=it, duration=time.perf_counter() - start,
        converged=bool(converged), n_evals=n_evals, method="lbfgs",
        info={"precision_floor": precision_floor},
    )
