"""Adaptive moment estimation with bias correction."""
from __future__ import annotations

import time

import numpy as np

from ..errors import DivergedError
from .base import EquilibriumResult, SolveConfig, trace_row


def _terms(fn):
    return getattr(fn, "last_terms", None)


def _adam_run(energy_fn, x0, config: SolveConfig, lr):
    x = np.array(x0, dtype=np.float64).ravel()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2 = config.beta1, config.beta2
    decay = 1.0
    if config.lr_final is not None and config.max_iter > 1:
        decay = (config.lr_final / config.lr) ** (1.0 / (config.max_iter - 1))
    trace = []
    converged = False
    n_evals = 0
    it = 0
    for it in range(config.max_iter + 1):
        e, g = energy_fn(x)
        n_evals += 1
        trace.append(trace_row(it, e, _terms(energy_fn)))
        if not (np.isfinite(e) and np.all(np.isfinite(g))):
            raise DivergedError(f"non-finite energy at iteration {it}", trace)
        if config.gtol > 0 and np.max(np.abs(g), initial=0.0) <= config.gtol:
            converged = True
            break
        if it == config.max_iter:
            break
        t = it + 1
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        step = lr * decay ** it
        denom = np.sqrt(v / (1 - b2 ** t))
        denom += config.eps
        x = x - (step / (1 - b1 ** t)) * m / denom
    return x, trace, it, converged, n_evals


def minimize_first_order(energy_fn, x0, config: SolveConfig = None):
    """Adam on ``energy_fn(x) -> (E, grad)``.

    If the energy becomes non-finite the run restarts from ``x0`` with half
    the learning rate, at most ``config.max_halvings`` times; after that a
    :class:`DivergedError` carrying the last trace is raised.
    """
    config = config or SolveConfig(method="adam")
    shape = np.shape(x0)
    start = time.perf_counter()
    lr = config.lr
    halvings = 0
    while True:
        try:
            x, trace, it, converged, n_evals = _adam_run(energy_fn, x0, config, lr)
            break
        except DivergedError:
            if halvings >= config.max_halvings:
                raise
            halvings += 1
            lr *= 0.5
    return EquilibriumResult(
        positions=x.reshape(shape), trace=trace, n_iter=it, duration=time.perf_counter() - start,
        converged=converged, n_evals=n_evals, method="adam", info={"lr": lr, "halvings": halvings},
    )
