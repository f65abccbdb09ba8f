"""Quasi-static equilibrium solvers."""
from __future__ import annotations

import numpy as np

from ..potentials.total import EnergyContext, EnergyProblem
from .adam import minimize_first_order
from .base import METHODS, EquilibriumResult, SolveConfig, write_trace_csv
from .lbfgs import minimize_lbfgs, two_loop
from .xpbd import compile_constraints, xpbd_quasistatic


def solve_equilibrium(x_init, context: EnergyContext, material, config: SolveConfig = None, q_init=None):
    """Minimize the hair energy from ``x_init`` with ``config.method``.

    Returns positions shaped like ``x_init``; pinned vertices are untouched.
    """
    config = config or SolveConfig()
    if config.method == "xpbd":
        return xpbd_quasistatic(x_init, context, material, config)
    problem = EnergyProblem(material, context, x_init, q_init)
    solver = minimize_lbfgs if config.method == "lbfgs" else minimize_first_order
    res = solver(problem, problem.x0, config)
    x, q = problem.unpack(res.positions)
    res.positions = x
    res.orientations = q
    res.n_evals = problem.n_evals
    return res


__all__ = [
    "METHODS", "SolveConfig", "EquilibriumResult", "write_trace_csv",
    "minimize_first_order", "minimize_lbfgs", "two_loop", "xpbd_quasistatic", "compile_constraints",
    "solve_equilibrium",
]
