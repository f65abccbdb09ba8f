"""Solver configuration, results and trace export."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from ..errors import ConfigError

METHODS = ("adam", "lbfgs", "xpbd")


@dataclass(frozen=True)
class SolveConfig:
    """Hyperparameters of every solver.

    ``max_iter`` counts optimizer iterations (Adam, L-BFGS); XPBD runs
    ``xpbd_steps`` outer steps of ``xpbd_iters`` projection sweeps each.
    L-BFGS stops when the gradient infinity-norm drops below ``gtol`` or the
    energy decreased by less than ``ftol`` (relative) over the last
    ``ftol_window`` iterations.
    """

    method: str = "lbfgs"
    max_iter: int = 2000
    lr: float = 1e-3
    lr_final: Optional[float] = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-12
    max_halvings: int = 6
    memory: int = 10
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    max_line_search_failures: int = 50
    precondition: bool = True
    precondition_every: int = 20
    precondition_reg: float = 1e-6
    gtol: float = 1e-9
    ftol: float = 1e-11
    ftol_window: int = 5
    xpbd_steps: int = 30
    xpbd_iters: int = 200
    dt: float = 1.0 / 30.0
    jacobi: bool = False
    jacobi_relaxation: float = 0.5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown solver {self.method!r}; expected one of {METHODS}")
        for name in ("max_iter", "memory", "max_backtracks", "max_line_search_failures", "precondition_every", "ftol_window", "xpbd_steps", "xpbd_iters"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive count")
        for name in ("lr", "dt", "eps"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.gtol < 0 or self.ftol < 0:
            raise ConfigError("tolerances must be >= 0")
        if not 0 < self.backtrack < 1 or not 0 < self.armijo_c < 1:
            raise ConfigError("line search parameters must lie in (0, 1)")

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)


@dataclass
class EquilibriumResult:
    positions: np.ndarray
    trace: List[Dict[str, float]]
    n_iter: int
    duration: float
    converged: bool
    n_evals: int = 0
    orientations: Optional[np.ndarray] = None
    method: str = ""
    metrics: object = None
    info: Dict[str, object] = field(default_factory=dict)

    @property
    def energies(self):
        return np.array([row["total"] for row in self.trace])

    @property
    def final_energy(self):
        return float(self.trace[-1]["total"]) if self.trace else float("nan")


def trace_row(iteration, total, terms=None):
    row = {"iteration": int(iteration), "total": float(total)}
    if terms:
        row.update({k: float(v) for k, v in terms.items()})
    return row


def write_trace_csv(trace, path):
    """Write ``iteration,total,<term>...``; missing term values are left blank."""
    columns = ["iteration", "total"]
    for row in trace:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, restval="", lineterminator="\n")
        writer.writeheader()
        for row in trace:
            writer.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in row.items()})
