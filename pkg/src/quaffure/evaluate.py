"""Drape quality metrics and the inference scaling benchmark."""
from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from .errors import ShapeError, ValidationError
from .groom import Groom
from .potentials import MaterialParams
from .potentials.contact import gravity_energy


@dataclass(frozen=True)
class MetricsRecord:
    """One row of the quality table.

    ``body_intersection_pct``: percentage of non-root vertices with signed
    body distance below zero.  ``length_preservation``: sum over segments of
    ``|l - l_rest|`` in millimeters.  ``orientation_preservation``: sum over
    segments of the angle (radians) between the segment and its posed rest
    director.  ``gravity_potential``: ``-sum m g . x`` in joules.
    """

    time_seconds: float
    body_intersection_pct: float
    length_preservation: float
    orientation_preservation: float
    gravity_potential: float
    method: str = ""
    groom: str = ""
    pose: str = ""

    def __post_init__(self):
        values = (self.time_seconds, self.body_intersection_pct, self.length_preservation,
                  self.orientation_preservation, self.gravity_potential)
        if not all(np.isfinite(v) for v in values):
            raise ValidationError("metrics must be finite")
        if not 0.0 <= self.body_intersection_pct <= 100.0:
            raise ValidationError("intersection percentage outside [0, 100]")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)


METRIC_FIELDS = tuple(f.name for f in dataclasses.fields(MetricsRecord))


def _directions(x):
    e = np.diff(x, axis=-2)
    l = np.linalg.norm(e, axis=-1)
    return e / np.maximum(l, 1e-300)[..., None], l


def intersection_pct(x_hair, body, include_roots=False):
    """Percentage of (non-root) vertices strictly inside the body."""
    bvh = getattr(body, "bvh", body)
    x = np.asarray(x_hair, dtype=np.float64)
    pts = x.reshape(-1, 3) if include_roots else x[..., 1:, :].reshape(-1, 3)
    if len(pts) == 0 or bvh is None:
        return 0.0
    return 100.0 * float(np.count_nonzero(bvh.query(pts).distance < 0.0)) / len(pts)


def compute_metrics(x_hair, groom: Groom, body=None, material: MaterialParams = None, x_posed=None,
                    time_seconds=0.0, method="", pose="", include_roots=False) -> MetricsRecord:
    """Metrics of a drape.

    Rest lengths come from ``groom``; reference directors from ``x_posed``
    (the rigidly posed groom), or from the rest groom when omitted.
    ``body`` is a posed body or a BVH; without it intersection is 0.
    """
    material = material or MaterialParams()
    x = np.asarray(x_hair, dtype=np.float64)
    if x.shape != groom.positions.shape:
        raise ShapeError(f"drape {x.shape} does not match groom {groom.positions.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("drape positions must be finite")
    if x_posed is None:
        d3 = groom.rest_directors
    else:
        x_posed = np.asarray(x_posed, dtype=np.float64)
        if x_posed.shape != x.shape:
            raise ShapeError("x_posed must match the drape shape")
        d3 = _directions(x_posed)[0]
    dirs, lengths = _directions(x)
    cos = np.clip(np.sum(dirs * d3, axis=-1), -1.0, 1.0)
    return MetricsRecord(
        time_seconds=float(time_seconds),
        body_intersection_pct=intersection_pct(x, body, include_roots) if body is not None else 0.0,
        length_preservation=1000.0 * float(np.sum(np.abs(lengths - groom.rest_lengths))),
        orientation_preservation=float(np.sum(np.arccos(cos))),
        gravity_potential=gravity_energy(x, material.vertex_mass, material.g)[0],
        method=method, groom=groom.name, pose=pose,
    )


def write_metrics_csv(records: Sequence[MetricsRecord], path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.to_dict().items()})


def read_metrics_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(MetricsRecord(**{k: (v if k in ("method", "groom", "pose") else float(v)) for k, v in row.items()}))
    return out


# -- scaling benchmark ----------------------------------------------------------

@dataclass
class BenchResult:
    batch_sizes: List[int]
    total_ms: List[float]
    slope_ms: float
    intercept_ms: float
    r2: float

    @property
    def per_item_ms(self):
        return [t / b for t, b in zip(self.total_ms, self.batch_sizes)]

    def rows(self):
        return [(b, t, t / b) for b, t in zip(self.batch_sizes, self.total_ms)]


def linear_fit(x, y):
    """Least-squares line ``y = a x + b`` and its R^2."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = np.stack([x, np.ones_like(x)], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(np.sum((y - (a * x + b)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2


def bench_scaling(predict: Callable, items: Sequence, batch_sizes=(1, 10, 100, 1000), warmup=5, repeats=10,
                  clock=time.perf_counter) -> BenchResult:
    """Median wall time of ``predict(items[:B])`` per batch size ``B``.

    ``warmup`` untimed calls precede the ``repeats`` timed ones at each size.
    """
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    items = list(items)
    sizes = [int(b) for b in batch_sizes]
    if not sizes or min(sizes) < 1 or max(sizes) > len(items):
        raise ValidationError(f"batch sizes must lie in [1, {len(items)}]")
    totals = []
    for B in sizes:
        batch = items[:B]
        for _ in range(warmup):
            predict(batch)
        times = []
        for _ in range(repeats):
            t0 = clock()
            predict(batch)
            times.append(clock() - t0)
        totals.append(1000.0 * float(np.median(times)))
    a, b, r2 = linear_fit(sizes, totals)
    return BenchResult(sizes, totals, a, b, r2)


def write_bench_csv(result: BenchResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["batch", "total_ms", "per_item_ms"])
        for b, t, p in result.rows():
            w.writerow([b, repr(float(t)), repr(float(p))])
        w.writerow([])
        w.writerow(["r2", repr(float(result.r2))])
        w.writerow(["slope_ms", repr(float(result.slope_ms))])
        w.writerow(["intercept_ms", repr(float(result.intercept_ms))])
