"""Quasi-static XPBD: velocity reset, gravity prediction, compliant projection.

Constraints compiled from the material (compliance ``alpha = 1/k``):

* distance ``|x_j - x_i| - l_rest`` (stretch, and second-neighbor springs
  for the mass-spring stack),
* direction ``(x_j - x_i)/l_rest - d3``, a 3-vector constraint whose
  gradient is isotropic, so the per-edge update is solved exactly,
* body planes ``(x - p) . n - D >= 0`` from closest points frozen per step,
* density ``rho_rest - rho(x) >= 0`` per vertex, projected Jacobi-style.

The cubic penalties are thereby replaced by compliant inequality
constraints at the same threshold, an approximation of the continuous
energy rather than its exact minimizer.
"""
from __future__ import annotations

import time

import numpy as np
from numba import njit

from ..errors import ConfigError, DivergedError
from ..potentials.total import EnergyContext, total_energy
from ..spatial import HashGrid
from .base import EquilibriumResult, SolveConfig, trace_row


@njit(cache=True)
def _distance_gs(x, w, i0, i1, rest, lam, alpha):
    for c in range(i0.shape[0]):
        a, b = i0[c], i1[c]
        wsum = w[a] + w[b]
        if wsum == 0.0:
            continue
        dx = x[b, 0] - x[a, 0]
        dy = x[b, 1] - x[a, 1]
        dz = x[b, 2] - x[a, 2]
        l = np.sqrt(dx * dx + dy * dy + dz * dz)
        if l < 1e-15:
            continue
        C = l - rest[c]
        dl = (-C - alpha[c] * lam[c]) / (wsum + alpha[c])
        lam[c] += dl
        s = dl / l
        x[a, 0] -= w[a] * s * dx
        x[a, 1] -= w[a] * s * dy
        x[a, 2] -= w[a] * s * dz
        x[b, 0] += w[b] * s * dx
        x[b, 1] += w[b] * s * dy
        x[b, 2] += w[b] * s * dz


@njit(cache=True)
def _direction_gs(x, w, i0, i1, rest, d3, lam, alpha):
    for c in range(i0.shape[0]):
        a, b = i0[c], i1[c]
        inv = 1.0 / rest[c]
        denom = (w[a] + w[b]) * inv * inv + alpha[c]
        if denom == 0.0:
            continue
        for k in range(3):
            C = (x[b, k] - x[a, k]) * inv - d3[c, k]
            dl = (-C - alpha[c] * lam[c, k]) / denom
            lam[c, k] += dl
            x[a, k] -= w[a] * inv * dl
            x[b, k] += w[b] * inv * dl


@njit(cache=True)
def _distance_jacobi(x, w, i0, i1, rest, lam, alpha, omega):
    acc = np.zeros_like(x)
    for c in range(i0.shape[0]):
        a, b = i0[c], i1[c]
        wsum = w[a] + w[b]
        if wsum == 0.0:
            continue
        d = x[b] - x[a]
        l = np.sqrt(np.sum(d * d))
        if l < 1e-15:
            continue
        dl = omega * (-(l - rest[c]) - alpha[c] * lam[c]) / (wsum + alpha[c])
        lam[c] += dl
        acc[a] -= w[a] * dl / l * d
        acc[b] += w[b] * dl / l * d
    x += acc


@njit(cache=True)
def _direction_jacobi(x, w, i0, i1, rest, d3, lam, alpha, omega):
    acc = np.zeros_like(x)
    for c in range(i0.shape[0]):
        a, b = i0[c], i1[c]
        inv = 1.0 / rest[c]
        denom = (w[a] + w[b]) * inv * inv + alpha[c]
        if denom == 0.0:
            continue
        for k in range(3):
            C = (x[b, k] - x[a, k]) * inv - d3[c, k]
            dl = omega * (-C - alpha[c] * lam[c, k]) / denom
            lam[c, k] += dl
            acc[a, k] -= w[a] * inv * dl
            acc[b, k] += w[b] * inv * dl
    x += acc


@njit(cache=True)
def _planes(x, w, ids, p, n, margin, lam, alpha):
    for c in range(ids.shape[0]):
        v = ids[c]
        if w[v] == 0.0:
            continue
        C = (x[v, 0] - p[c, 0]) * n[c, 0] + (x[v, 1] - p[c, 1]) * n[c, 1] + (x[v, 2] - p[c, 2]) * n[c, 2] - margin
        dl = (-C - alpha * lam[c]) / (w[v] + alpha)
        new = max(lam[c] + dl, 0.0)
        dl = new - lam[c]
        lam[c] = new
        for k in range(3):
            x[v, k] += w[v] * dl * n[c, k]


@njit(cache=True)
def _density_jacobi(x, w, m, pi, pj, h, rho_rest, lam, alpha, omega):
    nv = x.shape[0]
    rho = np.full(nv, 4.0 * m)
    grad_self = np.zeros((nv, 3))
    dw = np.zeros((pi.shape[0], 3))
    for c in range(pi.shape[0]):
        a, b = pi[c], pj[c]
        d = x[a] - x[b]
        r = np.sqrt(np.sum(d * d))
        q = r / h
        if q <= 1.0:
            W = 4.0 - 6.0 * q * q + 3.0 * q ** 3
            dW = (-12.0 * q + 9.0 * q * q) / h
        elif q <= 2.0:
            W = (2.0 - q) ** 3
            dW = -3.0 * (2.0 - q) ** 2 / h
        else:
            W = 0.0
            dW = 0.0
        rho[a] += m * W
        if r > 0.0:
            dw[c] = m * dW * d / r
        grad_self[a] += dw[c]
    denom = np.zeros(nv)
    for a in range(nv):
        denom[a] = w[a] * np.sum(grad_self[a] * grad_self[a])
    for c in range(pi.shape[0]):
        denom[pi[c]] += w[pj[c]] * np.sum(dw[c] * dw[c])
    dlam = np.zeros(nv)
    for a in range(nv):
        C = rho_rest[a] - rho[a]
        if denom[a] + alpha == 0.0:
            continue
        dl = omega * (-C - alpha * lam[a]) / (denom[a] + alpha)
        new = max(lam[a] + dl, 0.0)
        dlam[a] = new - lam[a]
        lam[a] = new
    acc = np.zeros_like(x)
    # C_a = rho_rest - rho_a:  grad_a C_a = -grad_self[a],  grad_b C_a = +dw
    for a in range(nv):
        acc[a] -= w[a] * dlam[a] * grad_self[a]
    for c in range(pi.shape[0]):
        acc[pj[c]] += w[pj[c]] * dlam[pi[c]] * dw[c]
    x += acc


def _compliance(k, dt2):
    # only constraints with k > 0 are compiled
    return 1.0 / (k * dt2)


def compile_constraints(shape, context: EnergyContext, material):
    """Index arrays and compliances for every constraint family."""
    names = context.enabled(material)
    S, N = shape[0], shape[1]
    base = (np.arange(S)[:, None] * N + np.arange(N - 1)[None, :]).ravel()
    out = {"distance": [], "direction": None}
    if "full_cosserat" == material.elastic:
        raise ConfigError("XPBD supports the cosserat and mass_spring elastic stacks only")
    if "stretch" in names or "mass_spring" in names:
        if material.k_stretch > 0:
            out["distance"].append((base, base + 1, np.asarray(context.rest_lengths).ravel(), material.k_stretch))
    if "mass_spring" in names and material.k_ms_bend > 0 and N > 2:
        b2 = (np.arange(S)[:, None] * N + np.arange(N - 2)[None, :]).ravel()
        out["distance"].append((b2, b2 + 2, np.asarray(context.bend_rest).ravel(), material.k_ms_bend))
    if "cosserat" in names and material.k_cosserat > 0:
        out["direction"] = (base, base + 1, np.asarray(context.rest_lengths).ravel(),
                            np.asarray(context.directors).reshape(-1, 3), material.k_cosserat)
    out["gravity"] = "gravity" in names
    out["body"] = "body_collision" in names and material.k_bc > 0
    out["density"] = "self_collision" in names and material.k_sc > 0
    return out


def xpbd_quasistatic(x_init, context: EnergyContext, material, config: SolveConfig = None, record_trace=True):
    """Run ``config.xpbd_steps`` quasi-static steps from ``x_init`` (S, N, 3).

    Roots (``context.free == False``) have zero inverse mass and never move.
    """
    config = config or SolveConfig(method="xpbd")
    start = time.perf_counter()
    x0 = np.array(x_init, dtype=np.float64)
    shape = x0.shape
    x = np.ascontiguousarray(x0.reshape(-1, 3))
    free = np.ones(shape[:-1], dtype=bool) if context.free is None else np.asarray(context.free, dtype=bool)
    free = free.ravel()
    m = float(material.vertex_mass)
    w = np.where(free, 1.0 / m, 0.0)
    dt2 = config.dt ** 2
    cons = compile_constraints(shape, context, material)
    dist = [(a, b, r.astype(np.float64), np.full(len(a), _compliance(k, dt2))) for a, b, r, k in cons["distance"]]
    direction = cons["direction"]
    if direction is not None:
        a, b, r, d3, k = direction
        direction = (a, b, r, np.ascontiguousarray(d3), np.full(len(a), _compliance(k, dt2)))
    g = material.g if cons["gravity"] else np.zeros(3)
    h = material.smoothing_length
    rho_rest = None if not cons["density"] else np.asarray(context.rest_density, dtype=np.float64).ravel()
    omega = config.jacobi_relaxation
    free_ids = np.flatnonzero(free)
    trace = []
    if record_trace:
        r = total_energy(x.reshape(shape), material, context)
        trace.append(trace_row(0, r.total, r.terms))
    last_move = np.inf
    for step in range(1, config.xpbd_steps + 1):
        prev = x.copy()
        # velocities reset to zero, then one gravity step
        x[free] += dt2 * g
        lam_dist = [np.zeros(len(c[0])) for c in dist]
        lam_dir = None if direction is None else np.zeros((len(direction[0]), 3))
        planes = None
        if cons["body"] and len(free_ids):
            cp = context.bvh.query(x[free_ids])
            planes = (free_ids, np.ascontiguousarray(cp.point), np.ascontiguousarray(cp.direction),
                      np.zeros(len(free_ids)), 1.0 / (material.k_bc * dt2))
        dens = None
        if rho_rest is not None:
            pi, pj = HashGrid(x, 2 * h).pairs(2 * h)
            dens = (pi, pj, np.zeros(len(x)), 1.0 / (material.k_sc * dt2))
        for _ in range(config.xpbd_iters):
            for (a, b, r, alpha), lam in zip(dist, lam_dist):
                if config.jacobi:
                    _distance_jacobi(x, w, a, b, r, lam, alpha, omega)
                else:
                    _distance_gs(x, w, a, b, r, lam, alpha)
            if direction is not None:
                a, b, r, d3, alpha = direction
                if config.jacobi:
                    _direction_jacobi(x, w, a, b, r, d3, lam_dir, alpha, omega)
                else:
                    _direction_gs(x, w, a, b, r, d3, lam_dir, alpha)
            if planes is not None:
                ids, p, n, lam, alpha = planes
                _planes(x, w, ids, p, n, material.collision_margin, lam, alpha)
            if dens is not None:
                pi, pj, lam, alpha = dens
                _density_jacobi(x, w, m, pi, pj, h, rho_rest, lam, alpha, omega)
        if not np.all(np.isfinite(x)):
            raise DivergedError(f"non-finite positions at XPBD step {step}", trace)
        last_move = float(np.max(np.abs(x - prev), initial=0.0))
        if record_trace:
            r = total_energy(x.reshape(shape), material, context)
            trace.append(trace_row(step, r.total, r.terms))
    return EquilibriumResult(
        positions=x.reshape(shape).copy(), trace=trace, n_iter=config.xpbd_steps,
        duration=time.perf_counter() - start, converged=last_move < 1e-6, method="xpbd",
        info={"last_move": last_move},
    )

