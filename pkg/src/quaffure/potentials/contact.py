"""Gravity, body collision and SPH-density self-collision."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, GeometryError
from ..spatial import HashGrid


def gravity_energy(positions, mass, gravity):
    """``sum -m g^T x``; the gradient is the constant ``-m g`` per vertex."""
    x = np.asarray(positions, dtype=np.float64)
    g = np.asarray(gravity, dtype=np.float64)
    if np.ndim(mass) == 0:
        m = float(mass)
        grad = np.empty_like(x)
        grad[...] = -m * g
        return -m * float(np.sum(x @ g)), grad
    m = np.broadcast_to(np.asarray(mass, dtype=np.float64), x.shape[:-1])
    energy = -float(np.sum(m * (x @ g)))
    grad = np.broadcast_to(-m[..., None] * g, x.shape).copy()
    return energy, grad


def body_collision_energy(positions, bvh, margin, k_bc, free=None, closest=None):
    """``k_bc sum max(D - d(x), 0)^3`` over free vertices.

    ``d`` is the signed distance to the closest body point, signed by the
    owning triangle's outward normal.  The correspondence is held fixed while
    differentiating.  ``closest`` may pass a precomputed query of the flattened
    positions.
    """
    if bvh is None:
        raise GeometryError("empty body mesh")
    x = np.asarray(positions, dtype=np.float64)
    flat = x.reshape(-1, 3)
    sel = np.ones(len(flat), dtype=bool) if free is None else np.asarray(free, dtype=bool).ravel()
    grad = np.zeros_like(flat)
    if not np.any(sel) or k_bc == 0:
        return 0.0, grad.reshape(x.shape)
    cp = closest if closest is not None else bvh.query(flat[sel])
    pen = np.maximum(margin - cp.distance, 0.0)
    energy = k_bc * float(np.sum(pen ** 3))
    grad[sel] = (-3.0 * k_bc * pen * pen)[:, None] * cp.direction
    return energy, grad.reshape(x.shape)


def sph_kernel(r, h):
    """Piecewise cubic kernel: 4 - 6q^2 + 3q^3 on [0, h], (2 - q)^3 on [h, 2h], 0 beyond."""
    q = np.asarray(r, dtype=np.float64) / h
    inner = 4.0 - 6.0 * q * q + 3.0 * q ** 3
    outer = (2.0 - q) ** 3
    return np.where(q <= 1.0, inner, np.where(q <= 2.0, outer, 0.0))


def sph_kernel_derivative(r, h):
    """dW/dr of :func:`sph_kernel`."""
    q = np.asarray(r, dtype=np.float64) / h
    inner = (-12.0 * q + 9.0 * q * q) / h
    outer = -3.0 * (2.0 - q) ** 2 / h
    return np.where(q <= 1.0, inner, np.where(q <= 2.0, outer, 0.0))


def kernel_branches(r, h):
    """Values and derivatives of both polynomial pieces, for continuity audits."""
    q = r / h
    return {
        "inner": (4.0 - 6.0 * q * q + 3.0 * q ** 3, (-12.0 * q + 9.0 * q * q) / h),
        "outer": ((2.0 - q) ** 3, -3.0 * (2.0 - q) ** 2 / h),
    }


def _pairs(points, h, pairs=None):
    if pairs is not None:
        return pairs
    return HashGrid(points, 2.0 * h).pairs(2.0 * h)


def sph_density(positions, mass, h, pairs=None):
    """``rho_i = sum_j m_j W(|x_i - x_j|, h)``, self term included."""
    if not h > 0:
        raise ConfigError("smoothing length h must be > 0")
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    m = np.broadcast_to(np.asarray(mass, dtype=np.float64), (len(pts),))
    i, j = _pairs(pts, h, pairs)
    r = np.linalg.norm(pts[i] - pts[j], axis=1)
    rho = m * sph_kernel(0.0, h)
    rho = rho + np.bincount(i, weights=m[j] * sph_kernel(r, h), minlength=len(pts))
    return rho


def self_collision_energy(positions, mass, h, rest_density, k_sc, pairs=None):
    """``k_sc sum max(rho(x) - rho_rest, 0)^3`` with the analytic density gradient."""
    if not h > 0:
        raise ConfigError("smoothing length h must be > 0")
    x = np.asarray(positions, dtype=np.float64)
    pts = x.reshape(-1, 3)
    m = np.broadcast_to(np.asarray(mass, dtype=np.float64), (len(pts),))
    i, j = _pairs(pts, h, pairs)
    diff = pts[i] - pts[j]
    r = np.linalg.norm(diff, axis=1)
    rho = m * sph_kernel(0.0, h) + np.bincount(i, weights=m[j] * sph_kernel(r, h), minlength=len(pts))
    excess = np.maximum(rho - np.asarray(rest_density, dtype=np.float64).ravel(), 0.0)
    energy = k_sc * float(np.sum(excess ** 3))
    coeff = 3.0 * k_sc * excess * excess
    # d rho_i / d x_i = sum_j m_j W'(r) u_ij ; d rho_i / d x_j = -m_j W'(r) u_ij
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(r[:, None] > 0, diff / r[:, None], 0.0)
    w = (coeff[i] * m[j] * sph_kernel_derivative(r, h))[:, None] * u
    grad = np.zeros_like(pts)
    for k in range(3):
        grad[:, k] = np.bincount(i, weights=w[:, k], minlength=len(pts)) - np.bincount(
            j, weights=w[:, k], minlength=len(pts)
        )
    return energy, grad.reshape(x.shape)


def density_exceedance(positions, mass, h, rest_density):
    """Per-vertex ``max(rho - rho_rest, 0)``."""
    rho = sph_density(positions, mass, h)
    return np.maximum(rho - np.asarray(rest_density).ravel(), 0.0)
