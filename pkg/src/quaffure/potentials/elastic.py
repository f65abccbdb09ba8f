"""Position-based elastic terms: Hookean stretch, modified Cosserat, mass-spring.

All functions take positions of shape ``(..., N, 3)`` and return
``(energy, gradient)`` with the gradient shaped like the positions.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError, SingularityError, ValidationError


def _check(positions, edge_data, name):
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim < 2 or positions.shape[-1] != 3 or positions.shape[-2] < 2:
        raise ShapeError(f"positions must be (..., N>=2, 3), got {positions.shape}")
    edge_data = np.asarray(edge_data, dtype=np.float64)
    expected = positions.shape[:-2] + (positions.shape[-2] - 1,)
    if edge_data.shape[: len(expected)] != expected:
        raise ShapeError(f"{name} shape {edge_data.shape} does not match {expected}")
    return positions, edge_data


def scatter_edges(edge_grad, n_vertices):
    """Distribute d/d(edge) onto the two end vertices of every edge."""
    shape = edge_grad.shape[:-2] + (n_vertices, 3)
    g = np.zeros(shape)
    g[..., :-1, :] -= edge_grad
    g[..., 1:, :] += edge_grad
    return g


def stretch_energy(positions, rest_lengths, k_stretch):
    """``(k/2) * sum (l - l_rest)^2`` over edges."""
    x, l0 = _check(positions, rest_lengths, "rest_lengths")
    if np.any(l0 <= 0):
        raise ValidationError("rest lengths must be positive")
    e = x[..., 1:, :] - x[..., :-1, :]
    l = np.linalg.norm(e, axis=-1)
    if np.any(l == 0):
        raise SingularityError("zero-length segment: stretch gradient undefined")
    r = l - l0
    energy = 0.5 * k_stretch * np.sum(r * r)
    ge = (k_stretch * r / l)[..., None] * e
    return float(energy), scatter_edges(ge, x.shape[-2])


def cosserat_energy(positions, rest_lengths, directors, k_cosserat, variant="modified"):
    """Position-only Cosserat term ``(k/2) sum |G|^2``.

    ``modified``:   G = (x_{i+1} - x_i) / l_rest - d3
    ``shear_only``: G = (x_{i+1} - x_i) / l      - d3
    """
    x, l0 = _check(positions, rest_lengths, "rest_lengths")
    d3 = np.asarray(directors, dtype=np.float64)
    if d3.shape != x.shape[:-2] + (x.shape[-2] - 1, 3):
        raise ShapeError("directors must be one unit vector per edge")
    e = x[..., 1:, :] - x[..., :-1, :]
    if variant == "modified":
        gamma = e / l0[..., None] - d3
        ge = k_cosserat * gamma / l0[..., None]
    elif variant == "shear_only":
        l = np.linalg.norm(e, axis=-1)
        if np.any(l < 1e-12):
            raise SingularityError("segment shorter than 1e-12: shear-only term singular")
        t = e / l[..., None]
        gamma = t - d3
        # d(e/|e|)/de = (I - t t^T) / |e|
        proj = gamma - t * np.sum(t * gamma, axis=-1, keepdims=True)
        ge = k_cosserat * proj / l[..., None]
    else:
        raise ValidationError(f"unknown Cosserat variant {variant!r}")
    energy = 0.5 * k_cosserat * np.sum(gamma * gamma)
    return float(energy), scatter_edges(ge, x.shape[-2])


def second_neighbor_distances(positions):
    x = np.asarray(positions, dtype=np.float64)
    return np.linalg.norm(x[..., 2:, :] - x[..., :-2, :], axis=-1)


def mass_spring_energy(positions, rest_lengths, k_edge, k_bend, bend_rest=None):
    """Edge springs plus ``(i, i+2)`` bending springs, both Hookean.

    ``bend_rest`` holds the rest distances of the ``(i, i+2)`` pairs; it
    defaults to the sum of the two adjacent rest lengths (a straight rest strand).
    """
    x, l0 = _check(positions, rest_lengths, "rest_lengths")
    n = x.shape[-2]
    energy, grad = stretch_energy(x, l0, k_edge) if k_edge else (0.0, np.zeros_like(x))
    if n < 3 or not k_bend:
        return energy, grad
    if bend_rest is None:
        bend_rest = l0[..., 1:] + l0[..., :-1]
    bend_rest = np.asarray(bend_rest, dtype=np.float64)
    b = x[..., 2:, :] - x[..., :-2, :]
    lb = np.linalg.norm(b, axis=-1)
    if np.any(lb == 0):
        raise SingularityError("coincident second neighbors: bending spring singular")
    r = lb - bend_rest
    energy += 0.5 * k_bend * float(np.sum(r * r))
    gb = (k_bend * r / lb)[..., None] * b
    grad = grad.copy()
    grad[..., :-2, :] -= gb
    grad[..., 2:, :] += gb
    return energy, grad
