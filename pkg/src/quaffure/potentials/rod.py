"""Full Cosserat rod: stretch-shear, bend-twist and unit-quaternion terms.

Quaternions are stored ``(w, x, y, z)`` with one orientation per edge.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError, SingularityError
from .elastic import scatter_edges

E3 = np.array([0.0, 0.0, 1.0])


def qmul(a, b):
    aw, av = a[..., :1], a[..., 1:]
    bw, bv = b[..., :1], b[..., 1:]
    w = aw * bw - np.sum(av * bv, axis=-1, keepdims=True)
    v = aw * bv + bw * av + np.cross(av, bv)
    return np.concatenate([w, v], axis=-1)


def qconj(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def rotate_e3(q):
    """Vector part of the sandwich product ``q e3 conj(q)``."""
    w, x, y, z = (q[..., i] for i in range(4))
    return np.stack([2 * (x * z + w * y), 2 * (y * z - w * x), w * w - x * x - y * y + z * z], axis=-1)


def rotate_e3_jacobian(q):
    """``d rotate_e3 / dq`` as ``(..., 3, 4)``."""
    w, x, y, z = (q[..., i] for i in range(4))
    J = np.empty(q.shape[:-1] + (3, 4))
    J[..., 0, :] = np.stack([y, z, w, x], axis=-1)
    J[..., 1, :] = np.stack([-x, -w, z, y], axis=-1)
    J[..., 2, :] = np.stack([w, -x, -y, z], axis=-1)
    return 2.0 * J


def min_rotation(a, b):
    """Unit quaternion of the smallest rotation taking unit ``a`` onto unit ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a, b = np.broadcast_arrays(a, b)
    c = np.sum(a * b, axis=-1)
    q = np.concatenate([(1.0 + c)[..., None], np.cross(a, b)], axis=-1)
    opposite = 1.0 + c < 1e-12
    if np.any(opposite):
        # any axis orthogonal to a
        trial = np.where(np.abs(a[..., :1]) < 0.9, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
        axis = np.cross(a, trial)
        axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
        q[opposite] = np.concatenate([np.zeros(axis.shape[:-1] + (1,)), axis], axis=-1)[opposite]
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def orientations_from_directors(directors):
    """Parallel-transported edge frames whose third axis follows each director."""
    d = np.asarray(directors, dtype=np.float64)
    q = np.empty(d.shape[:-1] + (4,))
    q[..., 0, :] = min_rotation(E3, d[..., 0, :])
    for i in range(1, d.shape[-2]):
        q[..., i, :] = qmul(min_rotation(d[..., i - 1, :], d[..., i, :]), q[..., i - 1, :])
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def _check_q(q, n_edges_shape):
    q = np.asarray(q, dtype=np.float64)
    if q.shape != n_edges_shape + (4,):
        raise ShapeError(f"orientations must be {n_edges_shape + (4,)}, got {q.shape}")
    return q


def stretch_shear_energy(positions, orientations, rest_lengths, k):
    """``(k/2) sum |G|^2`` with ``G = (x_{i+1} - x_i)/l_rest - Im(q e3 q^*)``.

    Returns ``(energy, d/dx, d/dq)``.
    """
    x = np.asarray(positions, dtype=np.float64)
    l0 = np.asarray(rest_lengths, dtype=np.float64)
    q = _check_q(orientations, x.shape[:-2] + (x.shape[-2] - 1,))
    e = x[..., 1:, :] - x[..., :-1, :]
    gamma = e / l0[..., None] - rotate_e3(q)
    energy = 0.5 * k * np.sum(gamma * gamma)
    gx = scatter_edges(k * gamma / l0[..., None], x.shape[-2])
    gq = -k * np.einsum("...ab,...a->...b", rotate_e3_jacobian(q), gamma)
    return float(energy), gx, gq


def _im_conj_product(q, p):
    """``Im(conj(q) p)`` for paired quaternion arrays."""
    a, u = q[..., 0:1], q[..., 1:]
    b, v = p[..., 0:1], p[..., 1:]
    return a * v - b * u - np.cross(u, v)


def bend_twist_energy(orientations, rest_orientations, rest_lengths, k):
    """``(k/2) sum |O|^2`` over consecutive edge pairs.

    ``O = (2/l) (Im(conj(q_i) q_{i+1}) - Im(conj(q0_i) q0_{i+1}))`` with ``l`` the
    mean rest length of the two edges.  Returns ``(energy, d/dq)``.
    """
    q = np.asarray(orientations, dtype=np.float64)
    q0 = np.asarray(rest_orientations, dtype=np.float64)
    l0 = np.asarray(rest_lengths, dtype=np.float64)
    if q.shape != q0.shape or q.shape[-1] != 4:
        raise ShapeError("orientations and rest orientations must match, (..., E, 4)")
    if q.shape[-2] < 2:
        raise ShapeError("bend-twist needs at least two edges")
    lbar = 0.5 * (l0[..., 1:] + l0[..., :-1])
    scale = (2.0 / lbar)[..., None]
    qi, qj = q[..., :-1, :], q[..., 1:, :]
    omega = scale * (_im_conj_product(qi, qj) - _im_conj_product(q0[..., :-1, :], q0[..., 1:, :]))
    energy = 0.5 * k * np.sum(omega * omega)
    c = k * scale * omega  # dE/du where u = Im(conj(qi) qj)
    a, u = qi[..., 0:1], qi[..., 1:]
    b, v = qj[..., 0:1], qj[..., 1:]
    g_qi = np.concatenate([np.sum(v * c, axis=-1, keepdims=True), -b * c + np.cross(c, v)], axis=-1)
    g_qj = np.concatenate([-np.sum(u * c, axis=-1, keepdims=True), a * c + np.cross(u, c)], axis=-1)
    grad = np.zeros_like(q)
    grad[..., :-1, :] += g_qi
    grad[..., 1:, :] += g_qj
    return float(energy), grad


def unit_quaternion_energy(orientations, k):
    """``(k/2) sum (|q| - 1)^2``."""
    q = np.asarray(orientations, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1)
    if np.any(n < 1e-12):
        raise SingularityError("quaternion norm below 1e-12: unit-norm gradient undefined")
    r = n - 1.0
    energy = 0.5 * k * np.sum(r * r)
    grad = (k * r / n)[..., None] * q
    return float(energy), grad
