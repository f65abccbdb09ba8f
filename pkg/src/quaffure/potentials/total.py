"""Assembly of the full hair energy and a flat-vector view for optimizers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from ..errors import ShapeError, ValidationError
from .contact import body_collision_energy, gravity_energy, self_collision_energy, sph_density
from .elastic import cosserat_energy, mass_spring_energy, second_neighbor_distances, stretch_energy
from .material import MaterialParams
from .rod import bend_twist_energy, orientations_from_directors, stretch_shear_energy, unit_quaternion_energy

ELASTIC_TERMS = {
    "cosserat": ("stretch", "cosserat"),
    "mass_spring": ("mass_spring",),
    "full_cosserat": ("stretch_shear", "bend_twist", "unit_quaternion"),
}
EXTERNAL_TERMS = ("gravity", "body_collision", "self_collision")
ORIENTATION_TERMS = ("stretch_shear", "bend_twist", "unit_quaternion")


def rest_density(rest_positions, material: MaterialParams):
    """Reference SPH density of the rest groom, one value per vertex."""
    return sph_density(rest_positions, material.vertex_mass, material.smoothing_length)


@dataclass
class EnergyContext:
    """Everything but the positions that the energy depends on."""

    rest_lengths: np.ndarray
    directors: np.ndarray
    bend_rest: Optional[np.ndarray] = None
    rest_orientations: Optional[np.ndarray] = None
    rest_density: Optional[np.ndarray] = None
    bvh: object = None
    free: Optional[np.ndarray] = None
    terms: Optional[frozenset] = None

    @classmethod
    def from_posed(cls, groom, x_posed, material: MaterialParams, body=None, pin_roots=True,
                   terms=None, rest_density_values=None):
        """Context whose elastic reference is the rigidly posed groom.

        Directors and second-neighbor distances are re-derived from
        ``x_posed``; rest lengths and rest density come from the rest groom.
        ``body`` may be a :class:`PosedBody` or a BVH.
        """
        x_posed = np.asarray(x_posed, dtype=np.float64)
        e = x_posed[..., 1:, :] - x_posed[..., :-1, :]
        directors = e / np.linalg.norm(e, axis=-1, keepdims=True)
        if rest_density_values is None:
            rest_density_values = groom.rest_density
        if rest_density_values is None:
            rest_density_values = rest_density(groom.positions, material)
        free = np.ones(x_posed.shape[:-1], dtype=bool)
        if pin_roots:
            free[..., 0] = False
        bvh = getattr(body, "bvh", body)
        return cls(
            rest_lengths=np.array(groom.rest_lengths),
            directors=directors,
            bend_rest=second_neighbor_distances(x_posed),
            rest_density=np.asarray(rest_density_values),
            bvh=bvh,
            free=free,
            terms=None if terms is None else frozenset(terms),
        )

    def enabled(self, material: MaterialParams):
        base = ELASTIC_TERMS[material.elastic] + EXTERNAL_TERMS
        names = [t for t in base if self.terms is None or t in self.terms]
        if self.bvh is None and "body_collision" in names:
            names.remove("body_collision")
        if self.rest_density is None and "self_collision" in names:
            names.remove("self_collision")
        return tuple(names)

    def orientations_rest(self):
        if self.rest_orientations is None:
            self.rest_orientations = orientations_from_directors(self.directors)
        return self.rest_orientations


@dataclass
class EnergyReport:
    total: float
    terms: Dict[str, float]
    gradient: np.ndarray
    gradient_q: Optional[np.ndarray] = None
    term_gradients: Dict[str, np.ndarray] = field(default_factory=dict)


def total_energy(positions, material: MaterialParams, context: EnergyContext, orientations=None):
    """Sum of every enabled term; see :class:`EnergyContext` for toggles."""
    x = np.asarray(positions, dtype=np.float64)
    if x.shape != context.rest_lengths.shape[:-1] + (context.rest_lengths.shape[-1] + 1, 3):
        raise ShapeError(f"positions {x.shape} do not match the context")
    names = context.enabled(material)
    needs_q = any(t in ORIENTATION_TERMS for t in names)
    if needs_q:
        if orientations is None:
            raise ValidationError("the full Cosserat stack needs orientations")
        orientations = np.asarray(orientations, dtype=np.float64)
    terms, grads, grads_q = {}, {}, {}
    m, h = material.vertex_mass, material.smoothing_length
    for name in names:
        gq = None
        if name == "stretch":
            e, g = stretch_energy(x, context.rest_lengths, material.k_stretch)
        elif name == "cosserat":
            e, g = cosserat_energy(x, context.rest_lengths, context.directors, material.k_cosserat, material.variant)
        elif name == "mass_spring":
            e, g = mass_spring_energy(x, context.rest_lengths, material.k_stretch, material.k_ms_bend, context.bend_rest)
        elif name == "stretch_shear":
            e, g, gq = stretch_shear_energy(x, orientations, context.rest_lengths, material.k_stretch_shear)
        elif name == "bend_twist":
            e, gq = bend_twist_energy(orientations, context.orientations_rest(), context.rest_lengths, material.k_bend_twist)
            g = np.zeros_like(x)
        elif name == "unit_quaternion":
            e, gq = unit_quaternion_energy(orientations, material.k_unit_quaternion)
            g = np.zeros_like(x)
        elif name == "gravity":
            e, g = gravity_energy(x, m, material.g)
        elif name == "body_collision":
            e, g = body_collision_energy(x, context.bvh, material.collision_margin, material.k_bc, context.free)
        elif name == "self_collision":
            if material.k_sc == 0:
                e, g = 0.0, np.zeros_like(x)
            else:
                e, g = self_collision_energy(x, m, h, context.rest_density, material.k_sc)
        terms[name] = e
        grads[name] = g
        if gq is not None:
            grads_q[name] = gq
    total = float(sum(terms.values()))
    gradient = np.zeros_like(x)
    for g in grads.values():
        gradient = gradient + g
    gradient_q = None
    if needs_q:
        gradient_q = np.zeros_like(orientations)
        for g in grads_q.values():
            gradient_q = gradient_q + g
    return EnergyReport(total, terms, gradient, gradient_q, grads)


class EnergyProblem:
    """Flat-vector objective over the free vertices (and orientations if any).

    Pinned vertices keep their initial positions exactly.
    """

    def __init__(self, material: MaterialParams, context: EnergyContext, x_init, q_init=None):
        self.material = material
        self.context = context
        self.x_init = np.array(x_init, dtype=np.float64)
        free = context.free
        self.free = np.ones(self.x_init.shape[:-1], dtype=bool) if free is None else np.asarray(free, dtype=bool)
        self.with_q = any(t in ORIENTATION_TERMS for t in context.enabled(material))
        if self.with_q:
            if q_init is None:
                q_init = context.orientations_rest()
            self.q_init = np.array(q_init, dtype=np.float64)
        else:
            self.q_init = None
        self.n_x = int(self.free.sum()) * 3
        self.n_evals = 0
        self.last_terms = None

    @property
    def x0(self):
        parts = [self.x_init[self.free].ravel()]
        if self.with_q:
            parts.append(self.q_init.ravel())
        return np.concatenate(parts)

    def unpack(self, z):
        z = np.asarray(z, dtype=np.float64)
        x = self.x_init.copy()
        x[self.free] = z[: self.n_x].reshape(-1, 3)
        q = z[self.n_x :].reshape(self.q_init.shape) if self.with_q else None
        return x, q

    def report(self, z):
        x, q = self.unpack(z)
        return total_energy(x, self.material, self.context, q)

    def hessian_approx(self, z):
        """PSD Hessian model over the optimization variables (free x, then q)."""
        from scipy import sparse

        x, _ = self.unpack(z)
        H = elastic_hessian(x, self.material, self.context)
        sel = np.flatnonzero(np.repeat(self.free.ravel(), 3))
        H = H[sel][:, sel]
        if self.with_q:
            m = self.material
            l = float(np.mean(self.context.rest_lengths))
            scale = m.k_unit_quaternion + 4 * m.k_stretch_shear + 16 * m.k_bend_twist / l ** 2
            H = sparse.block_diag([H, scale * sparse.identity(self.q_init.size)])
        return H.tocsc()

    def __call__(self, z):
        self.n_evals += 1
        r = self.report(z)
        self.last_terms = r.terms
        g = [r.gradient[self.free].ravel()]
        if self.with_q:
            g.append(r.gradient_q.ravel())
        return r.total, np.concatenate(g)


def _edge_blocks(x, i0, i1, rest, k_axial, k_iso):
    """Per-edge 3x3 PSD blocks ``k_axial [t t^T + max(1 - l0/l, 0)(I - t t^T)] + k_iso I``."""
    e = x[i1] - x[i0]
    l = np.linalg.norm(e, axis=1)
    t = e / np.maximum(l, 1e-300)[:, None]
    tt = t[:, :, None] * t[:, None, :]
    lateral = np.maximum(1.0 - rest / np.maximum(l, 1e-300), 0.0)
    eye = np.eye(3)[None]
    return k_axial[:, None, None] * (tt + lateral[:, None, None] * (eye - tt)) + k_iso[:, None, None] * eye


def elastic_hessian(positions, material: MaterialParams, context: EnergyContext):
    """Sparse PSD approximation of the position Hessian (3V x 3V).

    Exact for the modified Cosserat term, PSD-projected for springs, plus the
    frozen-normal Hessian ``6 k_bc (D - d) n n^T`` of active body contacts.
    Used as the initial inverse-Hessian model of preconditioned L-BFGS.
    """
    from scipy import sparse

    x = np.asarray(positions, dtype=np.float64)
    S, N = x.shape[0], x.shape[1]
    flat = x.reshape(-1, 3)
    V = len(flat)
    names = context.enabled(material)
    rows, cols, vals = [], [], []

    def add_edges(i0, i1, blocks):
        for a, b, sign in ((i0, i0, 1), (i1, i1, 1), (i0, i1, -1), (i1, i0, -1)):
            r = (3 * a[:, None, None] + np.arange(3)[None, :, None]).repeat(3, axis=2)
            c = (3 * b[:, None, None] + np.arange(3)[None, None, :]).repeat(3, axis=1)
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append((sign * blocks).ravel())

    base = (np.arange(S)[:, None] * N + np.arange(N - 1)[None, :]).ravel()
    rest = np.asarray(context.rest_lengths).ravel()
    k_axial = np.zeros(len(base))
    k_iso = np.zeros(len(base))
    if "stretch" in names or "mass_spring" in names:
        k_axial += material.k_stretch
    if "stretch_shear" in names:
        k_iso += material.k_stretch_shear / rest ** 2
    if "cosserat" in names:
        k_iso += material.k_cosserat / rest ** 2
    add_edges(base, base + 1, _edge_blocks(flat, base, base + 1, rest, k_axial, k_iso))
    if "mass_spring" in names and N > 2:
        b2 = (np.arange(S)[:, None] * N + np.arange(N - 2)[None, :]).ravel()
        kb = np.full(len(b2), material.k_ms_bend)
        add_edges(b2, b2 + 2, _edge_blocks(flat, b2, b2 + 2, np.asarray(context.bend_rest).ravel(), kb, 0 * kb))
    if "body_collision" in names and material.k_bc > 0:
        free = np.ones(V, dtype=bool) if context.free is None else np.asarray(context.free).ravel()
        ids = np.flatnonzero(free)
        if len(ids):
            cp = context.bvh.query(flat[ids])
            pen = np.maximum(material.collision_margin - cp.distance, 0.0)
            act = pen > 0
            n = cp.direction[act]
            blocks = (6.0 * material.k_bc * pen[act])[:, None, None] * n[:, :, None] * n[:, None, :]
            a = ids[act]
            r = (3 * a[:, None, None] + np.arange(3)[None, :, None]).repeat(3, axis=2)
            c = (3 * a[:, None, None] + np.arange(3)[None, None, :]).repeat(3, axis=1)
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(blocks.ravel())
    if not rows:
        return sparse.csr_matrix((3 * V, 3 * V))
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(3 * V, 3 * V)
    )
