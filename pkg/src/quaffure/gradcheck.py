"""Central finite differences against analytic gradients, term by term."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .potentials import (
    MaterialParams,
    body_collision_energy,
    cosserat_energy,
    gravity_energy,
    mass_spring_energy,
    pose_reg_energy,
    self_collision_energy,
    stretch_energy,
    sph_density,
)
from .potentials.rod import (
    bend_twist_energy,
    orientations_from_directors,
    stretch_shear_energy,
    unit_quaternion_energy,
)


def finite_difference(f, x, step=1e-6):
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    x = np.array(x, dtype=np.float64)
    flat = x.ravel()
    g = np.zeros_like(flat)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        fp = f(x)
        flat[k] = orig - step
        fm = f(x)
        flat[k] = orig
        g[k] = (fp - fm) / (2.0 * step)
    return g.reshape(x.shape)


def relative_error(analytic, numeric):
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


# -- random configurations ---------------------------------------------------

def random_strands(rng, n_strands=2, n_vertices=6, seg=0.01, jitter=0.3):
    """Wiggly strands with O(seg) edges, never degenerate."""
    dirs = rng.normal(size=(n_strands, n_vertices - 1, 3))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    lengths = seg * (1.0 + jitter * rng.uniform(-1, 1, size=(n_strands, n_vertices - 1)))
    start = rng.normal(scale=seg, size=(n_strands, 1, 3))
    x = np.concatenate([start, start + np.cumsum(dirs * lengths[..., None], axis=1)], axis=1)
    return x


def _perturbed_rest(rng, x, scale=0.2):
    l = np.linalg.norm(np.diff(x, axis=-2), axis=-1)
    return l * (1.0 + scale * rng.uniform(-1, 1, size=l.shape))


def _random_directors(rng, shape):
    d = rng.normal(size=shape + (3,))
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


@dataclass
class TermCheck:
    name: str
    max_error: float
    n_configs: int
    tolerance: float

    @property
    def passed(self):
        return self.max_error <= self.tolerance


def _sphere_bvh():
    from .fixtures import icosphere
    from .spatial import TriangleBVH

    v, t = icosphere(3, radius=0.1)
    return TriangleBVH(v, t)


def term_cases(material: MaterialParams, rng) -> Dict[str, Callable]:
    """One generator per energy term.

    Each generator returns ``(f, grad, x, step)`` for a fresh random
    configuration: ``f(x)`` is the scalar energy, ``grad`` its analytic
    gradient at ``x``.  Generators reject samples close to a kink
    (``max(., 0)`` boundary, closest-feature switch) by margin filtering.
    """
    mat = material
    cases = {}

    def stretch():
        x = random_strands(rng)
        l0 = _perturbed_rest(rng, x)
        f = lambda y: stretch_energy(y, l0, mat.k_stretch)[0]
        return f, stretch_energy(x, l0, mat.k_stretch)[1], x, 1e-7

    def cosserat(variant):
        def gen():
            x = random_strands(rng)
            l0 = _perturbed_rest(rng, x)
            d3 = _random_directors(rng, x.shape[:-2] + (x.shape[-2] - 1,))
            f = lambda y: cosserat_energy(y, l0, d3, mat.k_cosserat, variant)[0]
            return f, cosserat_energy(x, l0, d3, mat.k_cosserat, variant)[1], x, 1e-7
        return gen

    def mass_spring():
        x = random_strands(rng)
        l0 = _perturbed_rest(rng, x)
        far = np.linalg.norm(x[..., 2:, :] - x[..., :-2, :], axis=-1) * (1 + 0.2 * rng.uniform(-1, 1, (x.shape[0], x.shape[1] - 2)))
        f = lambda y: mass_spring_energy(y, l0, mat.k_stretch, mat.k_ms_bend, far)[0]
        return f, mass_spring_energy(x, l0, mat.k_stretch, mat.k_ms_bend, far)[1], x, 1e-7

    def _rod_state():
        x = random_strands(rng)
        l0 = _perturbed_rest(rng, x)
        q = rng.normal(size=x.shape[:-2] + (x.shape[-2] - 1, 4))
        q /= np.linalg.norm(q, axis=-1, keepdims=True)
        q *= 1.0 + 0.2 * rng.uniform(-1, 1, size=q.shape[:-1] + (1,))
        return x, l0, q

    def stretch_shear():
        x, l0, q = _rod_state()
        z = np.concatenate([x.ravel(), q.ravel()])
        nx = x.size

        def f(zz):
            return stretch_shear_energy(zz[:nx].reshape(x.shape), zz[nx:].reshape(q.shape), l0, mat.k_stretch_shear)[0]

        _, gx, gq = stretch_shear_energy(x, q, l0, mat.k_stretch_shear)
        return f, np.concatenate([gx.ravel(), gq.ravel()]), z, 1e-7

    def bend_twist():
        x, l0, q = _rod_state()
        q0 = orientations_from_directors(_random_directors(rng, q.shape[:-1]))
        f = lambda y: bend_twist_energy(y, q0, l0, mat.k_bend_twist)[0]
        return f, bend_twist_energy(q, q0, l0, mat.k_bend_twist)[1], q, 1e-6

    def unit_quaternion():
        _, _, q = _rod_state()
        f = lambda y: unit_quaternion_energy(y, mat.k_unit_quaternion)[0]
        return f, unit_quaternion_energy(q, mat.k_unit_quaternion)[1], q, 1e-6

    def gravity():
        x = random_strands(rng)
        f = lambda y: gravity_energy(y, mat.vertex_mass, mat.g)[0]
        return f, gravity_energy(x, mat.vertex_mass, mat.g)[1], x, 1e-6

    bvh_holder = []

    def body_collision():
        if not bvh_holder:
            bvh_holder.append(_sphere_bvh())
        bvh = bvh_holder[0]
        D = mat.collision_margin
        step = 1e-7
        while True:
            dirs = rng.normal(size=(12, 3))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            x = dirs * (0.1 + rng.uniform(-0.02, D * 0.9, size=(12, 1)))
            cp = bvh.query(x)
            # keep samples away from the max() kink and from closest-feature switches
            ok = np.abs(D - cp.distance) > 1e-5
            probe = [bvh.query(x + s * e).triangle for e in np.eye(3) for s in (-10 * step, 10 * step)]
            ok &= np.all([p == cp.triangle for p in probe], axis=0)
            if ok.sum() >= 4:
                x = x[ok]
                break
        f = lambda y: body_collision_energy(y, bvh, D, mat.k_bc)[0]
        return f, body_collision_energy(x, bvh, D, mat.k_bc)[1], x, step

    def self_collision():
        h = mat.smoothing_length
        while True:
            x = rng.uniform(0, 3 * h, size=(12, 3))
            rest = sph_density(x + rng.normal(scale=0.3 * h, size=x.shape), mat.vertex_mass, h) * rng.uniform(0.7, 1.0, size=12)
            rho = sph_density(x, mat.vertex_mass, h)
            r = np.linalg.norm(x[:, None] - x[None], axis=-1)
            scale = max(float(np.max(rho)), 1e-30)
            far_from_kinks = np.all(np.abs(rho - rest) / scale > 1e-4)
            off_breaks = np.all((np.abs(r - h) > 1e-4 * h) & (np.abs(r - 2 * h) > 1e-4 * h) | (r == 0))
            if far_from_kinks and off_breaks:
                break
        f = lambda y: self_collision_energy(y, mat.vertex_mass, h, rest, mat.k_sc)[0]
        return f, self_collision_energy(x, mat.vertex_mass, h, rest, mat.k_sc)[1], x, 1e-7

    def pose_reg():
        frames = rng.normal(scale=0.01, size=(mat.n_pose_reg, 3, 4, 3))
        f = lambda y: pose_reg_energy(list(y), mat.k_pr)[0]
        return f, pose_reg_energy(list(frames), mat.k_pr)[1], frames, 1e-6

    cases["stretch"] = stretch
    cases["cosserat_modified"] = cosserat("modified")
    cases["cosserat_shear_only"] = cosserat("shear_only")
    cases["mass_spring"] = mass_spring
    cases["stretch_shear"] = stretch_shear
    cases["bend_twist"] = bend_twist
    cases["unit_quaternion"] = unit_quaternion
    cases["gravity"] = gravity
    cases["body_collision"] = body_collision
    cases["self_collision"] = self_collision
    cases["pose_reg"] = pose_reg
    return cases


def run_gradcheck(material=None, n_configs=100, tolerance=1e-5, seed=0, corrupt=None) -> List[TermCheck]:
    """Check every term on ``n_configs`` random configurations.

    ``corrupt`` names a term whose analytic gradient is deliberately scaled
    (fault injection for testing the checker itself).
    """
    material = material or MaterialParams()
    rng = np.random.default_rng(seed)
    results = []
    for name, gen in term_cases(material, rng).items():
        worst = 0.0
        for _ in range(n_configs):
            f, g, x, step = gen()
            if name == corrupt:
                g = g * 1.01 + 1e-3 * np.max(np.abs(g) + 1.0)
            worst = max(worst, relative_error(g, finite_difference(f, x, step)))
        results.append(TermCheck(name, worst, n_configs, tolerance))
    return results
