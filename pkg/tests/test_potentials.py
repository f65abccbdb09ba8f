import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from quaffure.errors import ConfigError, GeometryError, ShapeError, SingularityError
from quaffure.fixtures import icosphere
from quaffure.gradcheck import finite_difference, random_strands, relative_error
from quaffure.groom import Groom
from quaffure.potentials import (
    EnergyContext,
    MaterialParams,
    bend_twist_energy,
    body_collision_energy,
    cosserat_energy,
    gravity_energy,
    kernel_branches,
    mass_spring_energy,
    orientations_from_directors,
    pose_reg_energy,
    rest_density,
    rotate_e3,
    self_collision_energy,
    sph_density,
    sph_kernel,
    sph_kernel_derivative,
    stretch_energy,
    stretch_shear_energy,
    total_energy,
    unit_quaternion_energy,
)
from quaffure.spatial import TriangleBVH, closest_points_brute

H = 0.01


def check_grad(f, grad, x, step=1e-6, tol=1e-6):
    assert relative_error(grad, finite_difference(f, x, step)) <= tol


def test_stretch_closed_form():
    x = np.array([[0, 0, 0], [1.5, 0, 0]], dtype=float)
    e, g = stretch_energy(x, [1.0], 2.0)
    assert e == pytest.approx(0.25, abs=1e-15)
    e0, g0 = stretch_energy(x, [1.5], 2.0)
    assert e0 == 0 and not g0.any()


def test_stretch_fd(rng):
    x = random_strands(rng)
    l0 = np.linalg.norm(np.diff(x, axis=1), axis=-1)
    l0 = l0 * rng.uniform(0.8, 1.2, l0.shape)
    e, g = stretch_energy(x, l0, 3.0)
    check_grad(lambda y: stretch_energy(y, l0, 3.0)[0], g, x, step=1e-8)


def test_stretch_singular():
    with pytest.raises(SingularityError):
        stretch_energy(np.zeros((2, 3)), [1.0], 1.0)


@pytest.mark.parametrize("variant", ["modified", "shear_only"])
def test_cosserat_aligned_zero(variant):
    x = np.array([[0, 0, 0], [0, 0, 0.5]], dtype=float)
    e, g = cosserat_energy(x, [0.5], [[0, 0, 1.0]], 1.0, variant)
    assert e == 0 and not g.any()


def test_cosserat_perpendicular():
    x = np.array([[0, 0, 0], [1.0, 0, 0]])
    e, _ = cosserat_energy(x, [1.0], [[0, 1.0, 0]], 1.0, "modified")
    assert e == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("variant", ["modified", "shear_only"])
def test_cosserat_fd(rng, variant):
    x = random_strands(rng)
    l0 = np.linalg.norm(np.diff(x, axis=1), axis=-1)
    d = rng.normal(size=l0.shape + (3,))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    _, g = cosserat_energy(x, l0, d, 2.0, variant)
    check_grad(lambda y: cosserat_energy(y, l0, d, 2.0, variant)[0], g, x, step=1e-8)


def test_cosserat_shear_only_singular():
    with pytest.raises(SingularityError):
        cosserat_energy(np.zeros((2, 3)), [1.0], [[0, 0, 1.0]], 1.0, "shear_only")


def test_stretch_shear_identity_and_aligned():
    x = np.array([[0, 0, 0], [0, 0, 0.3]])
    e, gx, gq = stretch_shear_energy(x, np.array([[1.0, 0, 0, 0]]), [0.3], 5.0)
    assert e == 0
    d = np.array([[0.6, 0.0, 0.8]])
    q = orientations_from_directors(d)
    assert np.allclose(rotate_e3(q), d, atol=1e-15)
    e, _, _ = stretch_shear_energy(np.array([[0, 0, 0], 0.3 * d[0]]), q, [0.3], 5.0)
    assert e == pytest.approx(0.0, abs=1e-25)


def test_rotate_e3_matches_matrix(rng):
    q = rng.normal(size=(20, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    R = Rotation.from_quat(np.roll(q, -1, axis=1)).as_matrix()
    assert np.allclose(rotate_e3(q), R[:, :, 2], atol=1e-14)


def test_stretch_shear_fd(rng):
    x = random_strands(rng, 1, 5)
    l0 = np.linalg.norm(np.diff(x, axis=1), axis=-1)
    q = rng.normal(size=l0.shape + (4,))
    _, gx, gq = stretch_shear_energy(x, q, l0, 3.0)
    check_grad(lambda y: stretch_shear_energy(y, q, l0, 3.0)[0], gx, x, step=1e-8)
    check_grad(lambda p: stretch_shear_energy(x, p, l0, 3.0)[0], gq, q)


def test_bend_twist_closed_form():
    phi = 0.3
    q0 = np.tile([1.0, 0, 0, 0], (2, 1))
    q = np.array([[1.0, 0, 0, 0], [np.cos(phi), np.sin(phi), 0, 0]])
    e, _ = bend_twist_energy(q, q0, [0.02, 0.02], 2.0)
    assert e == pytest.approx(0.5 * 2.0 * (2 / 0.02) ** 2 * np.sin(phi) ** 2, rel=1e-14)
    e0, g0 = bend_twist_energy(q0, q0, [0.02, 0.02], 2.0)
    assert e0 == 0 and not g0.any()


def test_bend_twist_fd(rng):
    q = rng.normal(size=(2, 5, 4))
    q0 = rng.normal(size=(2, 5, 4))
    l0 = rng.uniform(0.5, 1.5, (2, 5))
    _, g = bend_twist_energy(q, q0, l0, 1.5)
    check_grad(lambda p: bend_twist_energy(p, q0, l0, 1.5)[0], g, q)
    with pytest.raises(ShapeError):
        bend_twist_energy(q[:, :1], q0[:, :1], l0[:, :1], 1.0)


def test_unit_quaternion():
    assert unit_quaternion_energy(np.array([[0.6, 0.8, 0, 0]]), 3.0)[0] == pytest.approx(0.0, abs=1e-30)
    assert unit_quaternion_energy(np.array([[2.0, 0, 0, 0]]), 2.0)[0] == 1.0
    with pytest.raises(SingularityError):
        unit_quaternion_energy(np.zeros((1, 4)), 1.0)


def test_unit_quaternion_fd(rng):
    q = rng.normal(size=(3, 4, 4))
    _, g = unit_quaternion_energy(q, 2.5)
    check_grad(lambda p: unit_quaternion_energy(p, 2.5)[0], g, q)


def test_gravity():
    g = (0.0, -9.81, 0.0)
    assert gravity_energy(np.zeros((1, 3)), 1.0, g)[0] == 0
    e, grad = gravity_energy(np.array([[0.0, 2.0, 0.0]]), 1.0, g)
    assert e == pytest.approx(19.62, abs=1e-12)
    x = np.random.default_rng(1).normal(size=(4, 7, 3))
    _, grad = gravity_energy(x, 0.5, g)
    assert np.array_equal(grad, np.broadcast_to(-0.5 * np.array(g), x.shape))


def sphere_bvh(radius=1.0, sub=3):
    v, t = icosphere(sub, radius=radius)
    return v, t, TriangleBVH(v, t)


def test_body_collision_outside_and_on_surface():
    v, t, bvh = sphere_bvh()
    cp = bvh.query(np.array([[0.0, 2.0, 0.0]]))
    x_out = cp.point + (0.01 + 1e-4) * cp.normal
    e, g = body_collision_energy(x_out, bvh, 0.01, 1.0)
    assert e == 0 and not g.any()
    x_on = cp.point
    e, g = body_collision_energy(x_on, bvh, 0.01, 1.0)
    assert e == pytest.approx(1e-6, rel=1e-9)
    n = bvh.query(x_on).normal[0]
    assert np.allclose(g[0] / np.linalg.norm(g[0]), -n)  # energy falls along +normal
    with pytest.raises(GeometryError):
        body_collision_energy(x_on, None, 0.01, 1.0)


def test_body_collision_brute_force_and_fd(rng):
    v, t, bvh = sphere_bvh()
    x = rng.normal(size=(300, 3))
    x = x / np.linalg.norm(x, axis=1, keepdims=True) * rng.uniform(0.97, 1.01, (300, 1))
    D, k = 0.02, 1e3
    e, g = body_collision_energy(x, bvh, D, k)
    brute = closest_points_brute(v, t, x)
    pen = np.maximum(D - brute.distance, 0.0)
    assert e == pytest.approx(k * np.sum(pen ** 3), rel=1e-12)
    # finite differences on vertices far from a closest-feature switch
    for i in np.flatnonzero(pen > 0)[:20]:
        xi = x[i:i + 1]
        _, gi = body_collision_energy(xi, bvh, D, k)
        fd = finite_difference(lambda y: body_collision_energy(y, bvh, D, k)[0], xi, 1e-7)
        if bvh.query(xi + 1e-6).triangle[0] == bvh.query(xi - 1e-6).triangle[0]:
            assert relative_error(gi, fd) <= 1e-5


def test_kernel_values():
    assert sph_kernel(0.0, H) == 4.0
    assert sph_kernel(H, H) == 1.0
    assert sph_kernel(2 * H, H) == 0.0
    assert sph_kernel(3 * H, H) == 0.0


def test_kernel_c1_continuity():
    b_h = kernel_branches(H, H)
    assert b_h["inner"][0] == pytest.approx(b_h["outer"][0], abs=1e-12)
    assert b_h["inner"][1] == pytest.approx(-3 / H, rel=1e-12)
    assert b_h["outer"][1] == pytest.approx(-3 / H, rel=1e-12)
    b_2h = kernel_branches(2 * H, H)
    assert b_2h["outer"] == (0.0, 0.0)
    r = np.linspace(0, 2.5 * H, 101)
    fd = (sph_kernel(r + 1e-9, H) - sph_kernel(r - 1e-9, H)) / 2e-9
    inner = np.abs(r - H) > 1e-6
    assert np.allclose(sph_kernel_derivative(r[inner], H), fd[inner], atol=1e-3 / H)


def all_pairs_energy(x, m, h, rho_rest, k):
    r = np.linalg.norm(x[:, None] - x[None], axis=-1)
    rho = (m * sph_kernel(r, h)).sum(axis=1)
    return k * np.sum(np.maximum(rho - rho_rest, 0) ** 3), rho


def test_self_collision_isolated_vertex():
    e, g = self_collision_energy(np.zeros((1, 3)), 1.0, H, np.array([4.0]), 1.0)
    assert e == 0 and not g.any()


def test_self_collision_all_pairs_oracle(rng):
    x = rng.uniform(0, 0.05, (200, 3))
    m = 1e-3 / 24
    rho_rest = np.full(200, 2 * 4 * m)
    e, g = self_collision_energy(x, m, H, rho_rest, 1e3)
    e_ref, rho_ref = all_pairs_energy(x, m, H, rho_rest, 1e3)
    assert np.allclose(sph_density(x, m, H), rho_ref, rtol=1e-12, atol=0)
    assert e == pytest.approx(e_ref, rel=1e-12)
    sub = rng.choice(200, 25, replace=False)

    def f(y):
        z = x.copy()
        z[sub] = y
        return all_pairs_energy(z, m, H, rho_rest, 1e3)[0]

    assert relative_error(g[sub], finite_difference(f, x[sub], 1e-7)) <= 1e-5
    with pytest.raises(ConfigError):
        self_collision_energy(x, m, 0.0, rho_rest, 1.0)


def test_mass_spring_closed_form():
    x = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0]], dtype=float)
    e, _ = mass_spring_energy(x, [1.0, 1.0], 5.0, 1.0)
    assert e == pytest.approx(0.5 * (np.sqrt(2) - 2) ** 2, rel=1e-14)
    straight = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    assert mass_spring_energy(straight, [1.0, 1.0], 5.0, 1.0)[0] == 0


def test_mass_spring_fd(rng):
    x = random_strands(rng)
    l0 = np.linalg.norm(np.diff(x, axis=1), axis=-1) * 1.1
    b0 = np.linalg.norm(x[:, 2:] - x[:, :-2], axis=-1) * 0.9
    _, g = mass_spring_energy(x, l0, 2.0, 0.7, b0)
    check_grad(lambda y: mass_spring_energy(y, l0, 2.0, 0.7, b0)[0], g, x, step=1e-8)


def test_pose_reg():
    f = np.zeros((3, 5, 3))
    assert pose_reg_energy([f, f, f], 10.0)[0] == 0
    v = np.array([0.3, -0.2, 0.5])
    g = f.copy()
    g[1, 2] = v
    e, _ = pose_reg_energy([f, g], 4.0)
    assert e == pytest.approx(4.0 * v @ v / 2, rel=1e-14)
    with pytest.raises(ShapeError):
        pose_reg_energy([f], 1.0)
    with pytest.raises(ShapeError):
        pose_reg_energy([f, f[:2]], 1.0)


def test_pose_reg_fd(rng):
    frames = rng.normal(size=(4, 2, 3, 3))
    _, g = pose_reg_energy(list(frames), 3.0)
    check_grad(lambda y: pose_reg_energy(list(y), 3.0)[0], g, frames)


def rest_context(groom, material, body=None):
    return EnergyContext.from_posed(groom, groom.positions, material, body)


def test_rest_state_zero_energy(groom20, body, material):
    mat = material.replace(gravity=(0.0, 0.0, 0.0))
    rep = total_energy(groom20.positions, mat, rest_context(groom20, mat, None))
    for name, value in rep.terms.items():
        assert value == pytest.approx(0.0, abs=1e-20), name
    ms = mat.replace(elastic="mass_spring")
    rep = total_energy(groom20.positions, ms, rest_context(groom20, ms))
    assert rep.terms["mass_spring"] == pytest.approx(0.0, abs=1e-20)


def test_total_bookkeeping_and_fd(groom20, material, rng):
    x = groom20.positions + rng.normal(0, 2e-3, groom20.positions.shape)
    g_small = groom20.replace(positions=groom20.positions[:4], root_uv=groom20.root_uv[:4],
                              attachment_triangle=groom20.attachment_triangle[:4],
                              attachment_barycentric=groom20.attachment_barycentric[:4])
    x = x[:4]
    v, t, bvh = sphere_bvh(0.05)
    ctx = EnergyContext.from_posed(g_small, g_small.positions, material, None)
    rep = total_energy(x, material, ctx)
    assert rep.total == pytest.approx(sum(rep.terms.values()), rel=1e-10)
    assert np.allclose(rep.gradient, sum(rep.term_gradients.values()), rtol=0, atol=1e-12)
    fd = finite_difference(lambda y: total_energy(y, material, ctx).total, x, 1e-7)
    assert relative_error(rep.gradient, fd) <= 1e-5


def test_full_cosserat_total_needs_orientations(groom20, material):
    mat = material.replace(elastic="full_cosserat")
    ctx = rest_context(groom20, mat)
    with pytest.raises(Exception):
        total_energy(groom20.positions, mat, ctx)
    q = orientations_from_directors(ctx.directors)
    rep = total_energy(groom20.positions, mat.replace(gravity=(0, 0, 0)), ctx, q)
    assert rep.total == pytest.approx(0.0, abs=1e-16)


def test_translation_invariance(groom20, material, rng):
    x = groom20.positions + rng.normal(0, 1e-3, groom20.positions.shape)
    t = np.array([0.3, -0.7, 1.1])
    ctx = rest_context(groom20, material)
    a = total_energy(x, material, ctx)
    b = total_energy(x + t, material, ctx)
    for name in ("stretch", "cosserat", "self_collision"):
        assert b.terms[name] == pytest.approx(a.terms[name], rel=1e-10, abs=1e-14)
    n = x.shape[0] * x.shape[1]
    assert b.terms["gravity"] - a.terms["gravity"] == pytest.approx(-n * material.vertex_mass * material.g @ t, rel=1e-9)
    ms = material.replace(elastic="mass_spring")
    ctx_ms = rest_context(groom20, ms)
    assert total_energy(x + t, ms, ctx_ms).terms["mass_spring"] == pytest.approx(
        total_energy(x, ms, ctx_ms).terms["mass_spring"], rel=1e-10)


def test_rotation_equivariance(groom20, material, rng):
    R = Rotation.random(random_state=7).as_matrix()
    mat = material.replace(gravity=(0.0, 0.0, 0.0))
    v, t, _ = sphere_bvh(0.1)
    v = v + np.array([0.0, 1.63, 0.0])
    x = groom20.positions + rng.normal(0, 1e-3, groom20.positions.shape)
    ctx = EnergyContext.from_posed(groom20, groom20.positions, mat, TriangleBVH(v, t))
    rg = groom20.replace(positions=groom20.positions @ R.T)
    ctx_r = EnergyContext.from_posed(rg, rg.positions, mat, TriangleBVH(v @ R.T, t))
    a = total_energy(x, mat, ctx)
    b = total_energy(x @ R.T, mat, ctx_r)
    for name in a.terms:
        assert b.terms[name] == pytest.approx(a.terms[name], rel=1e-9, abs=1e-12), name
    assert np.allclose(b.gradient, a.gradient @ R.T, rtol=1e-8, atol=1e-9 * np.abs(a.gradient).max())


def test_penalties_nonnegative(groom20, material, rng):
    ctx = rest_context(groom20, material)
    for _ in range(5):
        x = groom20.positions + rng.normal(0, 5e-3, groom20.positions.shape)
        rep = total_energy(x, material, ctx)
        assert all(v >= 0 for k, v in rep.terms.items() if k != "gravity")


def test_material_validation():
    with pytest.raises(ConfigError):
        MaterialParams(k_stretch=-1)
    with pytest.raises(ConfigError):
        MaterialParams(smoothing_length=0)
    with pytest.raises(ConfigError):
        MaterialParams(n_pose_reg=1)
    with pytest.raises(ConfigError):
        MaterialParams(variant="other")
    m = MaterialParams.guide_hair(k_pr=0.0)
    assert MaterialParams.from_dict(m.to_dict()) == m
