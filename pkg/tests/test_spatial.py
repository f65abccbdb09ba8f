import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quaffure.errors import ConfigError, GeometryError
from quaffure.fixtures import icosphere
from quaffure.spatial import (
    HashGrid,
    TriangleBVH,
    closest_point_on_triangles,
    closest_points_brute,
    neighbors_brute,
)


@pytest.fixture(scope="module")
def sphere():
    v, t = icosphere(3)
    return v, t, TriangleBVH(v, t)


def test_sphere_center_inside(sphere):
    v, t, bvh = sphere
    _, _, d = bvh.closest_point(np.zeros(3))
    assert -1.0 <= d < -0.98


def test_point_in_triangle_plane(sphere):
    v, t, bvh = sphere
    x = v[t[10]].mean(axis=0)
    p, tri, d = bvh.closest_point(x)
    assert abs(d) < 1e-15 and np.allclose(p, x, atol=1e-15)


def test_bvh_matches_brute_force(sphere, rng):
    v, t, bvh = sphere
    x = rng.normal(size=(1000, 3)) * rng.uniform(0.2, 2.0, (1000, 1))
    a = bvh.query(x)
    b = closest_points_brute(v, t, x)
    same = a.triangle == b.triangle
    assert np.all(same | (np.abs(a.distance - b.distance) <= 1e-12))
    assert np.allclose(a.distance, b.distance, atol=1e-12, rtol=0)


def test_bvh_structure(sphere):
    v, t, bvh = sphere
    leaves = np.flatnonzero(bvh.leaf_of >= 0)
    seen = np.concatenate([bvh.leaf_triangles(bvh.leaf_of[n]) for n in leaves])
    assert np.array_equal(np.sort(seen), np.arange(len(t)))
    for node in range(bvh.n_nodes):
        for child in (bvh.left[node], bvh.right[node]):
            if child >= 0:
                assert np.all(bvh.box_lo[node] <= bvh.box_lo[child])
                assert np.all(bvh.box_hi[node] >= bvh.box_hi[child])


def test_refit_equals_rebuild(sphere, rng):
    v, t, bvh = sphere
    moved = v * np.array([1.2, 0.8, 1.0]) + 0.1
    x = rng.normal(size=(300, 3))
    a = bvh.refit(moved).query(x)
    b = TriangleBVH(moved, t).query(x)
    assert np.array_equal(a.triangle, b.triangle)
    assert np.array_equal(a.distance, b.distance)


def test_empty_mesh():
    with pytest.raises(GeometryError):
        TriangleBVH(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))


def test_closest_point_regions():
    a, b, c = (np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]]), np.array([[0.0, 1, 0]]))
    for x, expect in [([-1, -1, 0], [0, 0, 0]), ([2, -1, 0], [1, 0, 0]), ([0.5, -1, 3], [0.5, 0, 0]),
                      ([1, 1, 0], [0.5, 0.5, 0]), ([0.2, 0.2, -4], [0.2, 0.2, 0])]:
        p = closest_point_on_triangles(np.array([x], dtype=float), a, b, c)
        assert np.allclose(p, [expect], atol=1e-15)


def test_ties_take_lowest_triangle():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    t = np.array([[3, 4, 5], [0, 1, 2]])
    assert TriangleBVH(v, t, leaf_size=1).closest_point([0.2, 0.2, 1.0])[1] == 0


def test_grid_empty():
    g = HashGrid(np.zeros((0, 3)), 0.1)
    assert g.neighbors([0, 0, 0], 0.1).size == 0
    assert g.pairs(0.1)[0].size == 0


def test_grid_closed_ball():
    pts = np.array([[0.0, 0, 0], [0.5, 0, 0]])
    g = HashGrid(pts, 0.5)
    assert g.neighbors(pts[0], 0.5).tolist() == [0, 1]
    i, j = g.pairs(0.5)
    assert list(zip(i.tolist(), j.tolist())) == [(0, 1), (1, 0)]


def test_grid_radius_check():
    g = HashGrid(np.zeros((2, 3)), 0.1)
    with pytest.raises(ConfigError):
        g.neighbors([0, 0, 0], 0.2)


def test_grid_matches_brute_force(rng):
    pts = rng.uniform(-0.2, 0.2, (500, 3))
    g = HashGrid(pts, 0.05)
    for q in pts[:100]:
        assert np.array_equal(g.neighbors(q, 0.05), neighbors_brute(pts, q, 0.05))
    i, j = g.pairs(0.05)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    bi, bj = np.nonzero((d <= 0.05) & ~np.eye(500, dtype=bool))
    assert np.array_equal(i, bi) and np.array_equal(j, bj)


def test_grid_every_point_in_one_cell(rng):
    pts = rng.uniform(0, 1, (200, 3))
    buckets = HashGrid(pts, 0.1).buckets()
    assert np.array_equal(np.sort(np.concatenate(list(buckets.values()))), np.arange(200))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_grid_insertion_order_independent(seed):
    r = np.random.default_rng(seed)
    pts = r.uniform(0, 0.3, (80, 3))
    perm = r.permutation(80)
    a = HashGrid(pts, 0.06).neighbors(pts[0], 0.06)
    b = HashGrid(pts[perm], 0.06).neighbors(pts[0], 0.06)
    assert np.array_equal(a, np.sort(perm[b]))


def test_signed_distance_sign_matches_body_sdf(body):
    """Pseudo-normal signing is right in concave regions (neck, shoulders) too."""
    from quaffure.fixtures import body_sdf

    bvh = TriangleBVH(body.rest_vertices, body.triangles)
    rng = np.random.default_rng(0)
    v = body.rest_vertices[rng.integers(len(body.rest_vertices), size=5000)]
    x = v + rng.normal(scale=0.01, size=v.shape)
    s = body_sdf(x)
    d = bvh.query(x).distance
    clear = np.abs(s) > 3e-3
    assert np.array_equal(np.sign(d[clear]), np.sign(s[clear]))


def test_signed_distance_is_continuous_across_edges(body):
    bvh = TriangleBVH(body.rest_vertices, body.triangles)
    rng = np.random.default_rng(1)
    x = body.rest_vertices[rng.integers(len(body.rest_vertices), size=300)] + rng.normal(scale=0.005, size=(300, 3))
    step = rng.normal(size=x.shape) * 1e-7
    jump = np.abs(bvh.query(x + step).distance - bvh.query(x).distance)
    # signed distance is 1-Lipschitz
    assert np.all(jump <= np.linalg.norm(step, axis=1) * (1 + 1e-6) + 1e-15)
