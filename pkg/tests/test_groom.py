import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quaffure.errors import CapacityError, LayoutError, ShapeError, ValidationError
from quaffure.groom import (
    Groom,
    TextureLayout,
    assign_texels,
    mask_texture,
    resample_polyline,
    texture_decode,
    texture_encode,
)


def random_groom(rng, n_strands, n_vertices=24, resolution=64):
    roots = rng.uniform(-0.1, 0.1, (n_strands, 1, 3))
    steps = rng.normal(0, 0.01, (n_strands, n_vertices - 1, 3))
    pos = np.concatenate([roots, roots + np.cumsum(steps, axis=1)], axis=1)
    uv = rng.uniform(0, 1, (n_strands, 2))
    return Groom(pos, uv, texture_resolution=resolution)


def test_single_strand_encode():
    strand = np.arange(72, dtype=float).reshape(1, 24, 3) * 0.01 + 0.001
    g = Groom(strand, [[0.1, 0.1]], texture_resolution=4)
    tex = texture_encode(g, g.layout)
    assert tex.shape == (4, 4, 24, 3)
    assert np.array_equal(tex[0, 0], strand[0])
    tex[0, 0] = 0
    assert not tex.any()


def test_empty_groom_encodes_to_zeros():
    g = Groom(np.zeros((0, 24, 3)), np.zeros((0, 2)), texture_resolution=4)
    tex = texture_encode(g, g.layout)
    assert tex.shape == (4, 4, 24, 3) and not tex.any()
    assert texture_decode(tex, g.layout).shape == (0, 24, 3)


def test_round_trip_50_strands(rng):
    g = random_groom(rng, 50)
    tex = texture_encode(g, g.layout)
    back = texture_decode(tex, g.layout)
    assert np.array_equal(back, g.positions)
    assert np.array_equal(texture_encode(back, g.layout), tex)


def test_decode_zero_texture():
    layout = TextureLayout(4, [[0, 0], [1, 2], [3, 3]])
    out = texture_decode(np.zeros((4, 4, 24, 3)), layout)
    assert out.shape == (3, 24, 3) and not out.any()


def test_decode_rejects_nan():
    layout = TextureLayout(4, [[0, 0], [1, 2]])
    tex = np.zeros((4, 4, 24, 3))
    tex[1, 2, 5, 1] = np.nan
    with pytest.raises(ValidationError):
        texture_decode(tex, layout)
    tex[1, 2, 5, 1] = 0.0
    tex[3, 3, 0, 0] = np.nan  # inactive texels are not read
    texture_decode(tex, layout)


def test_layout_errors():
    with pytest.raises(LayoutError):
        TextureLayout(4, [[0, 0], [0, 0]])
    with pytest.raises(LayoutError):
        TextureLayout(4, [[4, 0]])
    with pytest.raises(ShapeError):
        texture_decode(np.zeros((8, 8, 24, 3)), TextureLayout(4, [[0, 0]]))
    with pytest.raises(LayoutError):
        texture_encode(np.zeros((2, 24, 3)), TextureLayout(4, [[0, 0]]))


def test_mask_texture_zeroes_inactive(rng):
    layout = TextureLayout(4, [[0, 1], [2, 3]])
    tex = mask_texture(rng.normal(size=(4, 4, 5, 3)), layout)
    assert np.count_nonzero(np.abs(tex).sum(axis=(2, 3))) == 2


def test_assign_floor_rule():
    assert assign_texels([[0.5, 0.5]], 4).tolist() == [[2, 2]]


def test_assign_collision_nearest_center_wins():
    # both in texel (1, 1) of a 4x4 texture; the second is nearer the center (1.5, 1.5)
    uv = np.array([[0.26, 0.26], [0.37, 0.38]])
    tex = assign_texels(uv, 4)
    assert tex[1].tolist() == [1, 1]
    # loser at scaled (1.04, 1.04): nearest free center is (0, 1) or (1, 0) at equal distance, row first
    assert tex[0].tolist() == [0, 1]


def test_assign_100_random_roots_audit(rng):
    uv = rng.uniform(0, 1, (100, 2))
    tex = assign_texels(uv, 64)
    assert len({tuple(t) for t in tex}) == 100
    base = np.floor(uv * 64).astype(int)
    keys = [tuple(b) for b in base]
    for i in range(100):
        if keys.count(keys[i]) == 1:
            assert tuple(tex[i]) == keys[i]
        else:
            group = [j for j in range(100) if keys[j] == keys[i]]
            d = [np.linalg.norm(uv[j] * 64 - (base[j] + 0.5)) for j in group]
            winner = group[int(np.argmin(d))]
            assert (tuple(tex[i]) == keys[i]) == (i == winner)
    assert np.array_equal(assign_texels(uv, 64), tex)


def test_assign_capacity():
    with pytest.raises(CapacityError):
        assign_texels(np.random.default_rng(0).uniform(0, 1, (5, 2)), 2)
    with pytest.raises(ValidationError):
        assign_texels([[1.0, 0.5]], 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_assign_is_injective_and_complete(n, seed):
    uv = np.random.default_rng(seed).uniform(0, 1, (n, 2)) * 0.3  # force collisions
    tex = assign_texels(uv, 8)
    assert len({tuple(t) for t in tex}) == n
    assert np.all((tex >= 0) & (tex < 8))


def test_groom_invariants(rng):
    g = random_groom(rng, 5)
    assert g.layout.n_active == g.n_strands
    assert np.allclose(np.linalg.norm(g.rest_directors, axis=-1), 1.0)
    assert np.allclose(g.rest_lengths, np.linalg.norm(np.diff(g.positions, axis=1), axis=-1))
    with pytest.raises(ValueError):
        g.positions[0, 0, 0] = 1.0
    with pytest.raises(ValidationError):
        Groom(g.positions, g.root_uv, rest_density=-np.ones(5 * 24))
    with pytest.raises(ValidationError):
        Groom(g.positions * np.nan, g.root_uv)
    with pytest.raises(ShapeError):
        Groom(np.zeros((2, 24)), np.zeros((2, 2)))


def test_from_strands_round_trip(rng):
    g = random_groom(rng, 4)
    h = Groom.from_strands(g.strands, texture_resolution=g.texture_resolution)
    assert np.array_equal(h.positions, g.positions)
    assert h.layout == g.layout


def test_resample_polyline_uniform():
    pts = np.array([[0, 0, 0], [1, 0, 0], [1, 2, 0]], dtype=float)
    out = resample_polyline(pts, 7)
    seg = np.linalg.norm(np.diff(out, axis=0), axis=1)
    assert np.allclose(seg, 0.5)
    assert np.allclose(out[0], pts[0]) and np.allclose(out[-1], pts[-1])
