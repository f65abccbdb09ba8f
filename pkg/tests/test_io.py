import numpy as np
import pytest

from quaffure.errors import ValidationError
from quaffure.groom import Groom
from quaffure.io import (
    attach_to_scalp,
    barycentric_coordinates,
    convert_polylines,
    decode_groom_binary,
    encode_groom_binary,
    load_body,
    load_groom,
    load_groom_text,
    load_pose_sequence,
    read_obj,
    read_polylines,
    save_body,
    save_groom,
    save_groom_text,
    save_pose_sequence,
    write_obj,
)
from quaffure.kinematics import PoseParams, skin_body


def test_text_round_trip(groom20, tmp_path):
    path = tmp_path / "g.json"
    save_groom_text(groom20, path)
    back = load_groom_text(path)
    assert np.abs(back.positions - groom20.positions).max() <= 1e-12
    assert np.abs(back.root_uv - groom20.root_uv).max() <= 1e-12
    assert np.array_equal(back.attachment_triangle, groom20.attachment_triangle)
    assert back.layout == groom20.layout


def test_binary_round_trip_bit_identical(groom20, tmp_path):
    path = tmp_path / "g.qfgr"
    save_groom(groom20, path)
    first = load_groom(path)
    save_groom(first, tmp_path / "h.qfgr")
    second = load_groom(tmp_path / "h.qfgr")
    assert np.array_equal(first.positions, second.positions)
    assert (tmp_path / "g.qfgr").read_bytes() == (tmp_path / "h.qfgr").read_bytes()
    assert np.abs(first.positions - groom20.positions).max() < 1e-6  # float32 storage


def test_binary_header(groom20):
    data = encode_groom_binary(groom20)
    assert data[:4] == b"QFGR"
    assert np.frombuffer(data[4:16], "<u4").tolist() == [1, 20, 24]
    assert len(data) == 16 + 20 * (2 + 24 * 3) * 4
    with pytest.raises(ValidationError):
        decode_groom_binary(b"XXXX" + data[4:])
    with pytest.raises(ValidationError):
        decode_groom_binary(data[:-4])


def test_binary_reattaches_to_body(groom20, body, tmp_path):
    path = tmp_path / "g.qfgr"
    save_groom(groom20, path)
    g = load_groom(path, body)
    assert np.all(g.attachment_triangle >= 0)
    roots = np.einsum("sk,skd->sd", g.attachment_barycentric, body.rest_vertices[body.triangles[g.attachment_triangle]])
    assert np.abs(roots - g.positions[:, 0]).max() < 1e-4


def test_text_resamples_other_vertex_counts(groom20, tmp_path):
    path = tmp_path / "g.json"
    save_groom_text(groom20, path)
    back = load_groom_text(path, n_vertices=12)
    assert back.n_vertices == 12
    assert np.allclose(back.positions[:, 0], groom20.positions[:, 0])
    assert np.allclose(back.positions[:, -1], groom20.positions[:, -1])


def test_body_round_trip(body, tmp_path):
    save_body(body, tmp_path / "bust.obj")
    back = load_body(tmp_path / "bust.obj")
    assert np.abs(back.rest_vertices - body.rest_vertices).max() < 1e-12
    assert np.array_equal(back.triangles, body.triangles)
    assert np.abs(back.skin_weights - body.skin_weights).max() < 1e-12
    assert np.abs(back.shape_blendshapes - body.shape_blendshapes).max() < 1e-12
    assert np.array_equal(back.scalp_triangles, body.scalp_triangles)
    pose = PoseParams.from_vector([0.1, 0, 0, 0, 0.2, 0, 0, 0, 0.3], 3)
    a = skin_body(body, [0.3, -0.2], pose).vertices
    b = skin_body(back, [0.3, -0.2], pose).vertices
    assert np.abs(a - b).max() < 1e-10


def test_obj_uv(tmp_path):
    path = tmp_path / "t.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n")
    v, f, uv = read_obj(path)
    assert f.tolist() == [[0, 1, 2]] and uv.shape == (3, 2)
    write_obj(tmp_path / "u.obj", v, f)
    assert read_obj(tmp_path / "u.obj")[2] is None


def test_pose_sequence_round_trip(tmp_path, rng):
    poses = [PoseParams(rng.normal(0, 0.2, (3, 3)), rng.normal(0, 0.1, 3)) for _ in range(5)]
    path = tmp_path / "poses.txt"
    save_pose_sequence(path, poses)
    back = load_pose_sequence(path, 3)
    assert len(back) == 5
    for a, b in zip(poses, back):
        assert np.array_equal(a.to_vector(), b.to_vector())
    path.write_text("# frame p...\n0 0 0 0 0 0 0 0 0 0\n")
    assert np.array_equal(load_pose_sequence(path, 3)[0].to_vector(), np.zeros(12))


def test_barycentric(rng):
    a, b, c = rng.normal(size=(3, 10, 3))
    w = rng.dirichlet([1, 1, 1], 10)
    p = w[:, :1] * a + w[:, 1:2] * b + w[:, 2:] * c
    assert np.allclose(barycentric_coordinates(p, a, b, c), w, atol=1e-10)


def test_attach_and_convert(body, tmp_path, rng):
    scalp = body.scalp_triangles[:50]
    centers = body.rest_vertices[body.triangles[scalp]].mean(axis=1)
    tri, bary, uv = attach_to_scalp(centers, body.rest_vertices, body.triangles, scalp)
    assert np.array_equal(tri, scalp)
    assert np.allclose(bary, 1 / 3, atol=1e-9)
    assert np.all((uv >= 0) & (uv < 1))

    write_obj(tmp_path / "scalp.obj", body.rest_vertices, body.triangles[body.scalp_triangles])
    lines = []
    for k in range(6):
        root = centers[k * 7]
        n = rng.integers(5, 40)
        strand = root + np.cumsum(rng.normal(0, 0.01, (n, 3)), axis=0) + [0, 0.002, 0]
        lines.append("\n".join(" ".join(f"{x:.9f}" for x in p) for p in strand))
    (tmp_path / "strands.txt").write_text("\n\n".join(lines) + "\n")
    assert len(read_polylines(tmp_path / "strands.txt")) == 6
    g = convert_polylines(tmp_path / "strands.txt", tmp_path / "scalp.obj", n_vertices=16, texture_resolution=32)
    assert isinstance(g, Groom) and g.positions.shape == (6, 16, 3)
    assert len({tuple(t) for t in g.texel_of_strand}) == 6
    with pytest.raises(ValidationError):
        convert_polylines([], tmp_path / "scalp.obj")
