"""File formats: grooms (JSON text and QFGR binary), bodies (OBJ plus JSON
sidecar), pose sequences, and a converter for external polyline data."""
from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import ShapeError, ValidationError
from .groom import DEFAULT_TEXTURE_RESOLUTION, DEFAULT_VERTS_PER_STRAND, Groom, resample_polyline
from .kinematics import BodyModel, PoseParams
from .spatial import closest_points_brute

GROOM_TEXT_VERSION = 1
GROOM_BINARY_VERSION = 1
GROOM_MAGIC = b"QFGR"
_HEADER = struct.Struct("<4sIII")


# -- grooms -------------------------------------------------------------------

def groom_to_dict(groom: Groom, positions=None):
    """JSON-ready dict; ``positions`` overrides the stored ones (for drapes)."""
    pos = groom.positions if positions is None else np.asarray(positions, dtype=np.float64)
    if pos.shape != groom.positions.shape:
        raise ShapeError(f"positions {pos.shape} do not match the groom {groom.positions.shape}")
    strands = []
    for i in range(groom.n_strands):
        entry = {"uv": groom.root_uv[i].tolist(), "positions": pos[i].tolist()}
        if groom.attachment_triangle[i] >= 0:
            entry["attachment"] = {
                "triangle": int(groom.attachment_triangle[i]),
                "barycentric": groom.attachment_barycentric[i].tolist(),
            }
        strands.append(entry)
    return {
        "version": GROOM_TEXT_VERSION,
        "name": groom.name,
        "n_strands": groom.n_strands,
        "verts_per_strand": groom.n_vertices,
        "texture_resolution": groom.texture_resolution,
        "strands": strands,
    }


def groom_from_dict(d, n_vertices=None):
    """Inverse of :func:`groom_to_dict`; strands whose vertex count differs
    from ``verts_per_strand`` (or ``n_vertices``) are arc-length resampled."""
    if d.get("version") != GROOM_TEXT_VERSION:
        raise ValidationError(f"unsupported groom text version {d.get('version')!r}")
    strands = d.get("strands", [])
    if d.get("n_strands", len(strands)) != len(strands):
        raise ValidationError("n_strands does not match the strand list")
    N = int(n_vertices or d.get("verts_per_strand", DEFAULT_VERTS_PER_STRAND))
    positions, uvs, tris, barys = [], [], [], []
    for s in strands:
        p = np.asarray(s["positions"], dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ShapeError("strand positions must be a list of 3D points")
        positions.append(p if len(p) == N else resample_polyline(p, N))
        uvs.append(s["uv"])
        att = s.get("attachment")
        tris.append(-1 if att is None else int(att["triangle"]))
        barys.append([1.0, 0.0, 0.0] if att is None else att["barycentric"])
    shape = (0, N, 3)
    return Groom(
        np.stack(positions) if positions else np.zeros(shape),
        np.asarray(uvs, dtype=np.float64).reshape(-1, 2),
        np.asarray(tris, dtype=np.int64),
        np.asarray(barys, dtype=np.float64).reshape(-1, 3),
        texture_resolution=int(d.get("texture_resolution", DEFAULT_TEXTURE_RESOLUTION)),
        name=d.get("name", "groom"),
    )


def save_groom_text(groom: Groom, path, positions=None):
    with open(path, "w") as fh:
        json.dump(groom_to_dict(groom, positions), fh)


def load_groom_text(path, n_vertices=None):
    with open(path) as fh:
        return groom_from_dict(json.load(fh), n_vertices)


def encode_groom_binary(groom: Groom, positions=None):
    """QFGR bytes: little-endian header, then per strand 2 x f32 uv and N x 3 x f32."""
    pos = groom.positions if positions is None else np.asarray(positions, dtype=np.float64)
    if pos.shape != groom.positions.shape:
        raise ShapeError(f"positions {pos.shape} do not match the groom {groom.positions.shape}")
    S, N = groom.n_strands, groom.n_vertices
    body = np.concatenate([groom.root_uv.astype("<f4"), pos.reshape(S, N * 3).astype("<f4")], axis=1)
    return _HEADER.pack(GROOM_MAGIC, GROOM_BINARY_VERSION, S, N) + body.tobytes()


def decode_groom_binary(data, name="groom", texture_resolution=DEFAULT_TEXTURE_RESOLUTION):
    """Parse QFGR bytes.  The format carries no attachment data."""
    if len(data) < _HEADER.size:
        raise ValidationError("truncated groom file")
    magic, version, S, N = _HEADER.unpack_from(data)
    if magic != GROOM_MAGIC:
        raise ValidationError("not a QFGR groom file")
    if version != GROOM_BINARY_VERSION:
        raise ValidationError(f"unsupported groom binary version {version}")
    expected = _HEADER.size + 4 * S * (2 + 3 * N)
    if len(data) != expected:
        raise ValidationError(f"groom file has {len(data)} bytes, expected {expected}")
    rows = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(S, 2 + 3 * N)
    uv = rows[:, :2].astype(np.float64)
    pos = rows[:, 2:].astype(np.float64).reshape(S, N, 3)
    return Groom(pos, uv, texture_resolution=texture_resolution, name=name)


def save_groom_binary(groom: Groom, path, positions=None):
    with open(path, "wb") as fh:
        fh.write(encode_groom_binary(groom, positions))


def load_groom_binary(path, **kwargs):
    with open(path, "rb") as fh:
        return decode_groom_binary(fh.read(), **kwargs)


def load_groom(path, body: BodyModel = None, n_vertices=None):
    """Load by extension (``.json`` text, anything else QFGR).

    Binary grooms have no attachment; with ``body`` given, roots are
    re-attached to its scalp.
    """
    if str(path).endswith(".json"):
        groom = load_groom_text(path, n_vertices)
    else:
        name = os.path.splitext(os.path.basename(str(path)))[0]
        groom = load_groom_binary(path, name=name)
    if body is not None and groom.n_strands and np.any(groom.attachment_triangle < 0):
        tri, bary = attach_to_scalp(groom.positions[:, 0], body.rest_vertices, body.triangles,
                                    body.scalp_triangles)[:2]
        groom = groom.replace(attachment_triangle=tri, attachment_barycentric=bary)
    return groom


def save_groom(groom: Groom, path, positions=None):
    if str(path).endswith(".json"):
        save_groom_text(groom, path, positions)
    else:
        save_groom_binary(groom, path, positions)


# -- bodies -------------------------------------------------------------------

def write_obj(path, vertices, triangles):
    with open(path, "w") as fh:
        for v in np.asarray(vertices, dtype=np.float64).tolist():
            fh.write(f"v {v[0]!r} {v[1]!r} {v[2]!r}\n")
        for t in np.asarray(triangles, dtype=np.int64) + 1:
            fh.write(f"f {t[0]} {t[1]} {t[2]}\n")


def read_obj(path):
    """Vertices, triangles, and per-vertex UVs (``None`` if absent) of a triangulated OBJ."""
    verts, uvs, faces, face_uv = [], [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "vt":
                uvs.append([float(p) for p in parts[1:3]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ShapeError("OBJ faces must be triangles")
                idx = [p.split("/") for p in parts[1:]]
                faces.append([int(i[0]) for i in idx])
                if all(len(i) > 1 and i[1] for i in idx):
                    face_uv.append([int(i[1]) for i in idx])
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    f = np.where(f < 0, f + len(v), f - 1)
    vertex_uv = None
    if uvs and len(face_uv) == len(faces):
        vt = np.asarray(uvs, dtype=np.float64)
        fu = np.asarray(face_uv, dtype=np.int64) - 1
        vertex_uv = np.zeros((len(v), 2))
        vertex_uv[f.ravel()] = vt[fu.ravel()]
    return v, f, vertex_uv


def save_body(body: BodyModel, obj_path, sidecar_path=None):
    """Mesh as OBJ; rig, sparse weights, blendshapes, and scalp as JSON."""
    sidecar_path = sidecar_path or os.path.splitext(str(obj_path))[0] + ".json"
    write_obj(obj_path, body.rest_vertices, body.triangles)
    weights = []
    for row in body.skin_weights:
        nz = np.flatnonzero(row)
        weights.append([[int(j), float(row[j])] for j in nz])
    doc = {
        "joints": [
            {
                "name": body.joint_names[j],
                "parent": int(body.parents[j]),
                "bind_translation": body.joint_positions[j].tolist(),
                "bind_rotation": body.joint_orientations[j].tolist(),
            }
            for j in range(body.n_joints)
        ],
        "weights": weights,
        "blendshapes": [bs.tolist() for bs in body.shape_blendshapes],
        "scalp_triangles": body.scalp_triangles.tolist(),
    }
    with open(sidecar_path, "w") as fh:
        json.dump(doc, fh)


def load_body(obj_path, sidecar_path=None) -> BodyModel:
    sidecar_path = sidecar_path or os.path.splitext(str(obj_path))[0] + ".json"
    v, f, _ = read_obj(obj_path)
    with open(sidecar_path) as fh:
        doc = json.load(fh)
    joints = doc["joints"]
    J = len(joints)
    if len(doc["weights"]) != len(v):
        raise ShapeError(f"sidecar has weights for {len(doc['weights'])} vertices, mesh has {len(v)}")
    w = np.zeros((len(v), J))
    for i, row in enumerate(doc["weights"]):
        for j, value in row:
            w[i, int(j)] = value
    blend = np.asarray(doc.get("blendshapes", []), dtype=np.float64).reshape(-1, len(v), 3)
    scalp = doc.get("scalp_triangles")
    return BodyModel(
        rest_vertices=v,
        triangles=f,
        parents=np.array([j["parent"] for j in joints], dtype=np.int64),
        joint_positions=np.array([j["bind_translation"] for j in joints], dtype=np.float64),
        skin_weights=w,
        shape_blendshapes=blend,
        joint_orientations=np.array([j.get("bind_rotation", [0, 0, 0]) for j in joints], dtype=np.float64),
        joint_names=tuple(j.get("name", f"joint{k}") for k, j in enumerate(joints)),
        scalp_triangles=None if scalp is None else np.asarray(scalp, dtype=np.int64),
    )


# -- pose sequences -----------------------------------------------------------

def save_pose_sequence(path, poses):
    """One row per frame: index, 3J rotation values, root translation."""
    with open(path, "w") as fh:
        for k, p in enumerate(poses):
            values = " ".join(repr(float(x)) for x in p.to_vector())
            fh.write(f"{k} {values}\n")


def load_pose_sequence(path, n_joints):
    """Rows of ``frame p_1 .. p_P [tx ty tz]``; ``#`` starts a comment."""
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            values = np.array([float(x) for x in line.split()[1:]])
            try:
                poses.append(PoseParams.from_vector(values, n_joints))
            except ShapeError as exc:
                raise ShapeError(f"{path}:{lineno}: {exc}") from None
    return poses


# -- external strand data -----------------------------------------------------

def barycentric_coordinates(p, a, b, c):
    """Barycentric coordinates of points ``p`` in triangles ``(a, b, c)``,
    clipped to the triangle and renormalized."""
    v0, v1, v2 = b - a, c - a, p - a
    d00 = np.einsum("ij,ij->i", v0, v0)
    d01 = np.einsum("ij,ij->i", v0, v1)
    d11 = np.einsum("ij,ij->i", v1, v1)
    d20 = np.einsum("ij,ij->i", v2, v0)
    d21 = np.einsum("ij,ij->i", v2, v1)
    denom = d00 * d11 - d01 * d01
    beta = (d11 * d20 - d01 * d21) / denom
    gamma = (d00 * d21 - d01 * d20) / denom
    bary = np.clip(np.stack([1.0 - beta - gamma, beta, gamma], axis=1), 0.0, None)
    return bary / bary.sum(axis=1, keepdims=True)


def spherical_uv(points, center):
    d = np.asarray(points, dtype=np.float64) - center
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    u = (np.arctan2(d[..., 0], -d[..., 2]) / (2 * np.pi) + 0.5) % 1.0
    v = np.arccos(np.clip(d[..., 1], -1.0, 1.0)) / np.pi
    return np.minimum(np.stack([u, v], axis=-1), np.nextafter(1.0, 0.0))


def attach_to_scalp(roots, vertices, triangles, scalp_triangles=None, vertex_uv=None):
    """Project roots onto the scalp: triangle index, barycentrics, and UV.

    UVs interpolate ``vertex_uv`` when given, otherwise they are a spherical
    projection about the scalp centroid.
    """
    roots = np.asarray(roots, dtype=np.float64).reshape(-1, 3)
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64)
    scalp = np.arange(len(t)) if scalp_triangles is None else np.asarray(scalp_triangles, dtype=np.int64)
    sub = t[scalp]
    cp = closest_points_brute(v, sub, roots)
    tri = scalp[cp.triangle]
    corners = t[tri]
    bary = barycentric_coordinates(cp.point, v[corners[:, 0]], v[corners[:, 1]], v[corners[:, 2]])
    if vertex_uv is not None:
        uv = np.einsum("sk,skd->sd", bary, np.asarray(vertex_uv)[corners]) % 1.0
        uv = np.minimum(uv, np.nextafter(1.0, 0.0))
    else:
        used = np.unique(sub)
        uv = spherical_uv(cp.point, v[used].mean(axis=0))
    return tri, bary, uv


def read_polylines(path):
    """Polyline soup: ``x y z`` per line, strands separated by blank lines."""
    strands, current = [], []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                if current:
                    strands.append(np.array(current))
                    current = []
                continue
            current.append([float(x) for x in line.split()[:3]])
    if current:
        strands.append(np.array(current))
    return strands


def convert_polylines(polylines, scalp_obj, n_vertices=DEFAULT_VERTS_PER_STRAND,
                      texture_resolution=DEFAULT_TEXTURE_RESOLUTION, name="converted"):
    """Build a groom from external strands and a scalp mesh.

    Each polyline is resampled to ``n_vertices`` by arc length, its first
    point is projected onto the scalp, and the strand is translated so the
    root sits exactly on the surface.  Stub quality: no guide selection,
    no orientation repair.
    """
    v, f, vertex_uv = read_obj(scalp_obj) if isinstance(scalp_obj, (str, os.PathLike)) else scalp_obj
    if isinstance(polylines, (str, os.PathLike)):
        polylines = read_polylines(polylines)
    if not polylines:
        raise ValidationError("no strands to convert")
    pos = np.stack([resample_polyline(p, n_vertices) for p in polylines])
    tri, bary, uv = attach_to_scalp(pos[:, 0], v, f, vertex_uv=vertex_uv)
    corners = f[tri]
    surface = np.einsum("sk,skd->sd", bary, v[corners])
    pos = pos + (surface - pos[:, 0])[:, None, :]
    return Groom(pos, uv, tri, bary, texture_resolution=texture_resolution, name=name)
