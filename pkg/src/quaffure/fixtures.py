"""Procedural assets: a skinned bust, synthetic grooms, and test meshes.

The bust is the smooth union of capsules (head, neck, shoulders) meshed by
marching cubes, rigged with three joints and two blendshapes (head scale and
shoulder width).  It stands at human height with y up, so draped hair sits
around y = 1.3-1.8 m.
"""
from __future__ import annotations

import numpy as np

from .groom import Groom, resample_polyline
from .kinematics import BodyModel

HEAD_CENTER = np.array([0.0, 1.63, 0.0])
JOINTS = np.array([[0.0, 1.38, 0.0], [0.0, 1.44, 0.0], [0.0, 1.57, 0.0]])
JOINT_NAMES = ("shoulders", "neck", "head")

_CAPSULES = (
    # (a, b, radius)
    (np.array([0.0, 1.600, 0.0]), np.array([0.0, 1.660, 0.0]), 0.090),
    (np.array([0.0, 1.420, 0.0]), np.array([0.0, 1.560, 0.0]), 0.052),
    (np.array([-0.170, 1.370, 0.0]), np.array([0.170, 1.370, 0.0]), 0.070),
)


def icosphere(subdivisions=2, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Geodesic sphere with outward winding."""
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    faces = list(f)
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts) * radius + np.asarray(center), np.array(faces, dtype=np.int64)


def _capsule_sdf(p, a, b, r):
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1) - r


def _smin(a, b, k):
    h = np.maximum(k - np.abs(a - b), 0.0) / k
    return np.minimum(a, b) - h * h * k * 0.25


def body_sdf(p, blend=0.04):
    """Signed distance (approximate near blends) of the procedural bust at rest."""
    p = np.asarray(p, dtype=np.float64)
    d = None
    for a, b, r in _CAPSULES:
        c = _capsule_sdf(p, a, b, r)
        d = c if d is None else _smin(d, c, blend)
    return d


def body_sdf_gradient(p, eps=1e-5):
    p = np.asarray(p, dtype=np.float64)
    g = np.stack([(body_sdf(p + eps * e) - body_sdf(p - eps * e)) / (2 * eps) for e in np.eye(3)], axis=-1)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def _smoothstep(x, lo, hi):
    t = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    return t * t * (3 - 2 * t)


def procedural_body(spacing=0.014):
    """Rigged bust mesh; see module docstring."""
    from skimage.measure import marching_cubes

    lo = np.array([-0.27, 1.27, -0.13])
    hi = np.array([0.27, 1.76, 0.13])
    dims = np.ceil((hi - lo) / spacing).astype(int) + 1
    axes = [lo[k] + spacing * np.arange(dims[k]) for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    field = body_sdf(grid)
    # close the mesh at the bottom of the box
    field[:, 0, :] = np.maximum(field[:, 0, :], spacing)
    verts, faces, _, _ = marching_cubes(field, level=0.0, spacing=(spacing,) * 3)
    verts = verts + lo
    faces = faces.astype(np.int64)
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    faces = faces[area > 1e-10]
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    if np.einsum("ij,ij->i", a, np.cross(b, c)).sum() < 0:
        faces = faces[:, [0, 2, 1]]
    used, inverse = np.unique(faces.ravel(), return_inverse=True)
    verts = verts[used]
    faces = inverse.reshape(-1, 3)

    y = verts[:, 1]
    w_head = _smoothstep(y, 1.535, 1.585)
    w_neck_up = _smoothstep(y, 1.405, 1.465)
    weights = np.stack([1.0 - w_neck_up, w_neck_up * (1.0 - w_head), w_head], axis=1)
    weights /= weights.sum(axis=1, keepdims=True)

    head_scale = 0.1 * (verts - HEAD_CENTER) * w_head[:, None]
    shoulder = np.zeros_like(verts)
    shoulder[:, 0] = 0.1 * verts[:, 0] * weights[:, 0]
    blendshapes = np.stack([head_scale, shoulder])

    cent = (verts[faces[:, 0]] + verts[faces[:, 1]] + verts[faces[:, 2]]) / 3.0
    rel = cent - HEAD_CENTER
    on_head = np.all(weights[faces][:, :, 2] > 0.999, axis=1)
    crown = rel[:, 1] > 0.02
    back = (rel[:, 2] < -0.03) & (rel[:, 1] > -0.04)
    sides = (np.abs(rel[:, 0]) > 0.06) & (rel[:, 1] > -0.01) & (rel[:, 2] < 0.02)
    scalp = np.flatnonzero(on_head & (crown | back | sides))
    return BodyModel(
        rest_vertices=verts,
        triangles=faces,
        parents=np.array([-1, 0, 1]),
        joint_positions=JOINTS,
        skin_weights=weights,
        shape_blendshapes=blendshapes,
        joint_names=JOINT_NAMES,
        scalp_triangles=scalp,
    )


def scalp_uv(points, center=HEAD_CENTER):
    """Spherical UV around the head center, in [0, 1)^2."""
    d = np.asarray(points, dtype=np.float64) - center
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    u = (np.arctan2(d[..., 0], -d[..., 2]) / (2 * np.pi) + 0.5) % 1.0
    v = np.arccos(np.clip(d[..., 1], -1.0, 1.0)) / np.pi
    return np.minimum(np.stack([u, v], axis=-1), np.nextafter(1.0, 0.0))


def sample_roots(body: BodyModel, n_strands, rng, min_spacing=0.012):
    """Area-weighted roots on scalp triangles, kept ``min_spacing`` apart."""
    v, t = body.rest_vertices, body.triangles[body.scalp_triangles]
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    prob = area / area.sum()
    tris, barys, pts = [], [], []
    attempts = 0
    while len(tris) < n_strands:
        attempts += 1
        if attempts > 200 * n_strands:
            raise RuntimeError("could not place roots at the requested spacing")
        k = rng.choice(len(t), p=prob)
        r1, r2 = rng.uniform(), rng.uniform()
        s = np.sqrt(r1)
        bary = np.array([1 - s, s * (1 - r2), s * r2])
        p = bary @ np.stack([a[k], b[k], c[k]])
        if pts and np.min(np.linalg.norm(np.array(pts) - p, axis=1)) < min_spacing:
            continue
        tris.append(body.scalp_triangles[k])
        barys.append(bary)
        pts.append(p)
    return np.array(tris), np.array(barys), np.array(pts)


def comb_strand(root, n_vertices=24, length=0.22, offset=0.014, lift=2, sdf=body_sdf, wave=0.0,
                wavelength=0.06):
    """Author a strand that leaves the scalp along the normal, then falls
    toward -y while sliding over the body at distance ``offset``."""
    seg = length / (n_vertices - 1)
    normal = body_sdf_gradient(root[None])[0]
    down = np.array([0.0, -1.0, 0.0])
    pts = [np.asarray(root, dtype=np.float64)]
    for k in range(1, n_vertices):
        blend = min(k / (lift + 1.0), 1.0)
        direction = (1 - blend) * normal + blend * down
        direction /= np.linalg.norm(direction)
        p = pts[-1] + seg * direction
        for _ in range(4):
            d = sdf(p[None])[0]
            if d >= offset:
                break
            p = p + (offset - d) * body_sdf_gradient(p[None])[0]
            p = pts[-1] + seg * (p - pts[-1]) / np.linalg.norm(p - pts[-1])
        pts.append(p)
    pts = np.array(pts)
    if wave:
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        t = np.gradient(pts, axis=0)
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        side = np.cross(t, body_sdf_gradient(pts))
        side /= np.maximum(np.linalg.norm(side, axis=1, keepdims=True), 1e-12)
        ramp = np.clip(s / (3 * seg), 0.0, 1.0)
        pts = pts + (wave * ramp * np.sin(2 * np.pi * s / wavelength))[:, None] * side
        pts = resample_polyline(pts, n_vertices)
    return pts


def demo_groom(body: BodyModel, n_strands=20, n_vertices=24, length=0.22, style="straight", seed=0,
               texture_resolution=16, name=None):
    """Strands combed down from the scalp; ``style`` is 'straight' or 'wavy'."""
    rng = np.random.default_rng(seed)
    tris, barys, roots = sample_roots(body, n_strands, rng)
    wave = {"straight": 0.0, "wavy": 0.008}[style]
    strands = np.stack([comb_strand(r, n_vertices, length, wave=wave) for r in roots])
    return Groom(
        strands, scalp_uv(roots), tris, barys,
        texture_resolution=texture_resolution, name=name or f"{style}-{n_strands}",
    )


def hanging_strand(n_vertices=24, length=0.25, tilt_deg=30.0, root=(0.0, 0.0, 0.0)):
    """Straight strand tilted ``tilt_deg`` away from -y in the x-y plane."""
    a = np.deg2rad(tilt_deg)
    d = np.array([np.sin(a), -np.cos(a), 0.0])
    s = np.linspace(0.0, length, n_vertices)
    pts = np.asarray(root, dtype=np.float64) + s[:, None] * d
    return Groom(pts[None], np.array([[0.5, 0.5]]), texture_resolution=4, name="hanging")


def helix_groom(n_strands=3, n_vertices=24, radius=0.01, pitch=0.025, turns=3.0, spacing=0.05):
    """Curly strands: helices with vertical axes, roots on a horizontal line."""
    s = np.linspace(0.0, 1.0, n_vertices)
    ang = 2 * np.pi * turns * s
    strands = []
    for k in range(n_strands):
        phase = 0.7 * k
        root = np.array([spacing * k, 0.0, 0.0])
        c = np.stack([radius * (np.cos(ang + phase) - np.cos(phase)),
                      -pitch * turns * s,
                      radius * (np.sin(ang + phase) - np.sin(phase))], axis=1)
        strands.append(root + c)
    uv = np.stack([(np.arange(n_strands) + 0.5) / max(n_strands, 1), np.full(n_strands, 0.5)], axis=1)
    return Groom(np.stack(strands), uv, texture_resolution=8, name="helix")


def two_bundles(n_per_side=3, n_vertices=16, length=0.15, gap=0.06, spacing=0.012, cross=0.009):
    """Two parallel bundles (rest) and an initial state where the second bundle
    swings onto the first, interpenetrating it.

    Returns ``(groom, x_initial)``; rest density is taken from the groom.
    """
    s = np.linspace(0.0, length, n_vertices)
    rest, init = [], []
    for side in (0, 1):
        for i in range(n_per_side):
            for j in range(n_per_side):
                root = np.array([side * gap + i * spacing, 0.0, j * spacing])
                rest.append(root + s[:, None] * np.array([0.0, -1.0, 0.0]))
                if side == 0:
                    init.append(rest[-1])
                else:
                    # bottom half pushed sideways into bundle 0, offset slightly in z
                    t = np.clip((s - 0.3 * length) / (0.7 * length), 0.0, 1.0)
                    shift = -(gap - cross) * (3 * t * t - 2 * t ** 3)
                    pts = rest[-1].copy()
                    pts[:, 0] += shift
                    pts[:, 2] += 0.004 * t
                    init.append(pts)
    n = len(rest)
    uv = np.stack([(np.arange(n) % 8 + 0.5) / 8, (np.arange(n) // 8 + 0.5) / 8], axis=1)
    groom = Groom(np.stack(rest), uv, texture_resolution=8, name="two-bundles")
    return groom, np.stack(init)
