"""Acceleration structures: closest point on a triangle mesh, radius neighbors.

Both structures answer *batched* queries so that an energy evaluation never
loops over vertices in Python; the BVH traversal is compiled with numba.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError, GeometryError, ShapeError


def closest_point_on_triangles(p, a, b, c):
    """Closest points on triangles ``(a, b, c)`` to points ``p`` (all ``(M, 3)``).

    Region classification follows Ericson, *Real-Time Collision Detection*,
    5.1.5, vectorized with masks.
    """
    p, a, b, c = (np.asarray(v, dtype=np.float64) for v in (p, a, b, c))
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    # Face interior is the default; every other region overrides it in order.
    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
    out = a + ab * v[:, None] + ac * w[:, None]
    done = np.zeros(len(p), dtype=bool)

    def take(mask, value):
        nonlocal done
        m = mask & ~done
        if np.any(m):
            out[m] = value[m] if value.ndim == 2 else value
        done |= m

    take((d1 <= 0) & (d2 <= 0), a)
    take((d3 >= 0) & (d4 <= d3), b)
    m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(m, d1 / (d1 - d3), 0.0)
    take(m, a + ab * t[:, None])
    take((d6 >= 0) & (d5 <= d6), c)
    m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(m, d2 / (d2 - d6), 0.0)
    take(m, a + ac * t[:, None])
    m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(m, (d4 - d3) / ((d4 - d3) + (d5 - d6)), 0.0)
    take(m, b + (c - b) * t[:, None])
    return out


def triangle_normals(vertices, triangles):
    """Unit face normals following the right-hand rule on the index order."""
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles)
    n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    if np.any(norm == 0):
        raise GeometryError("degenerate triangle has no normal")
    return n / norm


def edge_neighbors(triangles):
    """``(F, 3)`` index of the face across edges (a, b), (b, c), (c, a); -1 on
    boundary or non-manifold edges."""
    t = np.asarray(triangles, dtype=np.int64)
    F = len(t)
    e0 = t.ravel()
    e1 = np.roll(t, -1, axis=1).ravel()
    key = np.minimum(e0, e1) * (int(t.max()) + 1) + np.maximum(e0, e1)
    order = np.argsort(key, kind="stable")
    k = key[order]
    out = np.full(3 * F, -1, dtype=np.int64)
    start = np.flatnonzero(np.r_[True, k[1:] != k[:-1]])
    count = np.diff(np.r_[start, len(k)])
    pairs = start[count == 2]
    a, b = order[pairs], order[pairs + 1]
    out[a] = b // 3
    out[b] = a // 3
    return out.reshape(F, 3)


def pseudo_normals(vertices, triangles, face_normals, neighbors):
    """Angle-weighted vertex normals ``(V, 3)`` and edge normals ``(F, 3, 3)``.

    Signing a distance by the pseudo-normal of the closest feature gives the
    correct inside/outside answer on a closed mesh, so the signed distance is
    continuous; the face normal alone flips sign across edges and vertices.
    """
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64)
    corners = v[t]
    angles = np.empty(t.shape)
    for k in range(3):
        e1 = corners[:, (k + 1) % 3] - corners[:, k]
        e2 = corners[:, (k + 2) % 3] - corners[:, k]
        cos = np.einsum("ij,ij->i", e1, e2) / (np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1))
        angles[:, k] = np.arccos(np.clip(cos, -1.0, 1.0))
    vn = np.zeros((len(v), 3))
    ids = t.ravel()
    weighted = (angles[:, :, None] * face_normals[:, None, :]).reshape(-1, 3)
    for d in range(3):
        vn[:, d] = np.bincount(ids, weights=weighted[:, d], minlength=len(v))
    vn /= np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-300)
    en = np.repeat(face_normals[:, None, :], 3, axis=1)
    has = neighbors >= 0
    en[has] += face_normals[neighbors[has]]
    norm = np.linalg.norm(en, axis=2, keepdims=True)
    en = np.where(norm > 1e-12, en / np.maximum(norm, 1e-300), face_normals[:, None, :])
    return vn, en


@dataclass
class ClosestPoints:
    """Batched closest-point answer.

    ``distance`` is ``|x - point|``, negative inside the mesh (signed by the
    pseudo-normal of the closest face, edge or vertex); ``normal`` is the
    owning face normal; ``direction`` is the derivative of the signed distance
    with respect to ``x`` (the face normal when ``x`` lies on the surface).
    """

    point: np.ndarray
    triangle: np.ndarray
    distance: np.ndarray
    normal: np.ndarray
    direction: np.ndarray


FEATURE_TOL = 1e-9


def _feature_normals(point, tri, vertices, triangles, normals, vertex_normals, edge_normals):
    """Pseudo-normal of the face, edge or vertex that holds each closest point."""
    t = triangles[tri]
    a, b, c = vertices[t[:, 0]], vertices[t[:, 1]], vertices[t[:, 2]]
    v0, v1, v2 = b - a, c - a, point - a
    d00 = np.einsum("ij,ij->i", v0, v0)
    d01 = np.einsum("ij,ij->i", v0, v1)
    d11 = np.einsum("ij,ij->i", v1, v1)
    d20 = np.einsum("ij,ij->i", v2, v0)
    d21 = np.einsum("ij,ij->i", v2, v1)
    den = d00 * d11 - d01 * d01
    wb = (d11 * d20 - d01 * d21) / den
    wc = (d00 * d21 - d01 * d20) / den
    bary = np.stack([1.0 - wb - wc, wb, wc], axis=1)
    zero = np.abs(bary) <= FEATURE_TOL
    n = normals[tri].copy()
    # an edge slot k joins corners k and k + 1; it is on the edge if the third weight vanishes
    for k in range(3):
        on = zero[:, (k + 2) % 3] & ~zero[:, k] & ~zero[:, (k + 1) % 3]
        n[on] = edge_normals[tri[on], k]
    for k in range(3):
        on = zero[:, (k + 1) % 3] & zero[:, (k + 2) % 3]
        n[on] = vertex_normals[t[on, k]]
    return n


def _finish(x, point, tri, mesh):
    vertices, triangles, normals, vertex_normals, edge_normals = mesh
    diff = x - point
    dist = np.linalg.norm(diff, axis=1)
    n = normals[tri]
    pn = _feature_normals(point, tri, vertices, triangles, normals, vertex_normals, edge_normals)
    side = np.einsum("ij,ij->i", diff, pn)
    sign = np.where(side < 0, -1.0, 1.0)
    direction = n.copy()
    off = dist > 1e-12
    direction[off] = sign[off, None] * diff[off] / dist[off, None]
    return ClosestPoints(point, tri, sign * dist, n, direction)


def _mesh_data(vertices, triangles, neighbors=None):
    normals = triangle_normals(vertices, triangles)
    if neighbors is None:
        neighbors = edge_neighbors(triangles)
    vn, en = pseudo_normals(vertices, triangles, normals, neighbors)
    return (vertices, triangles, normals, vn, en), neighbors


def _select_min(q, tri, d2, n_queries):
    """Per query, the candidate with smallest d2 (ties: lowest triangle index)."""
    order = np.lexsort((tri, d2, q))
    q_sorted = q[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = q_sorted[1:] != q_sorted[:-1]
    pick = order[first]
    if len(pick) != n_queries:
        raise RuntimeError("closest-point search lost a query")
    return pick


def closest_points_brute(vertices, triangles, x, chunk=200_000):
    """All-triangle scan; the reference the BVH must reproduce."""
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if len(t) == 0:
        raise GeometryError("empty mesh")
    mesh, _ = _mesh_data(v, t)
    n_q, n_t = len(x), len(t)
    best_d2 = np.full(n_q, np.inf)
    best_tri = np.zeros(n_q, dtype=np.int64)
    best_pt = np.zeros((n_q, 3))
    step = max(1, chunk // n_t)
    for s in range(0, n_q, step):
        xs = x[s : s + step]
        qi = np.repeat(np.arange(len(xs)), n_t)
        ti = np.tile(np.arange(n_t), len(xs))
        pts = closest_point_on_triangles(xs[qi], v[t[ti, 0]], v[t[ti, 1]], v[t[ti, 2]])
        d2 = np.sum((xs[qi] - pts) ** 2, axis=1)
        pick = _select_min(qi, ti, d2, len(xs))
        best_d2[s : s + step] = d2[pick]
        best_tri[s : s + step] = ti[pick]
        best_pt[s : s + step] = pts[pick]
    return _finish(x, best_pt, best_tri, mesh)


@njit(cache=True)
def _closest_on_triangle(p, a, b, c, out):
    ab0, ab1, ab2 = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    ac0, ac1, ac2 = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    ap0, ap1, ap2 = p[0] - a[0], p[1] - a[1], p[2] - a[2]
    d1 = ab0 * ap0 + ab1 * ap1 + ab2 * ap2
    d2 = ac0 * ap0 + ac1 * ap1 + ac2 * ap2
    if d1 <= 0.0 and d2 <= 0.0:
        out[:] = a
        return
    bp0, bp1, bp2 = p[0] - b[0], p[1] - b[1], p[2] - b[2]
    d3 = ab0 * bp0 + ab1 * bp1 + ab2 * bp2
    d4 = ac0 * bp0 + ac1 * bp1 + ac2 * bp2
    if d3 >= 0.0 and d4 <= d3:
        out[:] = b
        return
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = d1 / (d1 - d3)
        out[0], out[1], out[2] = a[0] + t * ab0, a[1] + t * ab1, a[2] + t * ab2
        return
    cp0, cp1, cp2 = p[0] - c[0], p[1] - c[1], p[2] - c[2]
    d5 = ab0 * cp0 + ab1 * cp1 + ab2 * cp2
    d6 = ac0 * cp0 + ac1 * cp1 + ac2 * cp2
    if d6 >= 0.0 and d5 <= d6:
        out[:] = c
        return
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        t = d2 / (d2 - d6)
        out[0], out[1], out[2] = a[0] + t * ac0, a[1] + t * ac1, a[2] + t * ac2
        return
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out[0], out[1], out[2] = b[0] + t * (c[0] - b[0]), b[1] + t * (c[1] - b[1]), b[2] + t * (c[2] - b[2])
        return
    denom = va + vb + vc
    v = vb / denom if denom != 0.0 else 0.0
    w = vc / denom if denom != 0.0 else 0.0
    out[0] = a[0] + ab0 * v + ac0 * w
    out[1] = a[1] + ab1 * v + ac1 * w
    out[2] = a[2] + ab2 * v + ac2 * w


@njit(cache=True)
def _box_d2(p, lo, hi):
    s = 0.0
    for k in range(3):
        d = 0.0
        if p[k] < lo[k]:
            d = lo[k] - p[k]
        elif p[k] > hi[k]:
            d = p[k] - hi[k]
        s += d * d
    return s


@njit(cache=True)
def _bvh_query(x, left, right, leaf_of, box_lo, box_hi, leaf_start, leaf_stop, order, a, b, c):
    n = x.shape[0]
    pts = np.zeros((n, 3))
    tri = np.zeros(n, dtype=np.int64)
    stack = np.zeros(256, dtype=np.int64)
    cand = np.zeros(3)
    for q in range(n):
        p = x[q]
        best = np.inf
        best_t = -1
        top = 0
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            if _box_d2(p, box_lo[node], box_hi[node]) > best:
                continue
            leaf = leaf_of[node]
            if leaf >= 0:
                for k in range(leaf_start[leaf], leaf_stop[leaf]):
                    t = order[k]
                    _closest_on_triangle(p, a[t], b[t], c[t], cand)
                    d2 = (p[0] - cand[0]) ** 2 + (p[1] - cand[1]) ** 2 + (p[2] - cand[2]) ** 2
                    if d2 < best or (d2 == best and t < best_t):
                        best = d2
                        best_t = t
                        pts[q, 0], pts[q, 1], pts[q, 2] = cand[0], cand[1], cand[2]
            else:
                l, r = left[node], right[node]
                dl = _box_d2(p, box_lo[l], box_hi[l])
                dr = _box_d2(p, box_lo[r], box_hi[r])
                # push the farther child first so the nearer one is visited next
                if dl <= dr:
                    stack[top] = r
                    stack[top + 1] = l
                else:
                    stack[top] = l
                    stack[top + 1] = r
                top += 2
        tri[q] = best_t
    return pts, tri


@njit(cache=True)
def _propagate_boxes(left, right, leaf_of, leaf_lo, leaf_hi):
    n = left.shape[0]
    lo = np.empty((n, 3))
    hi = np.empty((n, 3))
    for node in range(n - 1, -1, -1):
        if leaf_of[node] >= 0:
            lo[node] = leaf_lo[leaf_of[node]]
            hi[node] = leaf_hi[leaf_of[node]]
        else:
            lo[node] = np.minimum(lo[left[node]], lo[right[node]])
            hi[node] = np.maximum(hi[left[node]], hi[right[node]])
    return lo, hi


class TriangleBVH:
    """Axis-aligned bounding-box tree over a triangle mesh.

    Built top down by splitting triangles at the centroid median of the
    longest axis until at most ``leaf_size`` remain in a leaf.
    """

    def __init__(self, vertices, triangles, leaf_size=4):
        v = np.asarray(vertices, dtype=np.float64)
        t = np.asarray(triangles, dtype=np.int64)
        if t.ndim != 2 or t.shape[1] != 3:
            raise ShapeError("triangles must be (F, 3)")
        if len(t) == 0:
            raise GeometryError("empty mesh")
        if leaf_size < 1:
            raise ConfigError("leaf_size must be >= 1")
        self.vertices = v
        self.triangles = t
        self.leaf_size = int(leaf_size)
        self._mesh, self._neighbors = _mesh_data(v, t)
        self.normals = self._mesh[2]
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        self._a, self._b, self._c = a, b, c
        tri_lo = np.minimum(np.minimum(a, b), c)
        tri_hi = np.maximum(np.maximum(a, b), c)

        cent = (a + b + c) / 3.0
        # Top-down median split along the longest centroid axis; node 0 is the
        # root and children are always numbered after their parent.
        order_parts = []
        left, right, leaf_of, starts = [], [], [], []
        pending = [(np.arange(len(t)), -1, 0)]
        n_sorted = 0
        while pending:
            idx, parent, side = pending.pop()
            node = len(left)
            left.append(-1)
            right.append(-1)
            leaf_of.append(-1)
            if parent >= 0:
                (left if side == 0 else right)[parent] = node
            if len(idx) <= self.leaf_size:
                leaf_of[node] = len(starts)
                starts.append(n_sorted)
                n_sorted += len(idx)
                order_parts.append(np.sort(idx))
                continue
            c = cent[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            srt = idx[np.lexsort((idx, c[:, axis]))]
            mid = len(srt) // 2
            pending.append((srt[mid:], node, 1))
            pending.append((srt[:mid], node, 0))
        self.order = np.concatenate(order_parts)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.leaf_of = np.array(leaf_of, dtype=np.int64)
        self.leaf_start = np.array(starts, dtype=np.int64)
        self.leaf_stop = np.append(self.leaf_start[1:], len(t))
        self._fit_boxes(tri_lo, tri_hi)

    def _fit_boxes(self, tri_lo, tri_hi):
        leaf_lo = np.minimum.reduceat(tri_lo[self.order], self.leaf_start, axis=0)
        leaf_hi = np.maximum.reduceat(tri_hi[self.order], self.leaf_start, axis=0)
        self.box_lo, self.box_hi = _propagate_boxes(self.left, self.right, self.leaf_of, leaf_lo, leaf_hi)

    def refit(self, vertices):
        """Same tree over moved vertices (e.g. the posed body); boxes are refitted."""
        v = np.asarray(vertices, dtype=np.float64)
        if v.shape != self.vertices.shape:
            raise ShapeError("refit needs the same vertex count")
        other = object.__new__(TriangleBVH)
        other.__dict__.update(self.__dict__)
        t = self.triangles
        other.vertices = v
        other._mesh, _ = _mesh_data(v, t, self._neighbors)
        other.normals = other._mesh[2]
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        other._a, other._b, other._c = a, b, c
        other._fit_boxes(np.minimum(np.minimum(a, b), c), np.maximum(np.maximum(a, b), c))
        return other

    @property
    def n_nodes(self):
        return len(self.left)

    def leaf_triangles(self, leaf):
        return self.order[self.leaf_start[leaf] : self.leaf_stop[leaf]]

    def query(self, x):
        """Closest surface point for every row of ``x``; see :class:`ClosestPoints`."""
        x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        n_q = len(x)
        if n_q == 0:
            empty = np.zeros((0, 3))
            return ClosestPoints(empty, np.zeros(0, dtype=np.int64), np.zeros(0), empty, empty)
        pts, tri = _bvh_query(
            x, self.left, self.right, self.leaf_of, self.box_lo, self.box_hi,
            self.leaf_start, self.leaf_stop, self.order, self._a, self._b, self._c,
        )
        return _finish(x, pts, tri, self._mesh)

    def closest_point(self, x):
        """Single-point convenience: ``(point, triangle index, signed distance)``."""
        r = self.query(np.asarray(x, dtype=np.float64).reshape(1, 3))
        return r.point[0], int(r.triangle[0]), float(r.distance[0])


class HashGrid:
    """Uniform grid over points with cubic cells of side ``cell_size``."""

    def __init__(self, points, cell_size):
        if cell_size <= 0:
            raise ConfigError("cell_size must be positive")
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.cell_size = float(cell_size)
        if len(self.points) == 0:
            self._origin = np.zeros(3, dtype=np.int64)
            self._dims = np.ones(3, dtype=np.int64)
            self.cells = np.zeros((0, 3), dtype=np.int64)
            self._keys = np.zeros(0, dtype=np.int64)
            self._order = np.zeros(0, dtype=np.int64)
            self._ukeys = np.zeros(0, dtype=np.int64)
            self._ustart = self._ucount = np.zeros(0, dtype=np.int64)
            return
        cells = np.floor(self.points / self.cell_size).astype(np.int64)
        self.cells = cells
        self._origin = cells.min(axis=0) - 1
        self._dims = cells.max(axis=0) - self._origin + 2
        keys = self._key(cells)
        self._order = np.argsort(keys, kind="stable")
        self._keys = keys
        self._ukeys, self._ustart, self._ucount = np.unique(keys[self._order], return_index=True, return_counts=True)

    def _key(self, cells):
        c = cells - self._origin
        return (c[:, 0] * self._dims[1] + c[:, 1]) * self._dims[2] + c[:, 2]

    def buckets(self):
        """Mapping cell -> sorted vertex indices."""
        out = {}
        for k, s, n in zip(self._ukeys, self._ustart, self._ucount):
            idx = np.sort(self._order[s : s + n])
            out[tuple(int(v) for v in self.cells[idx[0]])] = idx
        return out

    def _check_radius(self, radius):
        if radius > self.cell_size * (1 + 1e-12):
            raise ConfigError(f"query radius {radius} exceeds grid cell size {self.cell_size}")

    def _candidates(self, query_cells, qids):
        """(query, point) candidate pairs from the 27 surrounding cells."""
        qs, ps = [], []
        lo, hi = self._origin, self._origin + self._dims - 1
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    nc = query_cells + np.array([dx, dy, dz])
                    inside = np.all((nc >= lo) & (nc <= hi), axis=1)
                    if not np.any(inside):
                        continue
                    keys = self._key(nc[inside])
                    pos = np.searchsorted(self._ukeys, keys)
                    pos = np.minimum(pos, len(self._ukeys) - 1)
                    hit = self._ukeys[pos] == keys
                    if not np.any(hit):
                        continue
                    qsel = qids[inside][hit]
                    start = self._ustart[pos[hit]]
                    count = self._ucount[pos[hit]]
                    offs = np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count)
                    qs.append(np.repeat(qsel, count))
                    ps.append(self._order[np.repeat(start, count) + offs])
        if not qs:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        return np.concatenate(qs), np.concatenate(ps)

    def neighbors(self, x, radius):
        """Sorted indices of all points within the closed ball of ``radius``."""
        self._check_radius(radius)
        if len(self.points) == 0:
            return np.zeros(0, dtype=np.int64)
        x = np.asarray(x, dtype=np.float64).reshape(1, 3)
        cell = np.floor(x / self.cell_size).astype(np.int64)
        _, p = self._candidates(cell, np.zeros(1, dtype=np.int64))
        d2 = np.sum((self.points[p] - x) ** 2, axis=1)
        return np.sort(p[d2 <= radius * radius])

    def pairs(self, radius, include_self=False):
        """All ordered pairs ``(i, j)`` with ``|x_i - x_j| <= radius``, sorted by (i, j)."""
        self._check_radius(radius)
        n = len(self.points)
        if n == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        return _grid_pairs(
            self.points, self.cells - self._origin, self._dims, self._ukeys, self._ustart,
            self._ucount, self._order, float(radius) ** 2, bool(include_self),
        )


@njit(cache=True)
def _grid_pairs(points, cells, dims, ukeys, ustart, ucount, order, r2, include_self):
    n = points.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    for sweep in range(2):
        if sweep == 1:
            offsets = np.zeros(n + 1, dtype=np.int64)
            for i in range(n):
                offsets[i + 1] = offsets[i] + counts[i]
            out_i = np.empty(offsets[n], dtype=np.int64)
            out_j = np.empty(offsets[n], dtype=np.int64)
        for i in range(n):
            found = 0
            for dx in range(-1, 2):
                cx = cells[i, 0] + dx
                if cx < 0 or cx >= dims[0]:
                    continue
                for dy in range(-1, 2):
                    cy = cells[i, 1] + dy
                    if cy < 0 or cy >= dims[1]:
                        continue
                    for dz in range(-1, 2):
                        cz = cells[i, 2] + dz
                        if cz < 0 or cz >= dims[2]:
                            continue
                        key = (cx * dims[1] + cy) * dims[2] + cz
                        pos = np.searchsorted(ukeys, key)
                        if pos >= ukeys.shape[0] or ukeys[pos] != key:
                            continue
                        for k in range(ustart[pos], ustart[pos] + ucount[pos]):
                            j = order[k]
                            if j == i and not include_self:
                                continue
                            d2 = 0.0
                            for c in range(3):
                                d = points[i, c] - points[j, c]
                                d2 += d * d
                            if d2 <= r2:
                                if sweep == 1:
                                    out_j[offsets[i] + found] = j
                                found += 1
            if sweep == 0:
                counts[i] = found
            else:
                out_i[offsets[i] : offsets[i + 1]] = i
                out_j[offsets[i] : offsets[i + 1]] = np.sort(out_j[offsets[i] : offsets[i + 1]])
    return out_i, out_j


def neighbors_brute(points, x, radius):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    d2 = np.sum((points - np.asarray(x, dtype=np.float64).reshape(1, 3)) ** 2, axis=1)
    return np.flatnonzero(d2 <= radius * radius)
