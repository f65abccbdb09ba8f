"""Groom data model and the scalp-texture layout.

A groom is stored as dense arrays (strands x vertices x 3) so that every energy
term can be evaluated without Python loops over strands.  :class:`Strand` is a
lightweight per-strand view used at API boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CapacityError, LayoutError, ShapeError, ValidationError

DEFAULT_VERTS_PER_STRAND = 24
DEFAULT_TEXTURE_RESOLUTION = 64


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def edge_vectors(positions):
    """Edge vectors ``x[i+1] - x[i]`` along the vertex axis (second to last)."""
    return positions[..., 1:, :] - positions[..., :-1, :]


def segment_lengths(positions):
    return np.linalg.norm(edge_vectors(positions), axis=-1)


def unit_directors(positions):
    """Normalized edge vectors; raises on zero-length segments."""
    e = edge_vectors(positions)
    n = np.linalg.norm(e, axis=-1, keepdims=True)
    if np.any(n <= 0.0):
        raise ValidationError("zero-length segment has no director")
    return e / n


@dataclass(frozen=True)
class Strand:
    positions: np.ndarray
    rest_lengths: np.ndarray
    rest_directors: np.ndarray
    root_uv: np.ndarray
    attachment_triangle: int = -1
    attachment_barycentric: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 0.0, 0.0])
    )

    def __post_init__(self):
        p = np.asarray(self.positions)
        if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] < 2:
            raise ShapeError(f"strand positions must be (N>=2, 3), got {p.shape}")
        if np.any(np.asarray(self.rest_lengths) <= 0):
            raise ValidationError("rest lengths must be positive")

    @property
    def n_vertices(self):
        return self.positions.shape[0]


@dataclass(frozen=True, eq=False)
class Groom:
    """A set of strands sharing one vertex count.

    Parameters
    ----------
    positions : (S, N, 3) rest vertex positions in meters.
    root_uv : (S, 2) scalp UV of each root, in [0, 1).
    attachment_triangle : (S,) scalp triangle index per strand (-1 if unattached).
    attachment_barycentric : (S, 3) barycentric root coordinates in that triangle.
    texture_resolution : side length ``T`` of the scalp texture.
    """

    positions: np.ndarray
    root_uv: np.ndarray
    attachment_triangle: Optional[np.ndarray] = None
    attachment_barycentric: Optional[np.ndarray] = None
    texture_resolution: int = DEFAULT_TEXTURE_RESOLUTION
    name: str = "groom"
    rest_density: Optional[np.ndarray] = None
    texel_of_strand: np.ndarray = field(init=False)
    rest_lengths: np.ndarray = field(init=False)
    rest_directors: np.ndarray = field(init=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[-1] != 3:
            raise ShapeError(f"groom positions must be (S, N, 3), got {pos.shape}")
        n_strands, n_verts = pos.shape[:2]
        if n_verts < 2 and n_strands > 0:
            raise ShapeError("strands need at least 2 vertices")
        if not np.all(np.isfinite(pos)):
            raise ValidationError("groom positions must be finite")
        uv = np.asarray(self.root_uv, dtype=np.float64).reshape(n_strands, 2)
        if np.any(uv < 0.0) or np.any(uv >= 1.0):
            raise ValidationError("root UVs must lie in [0, 1)^2")

        tri = self.attachment_triangle
        tri = np.full(n_strands, -1, dtype=np.int64) if tri is None else np.asarray(tri, dtype=np.int64)
        bary = self.attachment_barycentric
        if bary is None:
            bary = np.tile([1.0, 0.0, 0.0], (n_strands, 1))
        bary = np.asarray(bary, dtype=np.float64).reshape(n_strands, 3)
        if np.any(bary < -1e-12) or np.any(np.abs(bary.sum(axis=1) - 1.0) > 1e-9):
            raise ValidationError("barycentric coordinates must be non-negative and sum to 1")

        lengths = segment_lengths(pos)
        if np.any(lengths <= 0.0):
            raise ValidationError("rest lengths must be positive")
        directors = edge_vectors(pos) / lengths[..., None]

        if self.rest_density is not None:
            rho = np.asarray(self.rest_density, dtype=np.float64)
            if rho.shape != (n_strands * n_verts,) or not np.all(np.isfinite(rho)) or np.any(rho < 0):
                raise ValidationError("rest_density must be finite, >= 0, one entry per vertex")
            object.__setattr__(self, "rest_density", _frozen(rho))

        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "root_uv", _frozen(uv))
        object.__setattr__(self, "attachment_triangle", _frozen(tri, np.int64))
        object.__setattr__(self, "attachment_barycentric", _frozen(bary))
        object.__setattr__(self, "rest_lengths", _frozen(lengths))
        object.__setattr__(self, "rest_directors", _frozen(directors))
        texels = assign_texels(uv, self.texture_resolution)
        object.__setattr__(self, "texel_of_strand", _frozen(texels, np.int64))

    @property
    def n_strands(self):
        return self.positions.shape[0]

    @property
    def n_vertices(self):
        return self.positions.shape[1]

    @property
    def strands(self):
        return [
            Strand(
                self.positions[i],
                self.rest_lengths[i],
                self.rest_directors[i],
                self.root_uv[i],
                int(self.attachment_triangle[i]),
                self.attachment_barycentric[i],
            )
            for i in range(self.n_strands)
        ]

    @property
    def layout(self):
        return TextureLayout(self.texture_resolution, self.texel_of_strand)

    def replace(self, **changes):
        kwargs = dict(
            positions=self.positions,
            root_uv=self.root_uv,
            attachment_triangle=self.attachment_triangle,
            attachment_barycentric=self.attachment_barycentric,
            texture_resolution=self.texture_resolution,
            name=self.name,
            rest_density=self.rest_density,
        )
        kwargs.update(changes)
        return Groom(**kwargs)

    @classmethod
    def from_strands(cls, strands: Sequence[Strand], **kwargs):
        if not strands:
            return cls(np.zeros((0, DEFAULT_VERTS_PER_STRAND, 3)), np.zeros((0, 2)), **kwargs)
        counts = {s.n_vertices for s in strands}
        if len(counts) != 1:
            raise ShapeError(f"all strands must share a vertex count, got {sorted(counts)}")
        return cls(
            np.stack([s.positions for s in strands]),
            np.stack([s.root_uv for s in strands]),
            np.array([s.attachment_triangle for s in strands]),
            np.stack([s.attachment_barycentric for s in strands]),
            **kwargs,
        )


class TextureLayout:
    """Occupancy of a ``T x T`` scalp texture: which texel holds which strand."""

    def __init__(self, resolution, texels):
        self.resolution = int(resolution)
        texels = np.asarray(texels, dtype=np.int64).reshape(-1, 2)
        T = self.resolution
        if np.any(texels < 0) or np.any(texels >= T):
            raise LayoutError(f"texel outside the {T}x{T} texture")
        occupancy = np.full((T, T), -1, dtype=np.int64)
        for idx, (r, c) in enumerate(texels):
            if occupancy[r, c] >= 0:
                raise LayoutError(f"texel ({r}, {c}) assigned to strands {occupancy[r, c]} and {idx}")
            occupancy[r, c] = idx
        self.texels = texels
        self.occupancy = occupancy

    @property
    def n_active(self):
        return len(self.texels)

    @property
    def active_texels(self):
        return {tuple(int(v) for v in t) for t in self.texels}

    @property
    def mask(self):
        return self.occupancy >= 0

    def __eq__(self, other):
        return (
            isinstance(other, TextureLayout)
            and self.resolution == other.resolution
            and np.array_equal(self.texels, other.texels)
        )

    def __repr__(self):
        return f"TextureLayout(resolution={self.resolution}, n_active={self.n_active})"


def assign_texels(root_uvs, resolution):
    """Map each strand root to a unique texel.

    Every root goes to ``floor(uv * T)``.  When several roots share a texel the
    one closest to the texel center keeps it (ties: lower strand index); the
    others, in strand order, take the nearest free texel measured from their
    UV point (ties: lowest row, then column).
    """
    uv = np.asarray(root_uvs, dtype=np.float64).reshape(-1, 2)
    T = int(resolution)
    n = len(uv)
    if n > T * T:
        raise CapacityError(f"{n} strands do not fit in a {T}x{T} texture")
    if n == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if np.any(uv < 0.0) or np.any(uv >= 1.0):
        raise ValidationError("root UVs must lie in [0, 1)^2")
    scaled = uv * T
    base = np.minimum(np.floor(scaled).astype(np.int64), T - 1)
    dist_center = np.linalg.norm(scaled - (base + 0.5), axis=1)

    texels = base.copy()
    taken = np.zeros((T, T), dtype=bool)
    flat = base[:, 0] * T + base[:, 1]
    order = np.lexsort((np.arange(n), dist_center, flat))
    losers = []
    prev = -1
    for idx in order:
        if flat[idx] == prev:
            losers.append(idx)
        else:
            taken[base[idx, 0], base[idx, 1]] = True
            prev = flat[idx]
    if losers:
        rows, cols = np.meshgrid(np.arange(T), np.arange(T), indexing="ij")
        centers = np.stack([rows.ravel(), cols.ravel()], axis=1) + 0.5
        for idx in sorted(losers):
            free = ~taken.ravel()
            cand = np.flatnonzero(free)
            d = np.linalg.norm(centers[cand] - scaled[idx], axis=1)
            best = cand[np.argmin(d)]  # argmin returns the first minimum: row-major tie-break
            r, c = divmod(int(best), T)
            texels[idx] = (r, c)
            taken[r, c] = True
    return texels


def texture_encode(values, layout: TextureLayout):
    """Scatter per-strand ``(S, N, 3)`` data (or a :class:`Groom`) into ``T x T x N x 3``."""
    if isinstance(values, Groom):
        values = values.positions
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or values.shape[-1] != 3:
        raise ShapeError(f"expected (S, N, 3) strand data, got {values.shape}")
    if values.shape[0] != layout.n_active:
        raise LayoutError(f"{values.shape[0]} strands for {layout.n_active} active texels")
    T = layout.resolution
    n_verts = values.shape[1] if values.shape[0] else DEFAULT_VERTS_PER_STRAND
    out = np.zeros((T, T, n_verts, 3))
    if values.shape[0]:
        out[layout.texels[:, 0], layout.texels[:, 1]] = values
    return out


def texture_decode(texture, layout: TextureLayout):
    """Gather the active texels of a ``T x T x N x 3`` field in strand order."""
    texture = np.asarray(texture)
    T = layout.resolution
    if texture.ndim != 4 or texture.shape[:2] != (T, T) or texture.shape[-1] != 3:
        raise ShapeError(f"texture shape {texture.shape} does not match a {T}x{T} layout")
    out = texture[layout.texels[:, 0], layout.texels[:, 1]]
    if not np.all(np.isfinite(out)):
        raise ValidationError("non-finite values in an active texel")
    return np.array(out, dtype=np.float64)


def mask_texture(texture, layout: TextureLayout):
    """Zero every inactive texel."""
    out = np.array(texture, dtype=np.float64)
    out[~layout.mask] = 0.0
    return out


def resample_polyline(points, n_vertices):
    """Uniform arc-length resampling of a polyline to ``n_vertices`` points."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) < 2:
        raise ShapeError("polyline needs at least two points")
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 0])
    points = points[keep]
    s = np.concatenate([[0.0], np.cumsum(seg[seg > 0])])
    if s[-1] <= 0:
        raise ValidationError("polyline has zero length")
    t = np.linspace(0.0, s[-1], n_vertices)
    return np.stack([np.interp(t, s, points[:, k]) for k in range(3)], axis=1)
