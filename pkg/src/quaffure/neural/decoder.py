"""Groom embedding table and the deformation decoder."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError, UnknownGroomError, ValidationError
from ..groom import TextureLayout
from .mlp import MLP

DEFAULT_LATENT_DIM = 16
DEFAULT_HIDDEN = (256, 256, 256)
OUTPUT_MODES = ("edge", "vertex")


class GroomEmbedding:
    """Learnable latent code per training groom (rows of ``table``)."""

    def __init__(self, n_grooms, dim=DEFAULT_LATENT_DIM, rng=None, table=None, scale=0.1):
        if table is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            table = rng.normal(scale=scale, size=(int(n_grooms), int(dim)))
        self.table = np.array(table, dtype=np.float64)
        if self.table.shape != (int(n_grooms), int(dim)):
            raise ShapeError(f"embedding table must be ({n_grooms}, {dim}), got {self.table.shape}")
        if not np.all(np.isfinite(self.table)):
            raise ValidationError("embedding table must be finite")

    @property
    def n_grooms(self):
        return self.table.shape[0]

    @property
    def dim(self):
        return self.table.shape[1]

    def lookup(self, index, nearest_to=None):
        """Row ``index``; an out-of-range index raises unless ``nearest_to``
        (a latent vector) is given, in which case the closest row is used."""
        index = int(index)
        if 0 <= index < self.n_grooms:
            return self.table[index]
        if nearest_to is None:
            raise UnknownGroomError(f"groom {index} is not in the embedding table ({self.n_grooms} rows)")
        return self.table[self.nearest(nearest_to)]

    def nearest(self, z):
        return int(np.argmin(np.linalg.norm(self.table - np.asarray(z, dtype=np.float64), axis=1)))


class DecoderNet:
    """MLP from ``[z, beta, theta]`` to a masked displacement texture.

    The output covers the union of active texels across the training grooms
    (``texels``, sorted row-major), ``N`` vertices each.  Each groom's
    ``columns`` pick its strands out of that union in strand order.  Root
    vertices are masked to zero so roots stay on the scalp, and the raw
    network output is multiplied by ``output_scale`` (meters).

    With ``output_mode="edge"`` the network emits per-edge increments and a
    fixed cumulative sum along each strand turns them into vertex
    displacements, so an edge's length error depends on its own output
    only.  ``"vertex"`` emits vertex displacements directly.
    """

    def __init__(self, latent_dim, shape_dim, pose_dim, texels, n_vertices, texture_resolution,
                 hidden=DEFAULT_HIDDEN, output_scale=0.05, output_mode="vertex", rng=None, params=None):
        self.latent_dim = int(latent_dim)
        self.shape_dim = int(shape_dim)
        self.pose_dim = int(pose_dim)
        self.texels = np.asarray(texels, dtype=np.int64).reshape(-1, 2)
        self.n_vertices = int(n_vertices)
        self.texture_resolution = int(texture_resolution)
        self.hidden = tuple(int(h) for h in hidden)
        self.output_scale = float(output_scale)
        if output_mode not in OUTPUT_MODES:
            raise ShapeError(f"output_mode must be one of {OUTPUT_MODES}")
        self.output_mode = output_mode
        if len({tuple(t) for t in self.texels}) != len(self.texels):
            raise ShapeError("decoder texels must be unique")
        sizes = (self.input_dim,) + self.hidden + (len(self.texels) * self.n_vertices * 3,)
        self.net = MLP(sizes, rng=rng, params=params)
        self._index = {tuple(t): k for k, t in enumerate(self.texels)}
        self.vertex_mask = np.ones(self.n_vertices)
        self.vertex_mask[0] = 0.0

    @classmethod
    def for_grooms(cls, grooms, latent_dim, shape_dim, pose_dim, **kwargs):
        resolutions = {g.texture_resolution for g in grooms}
        counts = {g.n_vertices for g in grooms}
        if len(resolutions) != 1 or len(counts) != 1:
            raise ShapeError("training grooms must share texture resolution and vertex count")
        texels = sorted({tuple(t) for g in grooms for t in g.texel_of_strand.tolist()})
        return cls(latent_dim, shape_dim, pose_dim, texels, counts.pop(), resolutions.pop(), **kwargs)

    @property
    def input_dim(self):
        return self.latent_dim + self.shape_dim + self.pose_dim

    @property
    def n_texels(self):
        return len(self.texels)

    def columns(self, groom):
        try:
            return np.array([self._index[tuple(t)] for t in groom.texel_of_strand.tolist()], dtype=np.int64)
        except KeyError:
            raise ShapeError(f"groom {groom.name!r} uses texels unknown to the decoder") from None

    def inputs(self, z, beta, theta):
        """Stack per-item inputs into ``(B, input_dim)``."""
        def rows(a, dim):
            if a is None:
                return np.zeros((1, dim))
            a = np.asarray(a, dtype=np.float64)
            return a.reshape(1, -1) if a.ndim < 2 else a

        z = rows(z, self.latent_dim)
        beta = rows(beta, self.shape_dim)
        theta = rows(theta, self.pose_dim)
        B = max(len(z), len(beta), len(theta))
        parts = []
        for arr, dim, name in ((z, self.latent_dim, "latent"), (beta, self.shape_dim, "shape"),
                               (theta, self.pose_dim, "pose")):
            if arr.shape[-1] != dim:
                raise ShapeError(f"{name} input has dimension {arr.shape[-1]}, decoder expects {dim}")
            if len(arr) not in (1, B):
                raise ShapeError(f"{name} batch of {len(arr)} does not match {B}")
            parts.append(np.broadcast_to(arr, (B, dim)))
        return np.concatenate(parts, axis=1)

    def forward_raw(self, X, cache=False):
        """Network output reshaped to ``(B, n_texels, N, 3)``, scaled and root-masked."""
        out = self.net.forward(X, cache=cache)
        Y, acts = out if cache else (out, None)
        Y = Y.reshape(len(X), self.n_texels, self.n_vertices, 3)
        Y = Y * (self.output_scale * self.vertex_mask[None, None, :, None])
        if self.output_mode == "edge":
            Y = np.cumsum(Y, axis=2)
        return (Y, acts) if cache else Y

    def deformation(self, groom, z, beta, theta, columns=None):
        """Per-strand deformations ``(B, S, N, 3)`` for ``groom``."""
        cols = self.columns(groom) if columns is None else columns
        return self.forward_raw(self.inputs(z, beta, theta))[:, cols]

    def decode(self, z, beta, theta, layout: TextureLayout = None):
        """Displacement texture ``(T, T, N, 3)`` for one input; texels outside
        ``layout`` (or outside the decoder's union when ``layout`` is None) are zero."""
        Y = self.forward_raw(self.inputs(z, beta, theta))[0]
        T = self.texture_resolution
        tex = np.zeros((T, T, self.n_vertices, 3))
        tex[self.texels[:, 0], self.texels[:, 1]] = Y
        if layout is not None:
            if layout.resolution != T:
                raise ShapeError(f"layout resolution {layout.resolution} differs from decoder {T}")
            tex[~layout.mask] = 0.0
        return tex

    def backward(self, acts, grad_deformation, columns):
        """Gradients ``(params, inputs)`` from ``dL/d deformation`` of shape ``(B, S, N, 3)``."""
        g = np.asarray(grad_deformation, dtype=np.float64)
        B = g.shape[0]
        full = np.zeros((B, self.n_texels, self.n_vertices, 3))
        full[:, columns] = g
        if self.output_mode == "edge":
            full = np.cumsum(full[:, :, ::-1], axis=2)[:, :, ::-1]
        full *= self.output_scale * self.vertex_mask[None, None, :, None]
        return self.net.backward(acts, full.reshape(B, -1))
