"""Drape prediction with a trained decoder."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from ..errors import UnknownGroomError
from ..groom import Groom
from ..kinematics import BodyModel, GroomPoser, PoseParams
from .decoder import DecoderNet, GroomEmbedding


@dataclass
class InferenceResult:
    x_hair: np.ndarray
    x_posed: np.ndarray
    seconds: float

    @property
    def per_item_seconds(self):
        n = 1 if self.x_hair.ndim == 3 else len(self.x_hair)
        return self.seconds / max(n, 1)


class DrapeModel:
    """A trained decoder bound to its grooms and body.

    ``grooms[i]`` uses embedding row ``i``.  With ``nearest_fallback`` an
    unknown groom index falls back to the row nearest ``fallback_code``
    (defaults to the table mean) instead of raising.
    """

    def __init__(self, decoder: DecoderNet, embedding: GroomEmbedding, grooms: Sequence[Groom], body: BodyModel,
                 nearest_fallback=False, fallback_code=None, dtype=np.float64):
        self.decoder = decoder
        self.embedding = embedding
        self.grooms = list(grooms)
        self.body = body
        self.nearest_fallback = nearest_fallback
        self.fallback_code = fallback_code
        self.dtype = np.dtype(dtype)
        self._posers = {}
        self._columns = {}
        self._weights32 = None

    def _resolve(self, index):
        index = int(index)
        if 0 <= index < len(self.grooms) and index < self.embedding.n_grooms:
            return index
        if not self.nearest_fallback:
            raise UnknownGroomError(f"groom {index} is not in the model ({len(self.grooms)} grooms)")
        code = self.fallback_code if self.fallback_code is not None else self.embedding.table.mean(axis=0)
        return min(self.embedding.nearest(code), len(self.grooms) - 1)

    def poser(self, index):
        if index not in self._posers:
            self._posers[index] = GroomPoser(self.grooms[index], self.body)
            self._columns[index] = self.decoder.columns(self.grooms[index])
        return self._posers[index]

    def _forward(self, X):
        if self.dtype == np.float64:
            return self.decoder.forward_raw(X)
        # reduced-precision path for benchmarking only
        if self._weights32 is None:
            self._weights32 = [(W.astype(self.dtype), b.astype(self.dtype))
                               for W, b in zip(self.decoder.net.weights, self.decoder.net.biases)]
        a = X.astype(self.dtype)
        for k, (W, b) in enumerate(self._weights32):
            a = a @ W + b
            if k < len(self._weights32) - 1:
                a = np.tanh(a)
        d = self.decoder
        Y = a.astype(np.float64).reshape(len(X), d.n_texels, d.n_vertices, 3)
        Y = Y * (d.output_scale * d.vertex_mask[None, None, :, None])
        return np.cumsum(Y, axis=2) if d.output_mode == "edge" else Y

    def predict_batch(self, items):
        """``items`` is a list of ``(groom_index, beta, pose)``; returns
        ``(x_hair list, x_posed list)`` in input order."""
        idx = [self._resolve(i) for i, _, _ in items]
        betas, poses, inputs = [], [], []
        for gi, (_, beta, pose) in zip(idx, items):
            if pose is not None and not isinstance(pose, PoseParams):
                pose = PoseParams.from_vector(pose, self.body.n_joints)
            pose_vec = (pose or PoseParams.zeros(self.body.n_joints)).to_vector()
            beta_vec = np.zeros(self.body.shape_dim) if beta is None else np.asarray(beta, dtype=np.float64)
            betas.append(beta_vec)
            poses.append(pose)
            inputs.append(np.concatenate([self.embedding.table[gi], beta_vec, pose_vec]))
        posed = [None] * len(items)
        for gi in sorted(set(idx)):
            rows = [k for k, g in enumerate(idx) if g == gi]
            xp = self.poser(gi).batch([betas[k] for k in rows], [poses[k] for k in rows])
            for k, x in zip(rows, xp):
                posed[k] = x
        Y = self._forward(np.stack(inputs)) if inputs else None
        out = [xp + Y[k, self._columns[gi]] for k, (gi, xp) in enumerate(zip(idx, posed))]
        return out, posed


def infer_drape(model: DrapeModel, groom_index, beta=None, pose=None) -> InferenceResult:
    """``x_hair = x_posed + decoded deformation`` with wall-clock timing."""
    start = time.perf_counter()
    x, xp = model.predict_batch([(groom_index, beta, pose)])
    return InferenceResult(x[0], xp[0], time.perf_counter() - start)


def infer_batch(model: DrapeModel, items) -> InferenceResult:
    """Batched prediction; ``seconds`` is the total, see ``per_item_seconds``."""
    start = time.perf_counter()
    x, xp = model.predict_batch(list(items))
    seconds = time.perf_counter() - start
    return InferenceResult(np.stack(x) if x else np.zeros((0,)), np.stack(xp) if xp else np.zeros((0,)), seconds)
