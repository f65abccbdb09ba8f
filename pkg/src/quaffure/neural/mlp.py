"""Fully connected network with tanh hidden layers and manual backprop."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError, ValidationError


class MLP:
    """``sizes = (d_in, h_1, ..., d_out)``; all parameters live in one flat
    float64 vector (``params``) and ``weights``/``biases`` are views into it.

    Hidden layers use tanh, the output layer is linear.
    """

    def __init__(self, sizes, rng=None, params=None):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ShapeError(f"invalid layer sizes {sizes}")
        self.sizes = sizes
        self._slices = []
        offset = 0
        for a, b in zip(sizes[:-1], sizes[1:]):
            self._slices.append((offset, offset + a * b, offset + a * b + b))
            offset += a * b + b
        self.n_params = offset
        if params is None:
            params = self.initial_params(rng if rng is not None else np.random.default_rng(0))
        self.params = np.array(params, dtype=np.float64)
        if self.params.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {self.params.shape}")
        if not np.all(np.isfinite(self.params)):
            raise ValidationError("network parameters must be finite")

    def initial_params(self, rng):
        """Glorot-uniform weights, zero biases."""
        out = np.zeros(self.n_params)
        for (a, b), (s0, s1, _) in zip(zip(self.sizes[:-1], self.sizes[1:]), self._slices):
            limit = np.sqrt(6.0 / (a + b))
            out[s0:s1] = rng.uniform(-limit, limit, size=a * b)
        return out

    @property
    def weights(self):
        return [self.params[s0:s1].reshape(a, b)
                for (s0, s1, _), a, b in zip(self._slices, self.sizes[:-1], self.sizes[1:])]

    @property
    def biases(self):
        return [self.params[s1:s2] for _, s1, s2 in self._slices]

    @property
    def n_layers(self):
        return len(self._slices)

    def forward(self, X, cache=False):
        """Outputs for inputs ``X`` of shape ``(B, d_in)``; with ``cache`` also
        returns the activations needed by :meth:`backward`."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.sizes[0]:
            raise ShapeError(f"expected inputs of shape (B, {self.sizes[0]}), got {X.shape}")
        acts = [X]
        a = X
        last = self.n_layers - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W
            z += b
            a = np.tanh(z) if k < last else z
            acts.append(a)
        return (a, acts) if cache else a

    def backward(self, acts, grad_out):
        """Reverse-mode pass: ``(parameter gradient (flat), input gradient)``."""
        if acts is None:
            raise ValidationError("backward needs the activations cached by forward(cache=True)")
        delta = np.asarray(grad_out, dtype=np.float64)
        if delta.shape != acts[-1].shape:
            raise ShapeError(f"upstream gradient {delta.shape} does not match output {acts[-1].shape}")
        grad = np.zeros(self.n_params)
        weights = self.weights
        for k in range(self.n_layers - 1, -1, -1):
            s0, s1, s2 = self._slices[k]
            a_prev = acts[k]
            grad[s0:s1] = (a_prev.T @ delta).ravel()
            grad[s1:s2] = delta.sum(axis=0)
            delta = delta @ weights[k].T
            if k > 0:
                delta *= 1.0 - a_prev * a_prev
        return grad, delta
