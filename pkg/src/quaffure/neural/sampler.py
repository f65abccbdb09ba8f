"""Training pose windows: procedural interpolations or slices of a sequence."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from ..errors import ConfigError
from ..kinematics import BodyModel, PoseParams


@dataclass
class PoseWindow:
    beta: np.ndarray
    poses: List[PoseParams]

    @property
    def pose_vectors(self):
        return np.stack([p.to_vector() for p in self.poses])


class PoseSampler:
    """Emits windows of ``n_frames`` consecutive poses.

    Procedural mode draws two in-range poses for the selected ``joints``
    (each rotation component in ``[-max_angle, max_angle]``), limits their
    gap to ``max_delta`` per frame, and interpolates linearly, so
    consecutive frames differ by at most ``max_delta`` per component.
    Sequence mode slices ``n_frames`` consecutive entries of ``sequence``.
    Shape coefficients are uniform in ``[-shape_range, shape_range]`` and
    fixed over a window.  Angles are in degrees.
    """

    def __init__(self, body: BodyModel, n_frames=4, joints=("neck",), max_angle=30.0, max_delta=3.0,
                 shape_range=0.5, sequence=None):
        self.n_joints = body.n_joints
        self.shape_dim = body.shape_dim
        self.n_frames = int(n_frames)
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        names = list(body.joint_names)
        ids = []
        for j in joints:
            if isinstance(j, str):
                if j not in names:
                    raise ConfigError(f"unknown joint {j!r}; body joints are {names}")
                j = names.index(j)
            ids.append(int(j))
        self.joint_ids = np.array(sorted(set(ids)), dtype=np.int64)
        self.max_angle = np.deg2rad(float(max_angle))
        self.max_delta = np.deg2rad(float(max_delta))
        self.shape_range = float(shape_range)
        if self.max_angle < 0 or self.max_delta < 0 or self.shape_range < 0:
            raise ConfigError("sampler ranges must be >= 0")
        self.sequence = None if sequence is None else list(sequence)
        if self.sequence is not None and len(self.sequence) < self.n_frames:
            raise ConfigError(f"pose sequence has {len(self.sequence)} frames, windows need {self.n_frames}")

    @property
    def pose_dim(self):
        return 3 * self.n_joints + 3

    def _rotations(self, values):
        rot = np.zeros((self.n_joints, 3))
        rot[self.joint_ids] = values.reshape(len(self.joint_ids), 3)
        return PoseParams(rot)

    def sample_beta(self, rng):
        return rng.uniform(-self.shape_range, self.shape_range, size=self.shape_dim)

    def sample_pose(self, rng):
        """One in-range procedural pose."""
        return self._rotations(rng.uniform(-self.max_angle, self.max_angle, size=3 * len(self.joint_ids)))

    def sample_window(self, rng) -> PoseWindow:
        beta = self.sample_beta(rng)
        K = self.n_frames
        if self.sequence is not None:
            start = int(rng.integers(0, len(self.sequence) - K + 1))
            return PoseWindow(beta, self.sequence[start:start + K])
        d = 3 * len(self.joint_ids)
        a = rng.uniform(-self.max_angle, self.max_angle, size=d)
        gap = rng.uniform(-1.0, 1.0, size=d) * self.max_delta * max(K - 1, 0)
        b = np.clip(a + gap, -self.max_angle, self.max_angle)
        t = np.linspace(0.0, 1.0, K) if K > 1 else np.zeros(1)
        return PoseWindow(beta, [self._rotations(a + s * (b - a)) for s in t])

    def sweep(self, start, end, n_frames, beta=None):
        """Linear sweep between two joint-rotation vectors (radians)."""
        start = np.asarray(start, dtype=np.float64)
        end = np.asarray(end, dtype=np.float64)
        beta = np.zeros(self.shape_dim) if beta is None else np.asarray(beta, dtype=np.float64)
        return PoseWindow(beta, [self._rotations(start + s * (end - start)) for s in np.linspace(0, 1, n_frames)])
