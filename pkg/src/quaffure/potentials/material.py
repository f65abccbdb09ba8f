from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

ELASTIC_MODELS = ("cosserat", "full_cosserat", "mass_spring")
VARIANTS = ("modified", "shear_only")


@dataclass(frozen=True)
class MaterialParams:
    """Stiffnesses and physical constants of the hair energy.

    Units are SI.  ``vertex_mass`` is the point mass of one strand vertex;
    the default spreads 1 g over 24 vertices.  ``elastic`` selects the elastic
    stack: position-only Cosserat plus Hookean stretch, the full quaternion
    Cosserat rod, or edge/bending springs.
    """

    k_stretch: float = 1e4
    k_cosserat: float = 1e2
    k_stretch_shear: float = 1e2
    k_bend_twist: float = 1e-2
    k_unit_quaternion: float = 1e2
    k_bc: float = 1e6
    k_sc: float = 1e3
    k_pr: float = 10.0
    k_ms_bend: float = 1e2
    collision_margin: float = 0.005
    smoothing_length: float = 0.01
    vertex_mass: float = 1e-3 / 24
    gravity: tuple = (0.0, -9.81, 0.0)
    n_pose_reg: int = 4
    variant: str = "modified"
    elastic: str = "cosserat"

    def __post_init__(self):
        object.__setattr__(self, "gravity", tuple(float(g) for g in self.gravity))
        if len(self.gravity) != 3:
            raise ConfigError("gravity must be a 3-vector")
        for name in ("k_stretch", "k_cosserat", "k_stretch_shear", "k_bend_twist",
                     "k_unit_quaternion", "k_bc", "k_sc", "k_pr", "k_ms_bend"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0")
        if not self.smoothing_length > 0:
            raise ConfigError("smoothing_length h must be > 0")
        if not self.collision_margin >= 0:
            raise ConfigError("collision_margin D must be >= 0")
        if not self.vertex_mass > 0:
            raise ConfigError("vertex_mass must be > 0")
        if int(self.n_pose_reg) < 2:
            raise ConfigError("n_pose_reg must be >= 2")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.elastic not in ELASTIC_MODELS:
            raise ConfigError(f"elastic must be one of {ELASTIC_MODELS}")

    @property
    def g(self):
        return np.asarray(self.gravity, dtype=np.float64)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown material keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def guide_hair(cls, **overrides):
        """Guide-strand material for draping scenes.

        The class defaults make the position-only Cosserat term so stiff that
        gravity deflects a 1 g strand by micro-radians and the density
        penalty never activates; this preset softens bending and strengthens
        self-collision so all loss terms contribute at human scale.  The pose
        regularizer is raised to match: at ``k_pr = 10`` its effect on the
        decoder is below the run-to-run training noise.
        """
        params = dict(k_cosserat=2e-3, k_sc=1e8, k_ms_bend=2e-1, k_pr=1e3)
        params.update(overrides)
        return cls(**params)
