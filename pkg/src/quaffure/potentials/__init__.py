from .contact import (
    body_collision_energy,
    density_exceedance,
    gravity_energy,
    kernel_branches,
    self_collision_energy,
    sph_density,
    sph_kernel,
    sph_kernel_derivative,
)
from .elastic import cosserat_energy, mass_spring_energy, stretch_energy
from .material import MaterialParams
from .pose_reg import pose_reg_energy
from .rod import (
    bend_twist_energy,
    orientations_from_directors,
    rotate_e3,
    stretch_shear_energy,
    unit_quaternion_energy,
)
from .total import EnergyContext, EnergyProblem, EnergyReport, rest_density, total_energy

__all__ = [
    "MaterialParams", "EnergyContext", "EnergyProblem", "EnergyReport", "total_energy", "rest_density",
    "stretch_energy", "cosserat_energy", "mass_spring_energy",
    "stretch_shear_energy", "bend_twist_energy", "unit_quaternion_energy",
    "orientations_from_directors", "rotate_e3",
    "gravity_energy", "body_collision_energy", "self_collision_energy",
    "sph_density", "sph_kernel", "sph_kernel_derivative", "kernel_branches", "density_exceedance",
    "pose_reg_energy",
]
