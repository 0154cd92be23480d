"""Structural simulators driven by uniformly sampled ground acceleration."""
from .bilinear import (
    BilinearHystState,
    BilinearParams,
    restoring_force_bilinear,
    simulate_bilinear,
)
from .integrate import integrate_fixed_step
from .masing import (
    MasingHystState,
    MasingParams,
    apply_masing_rules,
    masing_rate,
    simulate_masing,
)
from .motion import GroundMotion
from .structure import (
    modal_damping_ratios,
    modal_frequencies,
    rayleigh_damping,
    shear_building_matrices,
)

__all__ = [
    "BilinearHystState",
    "BilinearParams",
    "GroundMotion",
    "MasingHystState",
    "MasingParams",
    "apply_masing_rules",
    "integrate_fixed_step",
    "masing_rate",
    "modal_damping_ratios",
    "modal_frequencies",
    "rayleigh_damping",
    "restoring_force_bilinear",
    "shear_building_matrices",
    "simulate_bilinear",
    "simulate_masing",
]
