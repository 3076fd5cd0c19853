"""Radial numerics for u_t = -div(u grad Lap u) - div(u grad u^m) in d >= 3."""

from .params import ModelParams, Regime, classify_regime, scaling_exponents
from .radial_field import RadialGrid, RadialProfile, diagnostics
from .steady import (
    NoZeroContactAngle,
    aubin_talenti,
    critical_family,
    nonexistence_scan,
    rescale_to_mass,
    solve_canonical,
)
from .variational import gns_constant, gns_report, j_functional, p_star
from .dynamics import EvolutionConfig, discrete_steady_state, evolve, hypothesis_check, step

__all__ = [
    "ModelParams",
    "Regime",
    "classify_regime",
    "scaling_exponents",
    "RadialGrid",
    "RadialProfile",
    "diagnostics",
    "NoZeroContactAngle",
    "aubin_talenti",
    "critical_family",
    "nonexistence_scan",
    "rescale_to_mass",
    "solve_canonical",
    "gns_constant",
    "gns_report",
    "j_functional",
    "p_star",
    "EvolutionConfig",
    "discrete_steady_state",
    "evolve",
    "hypothesis_check",
    "step",
]

__version__ = "0.1.0"
