"""Exponent arithmetic and regime classification over (d, m)."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Union

Exponent = Union[float, Fraction]

FLOAT_TIE_TOL = 1e-12


class ParameterError(ValueError):
    """Invalid (d, m) pair."""


class DegenerateScalingError(ParameterError):
    """The equation-invariant scaling family is degenerate at m = 1."""


class Regime(str, enum.Enum):
    SUBCRITICAL = "Subcritical"
    MASS_CRITICAL = "MassCritical"
    SUPERCRITICAL = "Supercritical"
    ENERGY_CRITICAL = "EnergyCritical"
    SUPER_ENERGY_CRITICAL = "SuperEnergyCritical"


def parse_exponent(value) -> Exponent:
    """Accept floats, ints, Fractions and strings such as ``"5/3"``.

    Ints and ``p/q`` strings become Fractions so that the knife-edge
    comparisons against 1 + 2/d and (d+2)/(d-2) are exact.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ParameterError("m must be a number")
    if isinstance(value, Rational):
        return Fraction(value)
    if isinstance(value, str):
        text = value.strip()
        if "/" in text:
            return Fraction(text)
        try:
            return Fraction(int(text))
        except ValueError:
            return float(text)
    return float(value)


@dataclass(frozen=True)
class ModelParams:
    d: int
    m: Exponent

    def __post_init__(self):
        if isinstance(self.d, bool) or int(self.d) != self.d:
            raise ParameterError(f"dimension must be an integer, got {self.d!r}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "m", parse_exponent(self.m))
        if self.d < 3:
            raise ParameterError(f"dimension must be >= 3, got d={self.d}")
        if not self.m > 0:
            raise ParameterError(f"diffusion exponent must be > 0, got m={self.m}")

    @property
    def mf(self) -> float:
        return float(self.m)

    @property
    def exact(self) -> bool:
        return isinstance(self.m, Fraction)

    @property
    def mass_critical(self) -> Fraction:
        return 1 + Fraction(2, self.d)

    @property
    def energy_critical(self) -> Fraction:
        return Fraction(self.d + 2, self.d - 2)

    @property
    def alpha(self) -> float:
        d, m = self.d, self.m
        return float((d + 2 - (d - 2) * m) / (d * m))

    def compare(self, value: Fraction) -> int:
        """Sign of m - value, exact for rational m and 1e-12-tolerant for floats."""
        if self.exact:
            diff = self.m - value
            return (diff > 0) - (diff < 0)
        diff = self.mf - float(value)
        if abs(diff) <= FLOAT_TIE_TOL * max(1.0, abs(float(value))):
            return 0
        return 1 if diff > 0 else -1

    def is_mass_critical(self) -> bool:
        return self.compare(self.mass_critical) == 0

    def below_energy_critical(self) -> bool:
        return self.compare(self.energy_critical) < 0

    def __str__(self):
        return f"d={self.d}, m={self.m}"


@dataclass(frozen=True)
class RegimeReport:
    params: ModelParams
    mass_critical: float
    energy_critical: float
    alpha: float
    regime: Regime

    def as_dict(self) -> dict:
        return {
            "d": self.params.d,
            "m": str(self.params.m),
            "mass_critical": self.mass_critical,
            "energy_critical": self.energy_critical,
            "alpha": self.alpha,
            "regime": self.regime.value,
        }


def classify_regime(params: ModelParams) -> RegimeReport:
    lo = params.compare(params.mass_critical)
    hi = params.compare(params.energy_critical)
    if lo < 0:
        regime = Regime.SUBCRITICAL
    elif lo == 0:
        regime = Regime.MASS_CRITICAL
    elif hi < 0:
        regime = Regime.SUPERCRITICAL
    elif hi == 0:
        regime = Regime.ENERGY_CRITICAL
    else:
        regime = Regime.SUPER_ENERGY_CRITICAL
    alpha = 0.0 if hi == 0 else params.alpha
    return RegimeReport(
        params=params,
        mass_critical=float(params.mass_critical),
        energy_critical=float(params.energy_critical),
        alpha=alpha,
        regime=regime,
    )


@dataclass(frozen=True)
class ScalingExponents:
    space: float
    time: float
    invariant_p: float


def scaling_exponents(params: ModelParams) -> ScalingExponents:
    """Exponents of u -> lam^space u(lam x, lam^time t) and its invariant L^p."""
    m = params.m
    if params.compare(Fraction(1)) == 0:
        raise DegenerateScalingError("scaling family is degenerate at m = 1")
    return ScalingExponents(
        space=float(2 / (m - 1)),
        time=float((4 * m - 2) / (m - 1)),
        invariant_p=float(params.d * (m - 1) / 2),
    )
