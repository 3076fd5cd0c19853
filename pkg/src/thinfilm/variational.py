"""The GNS quotient, its optimal constant, and the threshold quantities built on it.

    J(u) = ||u||_{m+1}^(alpha+2) / (||u||_1^alpha ||grad u||_2^2)

is invariant under amplitude scaling and both dilation families.  Its
supremum C* is attained by the compact steady profile, so C* = J(W).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ModelParams, ParameterError
from .radial_field import (
    RadialGrid,
    RadialProfile,
    free_energy,
    grad_l2_squared,
    lp_norm,
    mass,
    radial_laplacian,
)
from .steady import CanonicalProfile, interior_support, pohozaev_residual, rescale_to_mass


def _alpha(d: int, m: float) -> float:
    return (d + 2 - (d - 2) * m) / (d * m)


def _check_gns_regime(d: int, m: float):
    if not 0 < m < (d + 2) / (d - 2):
        raise ParameterError(f"GNS quotient needs 0 < m < (d+2)/(d-2); got d={d}, m={m}")


def j_functional(u: RadialProfile, m: float) -> float:
    m = float(m)
    d = u.d
    _check_gns_regime(d, m)
    M = mass(u)
    if M == 0.0:
        raise ValueError("J is undefined for the zero profile")
    G = grad_l2_squared(u)
    if G == 0.0:
        raise ValueError("J is undefined for a profile with zero gradient")
    alpha = _alpha(d, m)
    return lp_norm(u, m + 1) ** (alpha + 2) / (M**alpha * G)


def gns_constant(canonical: CanonicalProfile) -> float:
    """C* = J(W); the steady profile is the maximiser."""
    p = canonical.params
    _check_gns_regime(p.d, p.mf)
    return j_functional(canonical.profile, p.mf)


def p_star(C_star: float, M: float, params: ModelParams) -> float:
    """Threshold norm ((alpha+2) / (2 C* M^alpha))^(1/(m-alpha-1))."""
    if params.is_mass_critical():
        raise ParameterError("P* is undefined at m = 1 + 2/d (see critical_mass)")
    _check_positive(C_star=C_star, M=M)
    alpha, m = params.alpha, params.mf
    return ((alpha + 2) / (2 * C_star * M**alpha)) ** (1.0 / (m - alpha - 1))


def critical_mass(C_star: float, params: ModelParams) -> float:
    """M_c = ((m+1) / (2 C*))^(d/2) at m = 1 + 2/d."""
    if not params.is_mass_critical():
        raise ParameterError(f"critical mass only exists at m = 1 + 2/d ({params})")
    _check_positive(C_star=C_star)
    return ((params.mf + 1) / (2 * C_star)) ** (params.d / 2)


def floor_coefficient(params: ModelParams) -> float:
    d, m = params.d, params.mf
    return (d * m - (d + 2)) / ((d + 2) * (m + 1))


def energy_floor(P_star: float, params: ModelParams) -> float:
    """F(U*) = (dm - (d+2)) / ((d+2)(m+1)) P*^(m+1)."""
    return floor_coefficient(params) * P_star ** (params.mf + 1)


def g_aux(x, C_star: float, M: float, params: ModelParams):
    """x^(alpha+2) / (2 C* M^alpha) - x^(m+1) / (m+1); a lower bound for F at norm x."""
    alpha, m = params.alpha, params.mf
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("g is defined for x >= 0")
    out = x ** (alpha + 2) / (2 * C_star * M**alpha) - x ** (m + 1) / (m + 1)
    return float(out) if out.ndim == 0 else out


def g_aux_derivative(x, C_star: float, M: float, params: ModelParams):
    alpha, m = params.alpha, params.mf
    x = np.asarray(x, dtype=float)
    out = (alpha + 2) * x ** (alpha + 1) / (2 * C_star * M**alpha) - x**m
    return float(out) if out.ndim == 0 else out


def _check_positive(**kw):
    for name, value in kw.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class GnsCheck:
    passed: bool
    ratio: float  # J(u) / C*
    margin: float  # 1 + tol - ratio


def verify_gns(u: RadialProfile, C_star: float, m: float, tol: float = 1e-10) -> GnsCheck:
    ratio = j_functional(u, m) / C_star
    return GnsCheck(passed=bool(ratio <= 1 + tol), ratio=ratio, margin=1 + tol - ratio)


def euler_lagrange_residual(V: RadialProfile, C_star: float, m: float) -> float:
    """Residual of the stationarity equation of J at V, relative, on the support interior.

    -Lap V = a V^m - b with a = ((alpha+2)/2) ||V||^(alpha+1-m) / (||V||_1^alpha C*)
    and b = (alpha/2) ||V||^(alpha+2) / (||V||_1^(alpha+1) C*), norms in L^{m+1}.
    """
    m = float(m)
    alpha = _alpha(V.d, m)
    P = lp_norm(V, m + 1)
    M = mass(V)
    a = 0.5 * (alpha + 2) * P ** (alpha + 1 - m) / (M**alpha * C_star)
    b = 0.5 * alpha * P ** (alpha + 2) / (M ** (alpha + 1) * C_star)
    vm = V.values**m
    res = -radial_laplacian(V) - a * vm + b
    mask = interior_support(V.values)
    scale = a * vm.max() + abs(b)
    return float(np.max(np.abs(res[mask])) / scale)


@dataclass(frozen=True)
class GnsReport:
    params: ModelParams
    alpha: float
    C_star: float
    M: float
    P_star: float | None
    F_floor: float
    M_c: float | None = None

    def as_dict(self) -> dict:
        return {
            "d": self.params.d,
            "m": str(self.params.m),
            "alpha": self.alpha,
            "C_star": self.C_star,
            "M": self.M,
            "P_star": self.P_star,
            "F_floor": self.F_floor,
            "M_c": self.M_c,
        }


def gns_report(canonical: CanonicalProfile, M: float = 1.0) -> GnsReport:
    params = canonical.params
    C = gns_constant(canonical)
    if params.is_mass_critical():
        Mc = critical_mass(C, params)
        # every member of the critical family has F = 0 and mass M_c
        return GnsReport(params, params.alpha, C, Mc, None, 0.0, Mc)
    P = p_star(C, M, params)
    return GnsReport(params, params.alpha, C, M, P, energy_floor(P, params))


def gns_checks(canonical: CanonicalProfile, report: GnsReport) -> dict:
    """Identity checks on the extremal at the report's mass."""
    params = canonical.params
    m = params.mf
    if params.is_mass_critical():
        U = canonical.profile
    else:
        U = rescale_to_mass(canonical, report.M).profile
    out = {
        "pohozaev": pohozaev_residual(U, m),
        "euler_lagrange": euler_lagrange_residual(U, report.C_star, m),
        "gns_ratio": verify_gns(U, report.C_star, m).ratio,
    }
    if report.P_star is not None:
        out["P_star_vs_measured"] = abs(lp_norm(U, m + 1) - report.P_star) / report.P_star
        out["F_floor_vs_measured"] = abs(free_energy(U, m) - report.F_floor) / abs(report.F_floor)
    return out


# -- random test profiles -----------------------------------------------------


def random_bumps(grid: RadialGrid, count: int, seed: int = 0, max_bumps: int = 3):
    """Seeded smooth compactly supported profiles (sums of C^2 bumps in r)."""
    rng = np.random.default_rng(seed)
    r = np.asarray(grid.r)
    out = []
    for _ in range(count):
        values = np.zeros_like(r)
        for _ in range(int(rng.integers(1, max_bumps + 1))):
            center = rng.uniform(0.0, 0.5) * grid.r_max
            width = rng.uniform(0.05, 0.45) * grid.r_max
            amp = rng.uniform(0.1, 10.0)
            z = (r - center) / width
            values += amp * np.clip(1.0 - z * z, 0.0, None) ** 3
        out.append(RadialProfile(grid, values))
    return out


def gaussian(grid: RadialGrid, width: float = 1.0, height: float = 1.0) -> RadialProfile:
    return RadialProfile.from_function(grid, lambda r: height * np.exp(-0.5 * (r / width) ** 2))
