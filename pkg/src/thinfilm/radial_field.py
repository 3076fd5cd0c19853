"""Radial profiles on uniform grids and the quadrature diagnostics built on them.

Every quantity uses the same finite-volume geometry as the dynamics:
node ``i`` owns the shell ``[r_{i-1/2}, r_{i+1/2}]`` (clipped to ``[0, r_max]``),
integrals are ``sum_i V_i f_i`` with exact shell volumes, and gradients live on
the faces between nodes.  With this choice the discrete mass is exactly the
quantity conserved by the time stepper, and

    sum_i V_i u_i (-Lap_h u)_i == ||grad_h u||^2

holds to rounding, so the free energy below is the scheme's Lyapunov function.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def sphere_area(d: int) -> float:
    """Surface area of the unit (d-1)-sphere in R^d."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


@dataclass(frozen=True)
class RadialGrid:
    r_max: float
    n: int
    d: int

    def __post_init__(self):
        if self.n < 16:
            raise ValueError(f"grid needs at least 16 nodes, got {self.n}")
        if not (self.r_max > 0 and math.isfinite(self.r_max)):
            raise ValueError(f"r_max must be positive and finite, got {self.r_max}")
        if self.d < 1:
            raise ValueError("dimension must be positive")

    @property
    def h(self) -> float:
        return self.r_max / (self.n - 1)

    @cached_property
    def r(self) -> np.ndarray:
        r = np.arange(self.n) * self.h
        r.flags.writeable = False
        return r

    @cached_property
    def r_faces(self) -> np.ndarray:
        """Radii of the n-1 interior faces, r_{i+1/2}."""
        rf = (np.arange(self.n - 1) + 0.5) * self.h
        rf.flags.writeable = False
        return rf

    @cached_property
    def shell(self) -> np.ndarray:
        """Dimensionless shell volumes v_i, with V_i = omega * h^d * v_i."""
        d = self.d
        edges = np.concatenate(([0.0], np.arange(self.n - 1) + 0.5, [self.n - 1.0]))
        v = np.diff(edges**d) / d
        v.flags.writeable = False
        return v

    @cached_property
    def volumes(self) -> np.ndarray:
        """Physical shell volumes V_i (including the sphere area factor)."""
        v = sphere_area(self.d) * self.h**self.d * self.shell
        v.flags.writeable = False
        return v

    @cached_property
    def transmissibility(self) -> np.ndarray:
        """Dimensionless face weights t_f = (r_f/h)^(d-1)."""
        t = (np.arange(self.n - 1) + 0.5) ** (self.d - 1)
        t.flags.writeable = False
        return t

    def scaled(self, factor: float) -> "RadialGrid":
        """Same node count, r_max multiplied by ``factor``."""
        return RadialGrid(self.r_max * factor, self.n, self.d)

    def as_dict(self) -> dict:
        return {"r_max": self.r_max, "n": self.n, "d": self.d}


class RadialProfile:
    """Nonnegative nodal values on a :class:`RadialGrid`; immutable."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: RadialGrid, values):
        values = np.array(values, dtype=float)
        if values.shape != (grid.n,):
            raise ValueError(f"expected {grid.n} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("profile values must be finite")
        if np.any(values < 0):
            raise ValueError(f"profile must be nonnegative (min {values.min():.3e})")
        values.flags.writeable = False
        self.grid = grid
        self.values = values

    @classmethod
    def from_function(cls, grid: RadialGrid, func) -> "RadialProfile":
        return cls(grid, func(np.asarray(grid.r)))

    @property
    def r(self) -> np.ndarray:
        return self.grid.r

    @property
    def d(self) -> int:
        return self.grid.d

    def with_values(self, values) -> "RadialProfile":
        return RadialProfile(self.grid, values)

    def support_radius(self, threshold: float = 0.0) -> float:
        idx = np.nonzero(self.values > threshold)[0]
        return float(self.r[idx[-1]]) if idx.size else 0.0

    def __repr__(self):
        return (
            f"RadialProfile(d={self.d}, n={self.grid.n}, r_max={self.grid.r_max:.4g}, "
            f"max={self.values.max():.4g})"
        )


# -- quadrature -----------------------------------------------------------


def integrate(u: RadialProfile, f: np.ndarray) -> float:
    """Integral over R^d of the radial nodal field ``f`` on ``u``'s grid."""
    return float(np.dot(u.grid.volumes, f))


def lp_norm(u: RadialProfile, p: float) -> float:
    if p < 1:
        raise ValueError(f"L^p norm needs p >= 1, got {p}")
    return integrate(u, u.values**p) ** (1.0 / p)


def lp_power(u: RadialProfile, p: float) -> float:
    """``||u||_p^p`` without the final root."""
    return integrate(u, u.values**p)


def mass(u: RadialProfile) -> float:
    return integrate(u, u.values)


def face_gradient(u: RadialProfile) -> np.ndarray:
    return np.diff(u.values) / u.grid.h


def grad_l2_squared(u: RadialProfile) -> float:
    g = u.grid
    weight = sphere_area(g.d) * g.h**g.d * g.transmissibility
    return float(np.dot(weight, face_gradient(u) ** 2))


def grad_l2_norm(u: RadialProfile) -> float:
    return math.sqrt(grad_l2_squared(u))


def second_moment(u: RadialProfile) -> float:
    return integrate(u, u.r**2 * u.values)


def free_energy(u: RadialProfile, m: float) -> float:
    m = float(m)
    return 0.5 * grad_l2_squared(u) - lp_power(u, m + 1) / (m + 1)


# -- differential operators -----------------------------------------------


def laplacian_values(values: np.ndarray, grid: RadialGrid, closure: str = "extrapolate") -> np.ndarray:
    """Conservative radial Laplacian of nodal ``values``.

    ``closure="extrapolate"`` treats the last node with a quadratic ghost value
    (exact on quadratics); ``"noflux"`` closes the outer shell with a zero
    flux, which is what the time stepper uses.
    """
    g = grid
    t = g.transmissibility
    flux = t * np.diff(values)
    div = np.zeros_like(values)
    div[:-1] += flux
    div[1:] -= flux
    v = g.shell
    if closure == "extrapolate":
        n = g.n
        ghost = 3.0 * values[-1] - 3.0 * values[-2] + values[-3]
        rp = (n - 0.5) ** (g.d - 1)
        div[-1] += rp * (ghost - values[-1])
        full = ((n - 0.5) ** g.d - (n - 1.5) ** g.d) / g.d
        out = div / v
        out[-1] = div[-1] / full
        return out / g.h**2
    if closure != "noflux":
        raise ValueError(f"unknown closure {closure!r}")
    return div / v / g.h**2


def radial_laplacian(u: RadialProfile) -> np.ndarray:
    """u'' + (d-1)u'/r at the nodes; d*u''(0) at the origin."""
    return laplacian_values(u.values, u.grid)


def chemical_potential(u: RadialProfile, m: float) -> np.ndarray:
    return -radial_laplacian(u) - u.values ** float(m)


def resolved_faces(u: RadialProfile) -> np.ndarray:
    """Faces whose two nodes both have their Laplacian stencil inside {u > 0}.

    At the edge of a compact support the three-point stencil straddles the
    free boundary, where u'' jumps, so mu is not resolved there.
    """
    pos = u.values > 0
    inner = pos.copy()
    inner[1:] &= pos[:-1]
    inner[:-1] &= pos[1:]
    return inner[:-1] & inner[1:]


def dissipation(u: RadialProfile, m: float) -> float:
    """Integral of u |d_r mu|^2 over the resolved part of the support."""
    g = u.grid
    mu = chemical_potential(u, m)
    mob = 0.5 * (u.values[:-1] + u.values[1:])
    dmu = np.diff(mu) / g.h
    weight = sphere_area(g.d) * g.h**g.d * g.transmissibility
    mask = resolved_faces(u)
    return float(np.sum((weight * mob * dmu**2)[mask]))


# -- dilations --------------------------------------------------------------


def dilate_mass_invariant(u: RadialProfile, lam: float) -> RadialProfile:
    """lam^d u(lam r), sampled on the grid with r_max/lam (exact, no interpolation)."""
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    return RadialProfile(u.grid.scaled(1.0 / lam), lam**u.d * u.values)


def dilate_equation_invariant(u: RadialProfile, lam: float, m: float) -> RadialProfile:
    """lam^(2/(m-1)) u(lam r), the scaling that maps solutions to solutions."""
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    m = float(m)
    if m == 1.0:
        raise ValueError("equation-invariant scaling is degenerate at m = 1")
    return RadialProfile(u.grid.scaled(1.0 / lam), lam ** (2.0 / (m - 1.0)) * u.values)


def remap_conservative(u: RadialProfile, grid: RadialGrid) -> RadialProfile:
    """Transfer ``u`` onto ``grid`` preserving the discrete mass exactly.

    ``u`` is read as piecewise constant on its shells; the cumulative mass is
    evaluated at the new shell edges and differenced.  Outside the old
    domain the new profile is zero.
    """
    if grid.d != u.d:
        raise ValueError("cannot remap across dimensions")
    old = u.grid
    d = u.d
    edges_old = np.concatenate(([0.0], np.asarray(old.r_faces), [old.r_max]))
    cum_old = np.concatenate(([0.0], np.cumsum(u.values * np.diff(edges_old**d))))
    edges_new = np.concatenate(([0.0], np.asarray(grid.r_faces), [grid.r_max]))
    rho = np.clip(edges_new, 0.0, old.r_max)
    cell = np.clip(np.searchsorted(edges_old, rho, side="right") - 1, 0, old.n - 1)
    cum = cum_old[cell] + u.values[cell] * (rho**d - edges_old[cell] ** d)
    new_shell = np.diff(edges_new**d)
    values = np.diff(cum) / new_shell
    return RadialProfile(grid, np.clip(values, 0.0, None))


# -- summary ----------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostics:
    mass: float
    lp_m1: float
    grad_l2: float
    second_moment: float
    free_energy: float
    dissipation: float


def diagnostics(u: RadialProfile, m: float) -> Diagnostics:
    m = float(m)
    g2 = grad_l2_squared(u)
    p = lp_power(u, m + 1)
    return Diagnostics(
        mass=mass(u),
        lp_m1=p ** (1.0 / (m + 1)),
        grad_l2=math.sqrt(g2),
        second_moment=second_moment(u),
        free_energy=0.5 * g2 - p / (m + 1),
        dissipation=dissipation(u, m),
    )


# -- I/O --------------------------------------------------------------------


def save_profile(u: RadialProfile, path, m=None, extra: dict | None = None) -> Path:
    """Write ``path`` as an ``r,u`` CSV and ``path.json`` as its header sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([u.r, u.values])
    np.savetxt(path, data, delimiter=",", header="r,u", comments="", fmt="%.17g")
    header = {"schema_version": SCHEMA_VERSION, "d": u.d, "m": None if m is None else str(m)}
    header.update({"n": u.grid.n, "r_max": u.grid.r_max})
    if extra:
        header.update(extra)
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return path


def load_profile(path) -> tuple[RadialProfile, dict]:
    path = Path(path)
    header = json.loads(path.with_name(path.name + ".json").read_text())
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    grid = RadialGrid(float(header["r_max"]), int(header["n"]), int(header["d"]))
    if data.shape[0] != grid.n or not np.allclose(data[:, 0], grid.r, rtol=1e-12, atol=1e-300):
        raise ValueError(f"{path}: node column does not match header {header}")
    return RadialProfile(grid, data[:, 1]), header
