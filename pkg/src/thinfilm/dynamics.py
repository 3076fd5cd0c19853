"""Backward-Euler finite-volume integration of u_t = div(u grad mu), mu = -Lap u - u^m.

Node i carries u_i and mu_i; face i+1/2 carries the mobility
max((u_i + u_{i+1})/2, eps) and the flux r^(d-1) mob (mu_{i+1} - mu_i)/h.
The update is the discrete divergence of those fluxes, so every Newton
iterate has exactly the mass of the previous step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import solve, solve_banded

from .params import ModelParams
from .radial_field import (
    SCHEMA_VERSION,
    RadialGrid,
    RadialProfile,
    dissipation,
    free_energy,
    grad_l2_norm,
    lp_norm,
    mass,
    remap_conservative,
    second_moment,
)
from .steady import CanonicalProfile, SteadyState, solve_canonical

# values below this fraction of max u do not count as support when regridding
SUPPORT_THRESHOLD = 1e-12

TRAJECTORY_COLUMNS = ("t", "mass", "lp_m1", "grad_l2", "m2", "F", "dissipation", "dt")


class StepFailure(RuntimeError):
    """Newton did not converge; the caller should retry with a smaller dt."""


@dataclass(frozen=True)
class EvolutionConfig:
    dt_init: float | None = None  # None: 1e-4 of the intrinsic time scale of u0
    dt_min: float | None = None  # None: 1e-10 of the intrinsic time scale
    dt_max: float = math.inf
    T_max: float = 1.0
    mobility_floor: float = 0.0
    newton_tol: float = 1e-10
    newton_max_iter: int = 12
    blowup_norm_factor: float = 10.0
    blowup_value_cap: float = math.inf
    regrid_policy: str = "expand"  # "fixed" or "expand"
    regrid_fraction: float = 0.9
    sample_every: int = 1
    max_rel_change: float = 5e-3
    max_steps: int = 200_000

    def __post_init__(self):
        if self.dt_init is not None and self.dt_min is not None and not self.dt_min <= self.dt_init:
            raise ValueError("need dt_min <= dt_init")
        if self.dt_init is not None and not self.dt_init <= self.dt_max:
            raise ValueError("need dt_init <= dt_max")
        if not self.blowup_norm_factor > 1:
            raise ValueError("blowup_norm_factor must exceed 1")
        if not 0 < self.regrid_fraction < 1:
            raise ValueError("regrid_fraction must lie in (0, 1)")
        if self.regrid_policy not in ("fixed", "expand"):
            raise ValueError(f"unknown regrid policy {self.regrid_policy!r}")
        if self.mobility_floor < 0:
            raise ValueError("mobility_floor must be nonnegative")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    mass: float
    lp_m1: float
    grad_l2: float
    m2: float
    F: float
    dissipation: float
    dt: float
    u_max: float = 0.0
    grid_id: int = 0

    def row(self):
        return [getattr(self, c) for c in TRAJECTORY_COLUMNS]


@dataclass
class Outcome:
    tag: str  # "Global", "BlowUp" or "Inconclusive"
    t_end: float
    reason: str
    steps: int = 0
    rejected: int = 0
    final: RadialProfile | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        r_max = None if self.final is None else self.final.grid.r_max
        return {"tag": self.tag, "t_end": self.t_end, "reason": self.reason,
                "steps": self.steps, "rejected": self.rejected, "r_max": r_max}


def sample_of(u: RadialProfile, m: float, t: float, dt: float, grid_id: int = 0) -> TrajectorySample:
    return TrajectorySample(
        t=t,
        mass=mass(u),
        lp_m1=lp_norm(u, m + 1),
        grad_l2=grad_l2_norm(u),
        m2=second_moment(u),
        F=free_energy(u, m),
        dissipation=dissipation(u, m),
        dt=dt,
        u_max=float(u.values.max()),
        grid_id=grid_id,
    )


# -- one step ---------------------------------------------------------------


class _Operator:
    """Grid-dependent pieces of the scheme, in index units (t_f, v_i)."""

    def __init__(self, grid: RadialGrid):
        self.grid = grid
        self.v = np.asarray(grid.shell)
        self.t = np.asarray(grid.transmissibility)
        t = np.concatenate(([0.0], self.t, [0.0]))
        # tridiagonal -v h^2 Lap_h / v (noflux): lo[i] = S[i, i-1], up[i] = S[i, i+1]
        self.lo = -t[:-1] / self.v
        self.di = (t[:-1] + t[1:]) / self.v
        self.up = -t[1:] / self.v

    def lap_part(self, u):
        """-h^2 Lap_h u."""
        flux = self.t * np.diff(u)
        div = np.zeros_like(u)
        div[:-1] -= flux
        div[1:] += flux
        return div / self.v

    def mu(self, u, m):
        return self.lap_part(u) / self.grid.h**2 - _odd_power(u, m)


# Newton iterates may dip below zero near a contact line.  Inside the
# iteration u^m is continued as an odd power so the potential stays smooth;
# the mobility is kept nonnegative, and the accepted step is clipped.


def _odd_power(u, m):
    return np.sign(u) * np.abs(u) ** m


def _mobility(u, eps):
    mean = 0.5 * (u[:-1] + u[1:])
    return np.maximum(mean, eps), mean >= eps


def _divergence(g):
    """D^T g for face values g: (D^T g)_i = g_{i-1/2} - g_{i+1/2}."""
    out = np.zeros(len(g) + 1)
    out[1:] += g
    out[:-1] -= g
    return out


def _residual(op, u, un, m, c, eps):
    mu = op.mu(u, m)
    mob, _ = _mobility(u, eps)
    flux = op.t * mob * np.diff(mu)
    return op.v * (u - un) + c * _divergence(flux), mu, mob


def _jacobian(op, u, mu, m, c, eps):
    """Pentadiagonal Jacobian in LAPACK band storage (2 sub-, 2 super-diagonals)."""
    n = len(u)
    h2 = op.grid.h**2
    if m == 1.0:
        dpow = np.ones_like(u)
    else:
        au = np.abs(u)
        dpow = np.where(au > 0, m * au ** (m - 1.0), 0.0) if m > 1 else m * np.where(au > 0, au, np.inf) ** (m - 1.0)
    lo, di, up = op.lo / h2, op.di / h2 - dpow, op.up / h2
    mob, active = _mobility(u, eps)
    tm = op.t * mob
    q = 0.5 * active * op.t * np.diff(mu)
    nf = n - 1
    G = np.zeros((nf, 4))  # G[f, k] = d flux_f / d u_{f+k-1}
    G[1:, 0] = -tm[1:] * lo[1:nf]
    G[:, 1] = tm * (lo[1:] - di[:-1]) + q
    G[:, 2] = tm * (di[1:] - up[:-1]) + q
    G[:-1, 3] = tm[:-1] * up[1:nf]
    ab = np.zeros((5, n))
    ab[2] = op.v
    f = np.arange(nf)
    for k in range(4):
        j = f + k - 1
        ok = (j >= 0) & (j < n)
        vals = c * G[ok, k]
        ab[4 - k, j[ok]] += vals
        ab[3 - k, j[ok]] -= vals
    return ab


def _clip_redistribute(values, shell):
    """Zero negative nodes, moving their (negative) mass into a neighbour."""
    u = values.copy()
    for _ in range(4 * len(u)):
        neg = np.nonzero(u < 0)[0]
        if neg.size == 0:
            break
        i = neg[0]
        deficit = u[i] * shell[i]
        u[i] = 0.0
        if i == 0:
            j = 1
        elif i == len(u) - 1:
            j = i - 1
        else:
            j = i - 1 if u[i - 1] >= u[i + 1] else i + 1
        u[j] += deficit / shell[j]
    else:
        raise StepFailure("could not remove negative values conservatively")
    return u


_OPS: dict = {}


def _operator(grid):
    op = _OPS.get(grid)
    if op is None:
        if len(_OPS) > 32:
            _OPS.clear()
        op = _OPS[grid] = _Operator(grid)
    return op


def step(u: RadialProfile, m: float, dt: float, config: EvolutionConfig | None = None) -> RadialProfile:
    """One backward-Euler step; raises StepFailure when damped Newton stalls."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    config = config or EvolutionConfig()
    m = float(m)
    un = np.asarray(u.values, dtype=float)
    scale = float(un.max())
    if scale == 0.0:
        return u
    op = _operator(u.grid)
    c = dt / u.grid.h**2
    eps = config.mobility_floor
    x = un.copy()
    res, mu, _ = _residual(op, x, un, m, c, eps)
    tol = config.newton_tol * scale
    if np.max(np.abs(res / op.v)) <= tol:
        return u
    rnorm = np.linalg.norm(res)
    for _ in range(config.newton_max_iter):
        ab = _jacobian(op, x, mu, m, c, eps)
        try:
            delta = solve_banded((2, 2), ab, -res)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise StepFailure(f"singular Newton system: {exc}") from exc
        if not np.all(np.isfinite(delta)):
            raise StepFailure("singular Newton system")
        theta = 1.0
        for _ in range(8):
            trial = x + theta * delta
            res_t, mu_t, _ = _residual(op, trial, un, m, c, eps)
            rt = np.linalg.norm(res_t)
            if rt < rnorm or theta < 0.02:
                break
            theta *= 0.5
        x, res, mu, rnorm = trial, res_t, mu_t, rt
        if theta * np.max(np.abs(delta)) <= tol:
            return RadialProfile(u.grid, _clip_redistribute(x, op.v))
    raise StepFailure(f"Newton did not converge in {config.newton_max_iter} iterations (dt={dt:.3e})")


# -- time scales and discrete equilibria --------------------------------------


def intrinsic_time(u: RadialProfile, m: float) -> float:
    """Relaxation time of u: 1 / max(U / L^4, U^m / L^2) for height U, radius L."""
    U = float(u.values.max())
    L = max(u.support_radius(), 4 * u.grid.h)
    return 1.0 / max(U / L**4, U ** float(m) / L**2)


def discrete_canonical(params: ModelParams, nodes: int, canonical: CanonicalProfile | None = None):
    """Compact solution of -Lap_h W = W^m - 1 with ``nodes`` positive values.

    Unknowns are W_0..W_{K} and the squared spacing s = h^2; equations hold on
    nodes 0..K+1 with W_{K+1} = 0, so the chemical potential equals -1 on the
    closure of the support and the discrete flux vanishes identically.
    Returns (values, h) with len(values) == nodes.
    """
    if canonical is None:
        canonical = solve_canonical(params)
    m = params.mf
    K = nodes - 1
    npts = K + 3
    grid = RadialGrid(float(npts - 1), npts, params.d)
    v, t = np.asarray(grid.shell), np.asarray(grid.transmissibility)
    # the discrete support edge sits between nodes K and K+1
    h0 = canonical.R / (K + 0.5)
    r0 = np.arange(K + 1) * h0
    w0 = np.interp(r0, canonical.profile.r, canonical.profile.values)
    x = np.concatenate([w0, [h0 * h0]])

    def system(x):
        w = np.zeros(npts)
        w[: K + 1] = x[:-1]
        s = x[-1]
        flux = t * np.diff(w)
        div = np.zeros(npts)
        div[:-1] += flux
        div[1:] -= flux
        lap = div / v
        wp = np.clip(w, 0.0, None)
        f = -lap - s * (wp**m - 1.0)
        return f[: K + 2], w, s

    for _ in range(60):
        f, w, s = system(x)
        jac = np.zeros((K + 2, K + 2))
        for i in range(K + 2):
            lo, hi = max(i - 1, 0), min(i + 1, K)
            for j in range(lo, hi + 1):
                if j == i - 1:
                    jac[i, j] = -t[i - 1] / v[i]
                elif j == i + 1:
                    jac[i, j] = -t[i] / v[i]
                elif j == i:
                    tl = t[i - 1] if i > 0 else 0.0
                    jac[i, j] = (tl + t[i]) / v[i]
            if i <= K:
                jac[i, i] -= s * m * max(w[i], 0.0) ** (m - 1.0)
        jac[:, -1] = -(np.clip(w[: K + 2], 0.0, None) ** m - 1.0)
        dx = solve(jac, -f)
        x = x + dx
        if np.max(np.abs(dx[:-1])) < 1e-14 * np.max(np.abs(x[:-1])) and abs(dx[-1]) < 1e-14 * x[-1]:
            break
    else:
        raise RuntimeError("discrete equilibrium did not converge")
    w = x[:-1]
    if np.any(w <= 0):
        raise RuntimeError("discrete equilibrium lost positivity")
    return w, math.sqrt(x[-1])


def discrete_steady_state(params: ModelParams, M: float = 1.0, n: int = 512,
                          support_fraction: float = 0.45, lam: float = 1.0,
                          canonical: CanonicalProfile | None = None) -> SteadyState:
    """Steady state of mass M that is an exact fixed point of :func:`step` on n nodes."""
    if not 0 < support_fraction < 1:
        raise ValueError("support_fraction must lie in (0, 1)")
    nodes = max(8, int(round(support_fraction * (n - 1))))
    w, h_can = discrete_canonical(params, nodes, canonical)
    d, m = params.d, params.mf
    values = np.zeros(n)
    values[:nodes] = w
    unit = RadialProfile(RadialGrid(h_can * (n - 1), n, d), values)
    Mw = mass(unit)
    if params.is_mass_critical():
        A = lam**d
    else:
        A = (M / Mw) ** (1.0 / (1.0 - d * (m - 1.0) / 2.0))
    B = A ** ((m - 1.0) / 2.0)
    prof = RadialProfile(unit.grid.scaled(1.0 / B), A * values)
    return SteadyState(params=params, M=mass(prof), A=A, B=B, profile=prof, C_bar=-(A**m))


# -- evolution --------------------------------------------------------------


def _expanded(u: RadialProfile) -> RadialProfile:
    return remap_conservative(u, u.grid.scaled(2.0))


def _rel_change(a: TrajectorySample, b: TrajectorySample, m: float) -> float:
    energy_scale = abs(a.F) + 0.5 * a.grad_l2**2 + a.lp_m1 ** (m + 1) / (m + 1)
    changes = [
        abs(b.lp_m1 - a.lp_m1) / a.lp_m1,
        abs(b.grad_l2 - a.grad_l2) / a.grad_l2,
        abs(b.m2 - a.m2) / a.m2,
        abs(b.F - a.F) / energy_scale,
    ]
    return max(changes)


def detect_blowup(sample: TrajectorySample, u0_sample: TrajectorySample, config: EvolutionConfig,
                  history=None) -> bool:
    """Operational blow-up test on one sample (``history``: recent samples, oldest first)."""
    kappa = config.blowup_norm_factor
    if sample.lp_m1 > kappa * u0_sample.lp_m1 and sample.grad_l2 > kappa * u0_sample.grad_l2:
        return True
    if sample.u_max > config.blowup_value_cap:
        return True
    if history is not None and config.dt_min is not None and sample.dt <= config.dt_min:
        return monitors_rising(list(history) + [sample])
    return False


def monitors_rising(samples, count: int = 10) -> bool:
    if len(samples) < count + 1:
        return False
    tail = samples[-(count + 1):]
    return all(b.lp_m1 > a.lp_m1 and b.grad_l2 > a.grad_l2 for a, b in zip(tail, tail[1:]))


def evolve(u0: RadialProfile, m: float, config: EvolutionConfig | None = None, observer=None):
    """Adaptive backward-Euler run; returns (trajectory, outcome).

    ``observer(t, u)`` is called after every accepted step and regrid.
    """
    config = config or EvolutionConfig()
    m = float(m)
    if float(u0.values.max()) == 0.0:
        raise ValueError("initial data must be nonzero")
    if u0.values[-1] > 0 or u0.values[-2] > 0:
        raise ValueError("initial data must vanish near r_max (finite second moment on the grid)")
    tau = intrinsic_time(u0, m)
    dt_min = config.dt_min if config.dt_min is not None else 1e-10 * tau
    dt = config.dt_init if config.dt_init is not None else 1e-4 * tau
    dt = min(max(dt, dt_min), config.dt_max)
    cfg = replace(config, dt_min=dt_min)

    u = u0
    t = 0.0
    grid_id = 0
    first = sample_of(u, m, 0.0, 0.0, grid_id)
    traj = [first]
    current = first
    F0 = first.F
    tol_E = 1e-8 * (1.0 + abs(F0))
    steps = rejected = 0
    since_sample = 0
    recent = [first]

    def finish(tag, reason):
        if traj[-1].t != t:
            traj.append(current)
        return traj, Outcome(tag, t, reason, steps, rejected, final=u)

    while t < cfg.T_max * (1 - 1e-12):
        if steps >= cfg.max_steps:
            return finish("Inconclusive", f"step budget {cfg.max_steps} exhausted")
        dt_try = min(dt, cfg.T_max - t)
        try:
            nxt = step(u, m, dt_try, cfg)
        except StepFailure as exc:
            rejected += 1
            dt = dt_try * 0.5
            if dt < dt_min:
                if monitors_rising(recent):
                    return finish("BlowUp", f"dt collapsed below dt_min with rising monitors ({exc})")
                return finish("Inconclusive", f"dt collapsed below dt_min ({exc})")
            continue
        cand = sample_of(nxt, m, t + dt_try, dt_try, grid_id)
        change = _rel_change(current, cand, m)
        if cand.F > current.F + tol_E or change > 3 * cfg.max_rel_change:
            rejected += 1
            dt = dt_try * 0.5
            if dt < dt_min:
                if monitors_rising(recent):
                    return finish("BlowUp", "dt collapsed below dt_min with rising monitors")
                return finish("Inconclusive", "dt collapsed below dt_min (energy or accuracy control)")
            continue
        u, t, current = nxt, t + dt_try, cand
        steps += 1
        since_sample += 1
        recent = (recent + [cand])[-12:]
        if since_sample >= cfg.sample_every:
            traj.append(cand)
            since_sample = 0
        if observer is not None:
            observer(t, u)
        if detect_blowup(cand, first, cfg, history=recent[:-1] if dt_try <= dt_min else None):
            return finish("BlowUp", "blow-up monitors exceeded thresholds")
        growth = min(1.2, max(0.5, 0.9 * cfg.max_rel_change / max(change, 1e-300)))
        dt = min(dt_try * growth, cfg.dt_max)
        edge = u.support_radius(threshold=SUPPORT_THRESHOLD * cand.u_max)
        if cfg.regrid_policy == "expand" and edge > cfg.regrid_fraction * u.grid.r_max:
            u = _expanded(u)
            grid_id += 1
            current = sample_of(u, m, t, dt_try, grid_id)
            traj.append(current)
            recent = [current]
            since_sample = 0
            if observer is not None:
                observer(t, u)
    return finish("Global", "reached T_max with bounded monitors")


# -- audits -----------------------------------------------------------------


def identity_rhs(s: TrajectorySample, d: int, m: float) -> tuple[float, float]:
    """Right side of dm2/dt = 2(d+2)F - 2((dm-(d+2))/(m+1)) P, and its term scale."""
    P = s.lp_m1 ** (m + 1)
    k = (d * m - (d + 2)) / (m + 1)
    a, b = 2 * (d + 2) * s.F, 2 * k * P
    return a - b, abs(a) + abs(b)


def second_moment_rates(trajectory, d: int, m: float):
    """(t, centred dm2/dt, identity rhs, scale) at interior samples of each grid segment."""
    if len(trajectory) < 3:
        raise ValueError("second-moment audit needs at least 3 samples")
    m = float(m)
    out = []
    for prev, cur, nxt in zip(trajectory, trajectory[1:], trajectory[2:]):
        if not prev.grid_id == cur.grid_id == nxt.grid_id:
            continue
        hm, hp = cur.t - prev.t, nxt.t - cur.t
        if hm <= 0 or hp <= 0:
            continue
        rate = (hm * hm * nxt.m2 - hp * hp * prev.m2 - (hm * hm - hp * hp) * cur.m2) / (hm * hp * (hm + hp))
        rhs, scale = identity_rhs(cur, d, m)
        out.append((cur.t, rate, rhs, scale))
    return out


def second_moment_audit(trajectory, d: int, m: float) -> float:
    """Worst |dm2/dt - rhs| / (|2(d+2)F| + |2kP|) over interior samples."""
    rates = second_moment_rates(trajectory, d, m)
    if not rates:
        raise ValueError("second-moment audit needs three samples on one grid")
    return max(abs(rate - rhs) / scale for _, rate, rhs, scale in rates)


@dataclass(frozen=True)
class HypothesisCheck:
    F_below: bool
    norm_side: str  # "Below", "Above" or "Tie"
    F_u0: float
    F_star: float
    norm_u0: float
    P_star: float
    F_margin: float
    norm_margin: float
    P_star_formula: float | None = None

    @property
    def refused(self) -> bool:
        return self.norm_side == "Tie"

    @property
    def in_scope(self) -> bool:
        return self.F_below and not self.refused

    @property
    def label(self) -> str:
        """Outcome predicted by the threshold theorems, when they apply."""
        if not self.in_scope:
            return "outside theorem scope"
        return "BlowUp" if self.norm_side == "Above" else "Global"

    def as_dict(self) -> dict:
        out = asdict(self)
        out.update(refused=self.refused, in_scope=self.in_scope, label=self.label)
        return out


def hypothesis_check(u0: RadialProfile, steady: SteadyState, gns=None, rel_tol: float = 1e-6) -> HypothesisCheck:
    """Compare F(u0) with F(U*) and ||u0||_{m+1} with P*.

    The reference values come from ``steady`` as discretised, so u0 built from
    the same grid compares like with like.  ``gns`` (a GnsReport) only adds
    the closed-form P* to the record.
    """
    m = steady.params.mf
    F_star = free_energy(steady.profile, m)
    P_star = steady.P_star_measured
    F_u0 = free_energy(u0, m)
    norm = lp_norm(u0, m + 1)
    F_margin = (F_star - F_u0) / max(abs(F_star), 1e-300)
    norm_margin = (norm - P_star) / P_star
    if abs(norm_margin) <= rel_tol:
        side = "Tie"
    else:
        side = "Above" if norm_margin > 0 else "Below"
    return HypothesisCheck(
        F_below=bool(F_margin > rel_tol),
        norm_side=side,
        F_u0=F_u0,
        F_star=F_star,
        norm_u0=norm,
        P_star=P_star,
        F_margin=F_margin,
        norm_margin=norm_margin,
        P_star_formula=None if gns is None else gns.P_star,
    )


# -- I/O --------------------------------------------------------------------


def write_trajectory(trajectory, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for s in trajectory:
            w.writerow([repr(float(x)) for x in s.row()])
    return path


def outcome_record(outcome: Outcome, check: HypothesisCheck | None = None) -> dict:
    rec = {"schema_version": SCHEMA_VERSION}
    rec.update(outcome.as_dict())
    rec["hypothesis_check"] = None if check is None else check.as_dict()
    return rec
