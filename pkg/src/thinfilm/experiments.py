"""Batch experiments: threshold tables, regime sweeps and energy landscapes.

Every emitted file is either JSON carrying ``schema_version`` or CSV with a
``<name>.json`` sidecar that does.  Floats are written with ``repr`` and no
timestamps are recorded, so equal configs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dynamics import (
    EvolutionConfig,
    discrete_steady_state,
    evolve,
    hypothesis_check,
    outcome_record,
    write_trajectory,
)
from .params import ModelParams, Regime, classify_regime, parse_exponent
from .radial_field import SCHEMA_VERSION, dilate_mass_invariant, free_energy, lp_norm
from .steady import (
    CanonicalProfile,
    NoZeroContactAngle,
    SteadyState,
    default_scan_points,
    nonexistence_scan,
    pohozaev_residual,
    rescale_to_mass,
    critical_family,
    solve_canonical,
    steady_audit,
    steady_residual,
)
from .variational import GnsReport, gns_report

OUTSIDE_SCOPE = "outside theorem scope"
AT_THRESHOLD = "at threshold / outside scope"
EXPLORATORY = "exploratory: no theorem covers F(u0) >= F(U*)"


class RefusalError(RuntimeError):
    """The requested run falls outside the hypotheses it would be evidence for."""


class GateError(RuntimeError):
    """A steady state failed its residual gates."""


# -- configuration ----------------------------------------------------------


@dataclass
class ExperimentConfig:
    d: int = 3
    m: object = 2
    M: float = 1.0
    n: int = 512
    support_fraction: float = 0.45
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    lambdas: tuple = (0.7, 0.8, 1.2, 1.25)
    out_dir: str | None = None
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.m = parse_exponent(self.m)
        self.lambdas = tuple(float(x) for x in self.lambdas)
        if any(not x > 0 for x in self.lambdas):
            raise ValueError("dilation factors must be positive")
        if len(set(self.lambdas)) != len(self.lambdas):
            raise ValueError("dilation factors must be distinct")
        if self.out_dir is not None:
            out = Path(self.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            probe = out / ".write-probe"
            probe.write_text("")
            probe.unlink()

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.d, self.m)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        data.pop("schema_version", None)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        evo = data.pop("evolution", None) or {}
        if isinstance(evo, dict):
            evo = EvolutionConfig(**{k: _num(v) for k, v in evo.items()})
        return cls(evolution=evo, **data)

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["m"] = str(self.m)
        out["lambdas"] = list(self.lambdas)
        out["evolution"] = {k: _jsonable(v) for k, v in asdict(self.evolution).items()}
        out["schema_version"] = SCHEMA_VERSION
        return out


def _num(v):
    return math.inf if v in ("inf", "Infinity") else v


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else "-inf"
    return v


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


# -- output helpers ----------------------------------------------------------


def _clean(value):
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, Regime):
        return value.value
    return value


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rec = dict(obj)
    rec.setdefault("schema_version", SCHEMA_VERSION)
    path.write_text(dumps(rec))
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(rows: list[dict], path, columns=None, meta: dict | None = None) -> Path:
    """CSV with a ``.json`` sidecar holding schema_version and ``meta``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns or (rows[0].keys() if rows else []))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])
    side = {"schema_version": SCHEMA_VERSION, "columns": columns}
    side.update(meta or {})
    path.with_name(path.name + ".json").write_text(dumps(side))
    return path


# -- steady states with gates -------------------------------------------------

GATE_STEADY = 1e-4
GATE_POHOZAEV = 1e-4


def gate(s: SteadyState, label: str = "steady state"):
    """Refuse to hand a steady state downstream unless its residuals are small."""
    res = steady_residual(s)
    poh = pohozaev_residual(s.profile, s.params.mf)
    if not (res < GATE_STEADY and poh < GATE_POHOZAEV):
        raise GateError(f"{label} failed gates: steady_residual={res:.2e}, pohozaev={poh:.2e}")
    return {"steady_residual": res, "pohozaev_residual": poh}


@dataclass
class Prepared:
    params: ModelParams
    canonical: CanonicalProfile
    steady: SteadyState  # sampled ODE solution, fine grid
    discrete: SteadyState  # fixed point of the time stepper
    gns: GnsReport
    gates: dict


def prepare(params: ModelParams, M: float = 1.0, n: int = 512, support_fraction: float = 0.45) -> Prepared:
    canonical = solve_canonical(params)
    if params.is_mass_critical():
        steady = critical_family(canonical, 1.0)
    else:
        steady = rescale_to_mass(canonical, M)
    disc = discrete_steady_state(params, M, n=n, support_fraction=support_fraction, canonical=canonical)
    gates = {"fine": gate(steady, "sampled steady state"), "discrete": gate(disc, "discrete steady state")}
    return Prepared(params, canonical, steady, disc, gns_report(canonical, M), gates)


def steady_summary(prep: Prepared) -> dict:
    s, c = prep.steady, prep.canonical
    return {
        "d": prep.params.d,
        "m": str(prep.params.m),
        "a_star": c.a_star,
        "R": c.R,
        "A": s.A,
        "B": s.B,
        "C_bar": s.C_bar,
        "M": s.M,
        "P_star_measured": s.P_star_measured,
        "residuals": steady_audit(s),
    }


# -- threshold experiment -----------------------------------------------------


@dataclass
class DichotomyRow:
    lam: float
    F_u0: float
    F_star: float
    norm_u0: float
    P_star: float
    F_below: bool
    norm_side: str
    in_scope: bool
    expected: str
    outcome: str
    t_end: float
    r_max_end: float
    reason: str
    m2_decreasing: bool
    m2_increasing_late: bool
    norm_below_throughout: bool
    norm_above_throughout: bool
    note: str
    agrees: bool | None

    def as_dict(self) -> dict:
        return asdict(self)


COLUMNS = [f.name for f in fields(DichotomyRow)]


def _run_row(args):
    lam, disc, evo, out_dir = args
    m = disc.params.mf
    u0 = dilate_mass_invariant(disc.profile, lam)
    check = hypothesis_check(u0, disc)
    traj, outcome = evolve(u0, m, evo)
    if out_dir is not None:
        stem = "run_lam" + f"{lam:g}".replace(".", "p")
        write_trajectory(traj, Path(out_dir) / f"{stem}.csv")
        write_json(outcome_record(outcome, check), Path(out_dir) / f"{stem}.json")
    m2 = np.array([s.m2 for s in traj])
    gid = np.array([s.grid_id for s in traj])
    same = gid[1:] == gid[:-1]
    dm2 = np.diff(m2)[same]
    late = dm2[len(dm2) // 2:]
    norms = np.array([s.lp_m1 for s in traj])
    P = check.P_star
    if check.refused:
        note = AT_THRESHOLD
    elif not check.F_below:
        note = f"{OUTSIDE_SCOPE}; {EXPLORATORY}"
    else:
        note = ""
    agrees = (outcome.tag == check.label) if check.in_scope else None
    return DichotomyRow(
        lam=lam,
        F_u0=check.F_u0,
        F_star=check.F_star,
        norm_u0=check.norm_u0,
        P_star=P,
        F_below=check.F_below,
        norm_side=check.norm_side,
        in_scope=check.in_scope,
        expected=check.label,
        outcome=outcome.tag,
        t_end=outcome.t_end,
        r_max_end=outcome.final.grid.r_max,
        reason=outcome.reason,
        m2_decreasing=bool(dm2.size and np.all(dm2 < 0)),
        m2_increasing_late=bool(late.size and np.all(late > 0)),
        norm_below_throughout=bool(np.all(norms < P)),
        norm_above_throughout=bool(np.all(norms > P)),
        note=note,
        agrees=agrees,
    )


def threshold_experiment(config: ExperimentConfig, prepared: Prepared | None = None) -> list[DichotomyRow]:
    """Evolve dilations lam^d U*(lam r) and tabulate outcome against the theorem labels."""
    params = config.params
    if classify_regime(params).regime is not Regime.SUPERCRITICAL:
        raise RefusalError(f"threshold experiment needs 1 + 2/d < m < (d+2)/(d-2); got {params}")
    if not config.lambdas:
        return []
    prep = prepared or prepare(params, config.M, config.n, config.support_fraction)
    jobs = [(lam, prep.discrete, config.evolution, config.out_dir) for lam in config.lambdas]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(_run_row, jobs))
    else:
        rows = [_run_row(job) for job in jobs]
    rows.sort(key=lambda row: row.lam)
    if config.out_dir is not None:
        out = Path(config.out_dir)
        write_csv([r.as_dict() for r in rows], out / "threshold.csv", COLUMNS,
                  meta={"config": config.as_dict(), "gns": prep.gns.as_dict(), "gates": prep.gates})
    return rows


def dichotomy_failures(rows) -> list[DichotomyRow]:
    """In-scope rows whose outcome or trapping property contradicts the theorems."""
    bad = []
    for row in rows:
        if not row.in_scope:
            continue
        if row.norm_side == "Above":
            ok = row.outcome == "BlowUp" and row.m2_decreasing and row.norm_above_throughout
        else:
            ok = row.outcome == "Global" and row.norm_below_throughout and row.m2_increasing_late
        if not ok:
            bad.append(row)
    return bad


# -- regime sweep -----------------------------------------------------------


SWEEP_COLUMNS = [
    "d", "m", "regime", "status", "a_star", "R", "C_star", "P_star", "M_c", "F_floor",
    "F_measured", "steady_residual", "pohozaev_residual", "scan_sign_changes",
    "scan_min_abs_shooting", "scan_a_max",
]


def _sweep_row(args):
    d, m, M = args
    params = ModelParams(d, m)
    rep = classify_regime(params)
    row = {"d": d, "m": str(params.m), "regime": rep.regime.value}
    try:
        canonical = solve_canonical(params)
    except NoZeroContactAngle as exc:
        scan = exc.scan
        row.update(status="NoZeroContactAngle", scan_sign_changes=scan.sign_changes,
                   scan_min_abs_shooting=scan.min_abs_miss, scan_a_max=scan.rows[-1].a)
        return row
    g = gns_report(canonical, M)
    s = critical_family(canonical, 1.0) if params.is_mass_critical() else rescale_to_mass(canonical, M)
    row.update(
        status="solved",
        a_star=canonical.a_star,
        R=canonical.R,
        C_star=g.C_star,
        P_star=g.P_star,
        M_c=g.M_c,
        F_floor=g.F_floor,
        F_measured=free_energy(s.profile, params.mf),
        steady_residual=steady_residual(s),
        pohozaev_residual=pohozaev_residual(s.profile, params.mf),
    )
    return row


def regime_sweep(d_list, m_list, M: float = 1.0, workers: int = 1) -> list[dict]:
    jobs = [(int(d), parse_exponent(m), M) for d in d_list for m in m_list]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(job) for job in jobs]
    order = {(d, str(parse_exponent(m))): i for i, (d, m, _) in enumerate(jobs)}
    rows.sort(key=lambda r: order[(r["d"], r["m"])])
    return rows


def scan_report(params: ModelParams, a_lo: float = 1.01, a_hi: float = 1e4, points: int = 60, h=None):
    kw = {} if h is None else {"h": h}
    return nonexistence_scan(params, default_scan_points(a_lo, a_hi, points), **kw)


# -- energy landscape ---------------------------------------------------------


def energy_landscape(prep: Prepared, x_grid, delta: float = 0.5) -> tuple[list[dict], dict]:
    """Rows (x, g(x)) plus markers at P* and the band delta * g(P*)."""
    from .variational import g_aux

    g = prep.gns
    if g.P_star is None:
        raise RefusalError("the landscape g is flat in scale at m = 1 + 2/d; no P* exists")
    x = np.asarray(x_grid, dtype=float)
    vals = g_aux(x, g.C_star, g.M, prep.params)
    gP = g_aux(g.P_star, g.C_star, g.M, prep.params)
    rows = [{"x": float(a), "g": float(b)} for a, b in zip(x, np.atleast_1d(vals))]
    markers = {"P_star": g.P_star, "g_P_star": gP, "delta": delta, "delta_g_P_star": delta * gP,
               "F_floor": g.F_floor}
    return rows, markers


def norm_of(profile, m) -> float:
    return lp_norm(profile, float(m) + 1)
