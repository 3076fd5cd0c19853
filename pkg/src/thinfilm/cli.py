"""Command line entry point: ``thinfilm <subcommand> ...``.

Exit codes: 0 success, 2 refusal (the run would fall outside the hypotheses
it is meant to test), 1 any other error including bad usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .dynamics import EvolutionConfig, evolve, hypothesis_check, outcome_record, write_trajectory
from .params import ModelParams, ParameterError, classify_regime, parse_exponent, scaling_exponents
from .radial_field import SCHEMA_VERSION, dilate_mass_invariant, load_profile, save_profile
from .steady import NoZeroContactAngle
from .variational import random_bumps, verify_gns


def _emit(obj, out: Path | None, name: str):
    text = ex.dumps({"schema_version": SCHEMA_VERSION, **obj})
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
    sys.stdout.write(text)


def _params(args) -> ModelParams:
    return ModelParams(args.d, parse_exponent(args.m))


def _out(args):
    return None if args.out is None else Path(args.out)


def cmd_regime(args):
    params = _params(args)
    rec = classify_regime(params).as_dict()
    try:
        rec["scaling"] = scaling_exponents(params).__dict__
    except ParameterError as exc:
        rec["scaling"] = None
        rec["scaling_note"] = str(exc)
    _emit(rec, _out(args), "regime.json")
    return 0


def cmd_steady(args):
    params = _params(args)
    try:
        prep = ex.prepare(params, args.M, n=args.n)
    except NoZeroContactAngle as exc:
        rec = {"error": "NoZeroContactAngle", "message": str(exc), "scan": exc.scan.as_dict()}
        _emit(rec, _out(args), "steady.json")
        return 2
    rec = ex.steady_summary(prep)
    rec["gates"] = prep.gates
    out = _out(args)
    if out is not None:
        save_profile(prep.steady.profile, out / "steady_profile.csv", m=params.m)
        save_profile(prep.discrete.profile, out / "steady_discrete.csv", m=params.m)
    _emit(rec, out, "steady.json")
    return 0


def cmd_gns(args):
    params = _params(args)
    prep = ex.prepare(params, args.M, n=args.n)
    report = prep.gns
    from .variational import gns_checks

    checks = gns_checks(prep.canonical, report)
    bumps = random_bumps(prep.canonical.profile.grid, args.samples, seed=args.seed)
    ratios = [verify_gns(b, report.C_star, params.mf).ratio for b in bumps]
    checks["random_bumps"] = {"count": len(ratios), "seed": args.seed, "max_ratio": max(ratios) if ratios else None}
    rec = report.as_dict()
    rec["checks"] = checks
    _emit(rec, _out(args), "gns.json")
    return 0


def _evolution(args) -> EvolutionConfig:
    kw = {"T_max": args.T}
    if args.dt_init is not None:
        kw["dt_init"] = args.dt_init
    if args.kappa is not None:
        kw["blowup_norm_factor"] = args.kappa
    return EvolutionConfig(**kw)


def cmd_evolve(args):
    params = _params(args)
    prep = ex.prepare(params, args.M, n=args.n)
    if args.profile:
        u0, _ = load_profile(args.profile)
    else:
        u0 = dilate_mass_invariant(prep.discrete.profile, args.lam)
    check = hypothesis_check(u0, prep.discrete, prep.gns)
    traj, outcome = evolve(u0, params.mf, _evolution(args))
    out = _out(args)
    if out is not None:
        write_trajectory(traj, out / "trajectory.csv")
    rec = outcome_record(outcome, check)
    if not check.in_scope:
        rec["note"] = ex.AT_THRESHOLD if check.refused else f"{ex.OUTSIDE_SCOPE}; {ex.EXPLORATORY}"
    _emit(rec, out, "outcome.json")
    return 0


def _threshold_config(args) -> ex.ExperimentConfig:
    if args.config:
        data = json.loads(Path(args.config).read_text())
    else:
        data = {"d": args.d, "m": args.m, "M": args.M, "n": args.n}
        if args.lam:
            data["lambdas"] = args.lam
        data["evolution"] = {"T_max": args.T}
    if args.out is not None:
        data["out_dir"] = args.out
    if args.workers is not None:
        data["workers"] = args.workers
    data["seed"] = args.seed
    return ex.ExperimentConfig.from_dict(data)


def cmd_threshold(args):
    cfg = _threshold_config(args)
    try:
        rows = ex.threshold_experiment(cfg)
    except ex.RefusalError as exc:
        _emit({"refused": str(exc)}, _out(args), "threshold_refusal.json")
        return 2
    bad = ex.dichotomy_failures(rows)
    rec = {"rows": [r.as_dict() for r in rows], "dichotomy_failures": [r.lam for r in bad]}
    _emit(rec, None if cfg.out_dir is None else Path(cfg.out_dir), "threshold.json")
    return 1 if bad else 0


def cmd_sweep(args):
    rows = ex.regime_sweep(args.d, args.m, args.M, workers=args.workers or 1)
    out = _out(args)
    if out is not None:
        ex.write_csv(rows, out / "sweep.csv", ex.SWEEP_COLUMNS, meta={"M": args.M})
    _emit({"rows": rows}, None, "")
    return 0


def cmd_landscape(args):
    params = _params(args)
    prep = ex.prepare(params, args.M, n=args.n)
    if prep.gns.P_star is None:
        raise ex.RefusalError("no threshold norm at m = 1 + 2/d")
    x = np.linspace(0.0, args.x_max * prep.gns.P_star, args.points)
    rows, markers = ex.energy_landscape(prep, x, delta=args.delta)
    out = _out(args)
    if out is not None:
        ex.write_csv(rows, out / "landscape.csv", ["x", "g"], meta=markers)
    _emit({"markers": markers, "points": len(rows)}, None, "")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thinfilm", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def common(sp, mass=True):
        sp.add_argument("-d", type=int, required=True)
        sp.add_argument("-m", required=True, help="exponent, e.g. 2 or 5/3")
        if mass:
            sp.add_argument("-M", type=float, default=1.0, help="mass (default 1)")
            sp.add_argument("--n", type=int, default=512, help="dynamics grid nodes")
        sp.add_argument("-o", "--out", help="output directory")

    common(sub.add_parser("regime", help="classify (d, m)"), mass=False)
    common(sub.add_parser("steady", help="compact steady state and its audits"))
    g = sub.add_parser("gns", help="GNS constant and threshold quantities")
    common(g)
    g.add_argument("--samples", type=int, default=50, help="random bump profiles to test")

    e = sub.add_parser("evolve", help="one evolution from a dilated steady state")
    common(e)
    e.add_argument("--lam", type=float, default=0.8)
    e.add_argument("--profile", help="initial profile CSV (with .json sidecar)")
    e.add_argument("--T", type=float, default=1.0)
    e.add_argument("--dt-init", type=float)
    e.add_argument("--kappa", type=float, help="blow-up norm factor")

    t = sub.add_parser("threshold", help="dichotomy table over dilations")
    t.add_argument("-c", "--config", help="JSON experiment config")
    t.add_argument("-d", type=int, default=3)
    t.add_argument("-m", default="2")
    t.add_argument("-M", type=float, default=1.0)
    t.add_argument("--n", type=int, default=512)
    t.add_argument("--lam", type=float, nargs="*")
    t.add_argument("--T", type=float, default=1.0)
    t.add_argument("--workers", type=int)
    t.add_argument("-o", "--out")

    s = sub.add_parser("sweep", help="regime table over (d, m)")
    s.add_argument("-d", type=int, nargs="+", default=[3])
    s.add_argument("-m", nargs="+", default=["1", "5/3", "2", "5", "6"])
    s.add_argument("-M", type=float, default=1.0)
    s.add_argument("--workers", type=int)
    s.add_argument("-o", "--out")

    la = sub.add_parser("landscape", help="sample the auxiliary function g")
    common(la)
    la.add_argument("--x-max", type=float, default=2.0, help="range in units of P*")
    la.add_argument("--points", type=int, default=201)
    la.add_argument("--delta", type=float, default=0.5)
    return p


COMMANDS = {
    "regime": cmd_regime,
    "steady": cmd_steady,
    "gns": cmd_gns,
    "evolve": cmd_evolve,
    "threshold": cmd_threshold,
    "sweep": cmd_sweep,
    "landscape": cmd_landscape,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return COMMANDS[args.command](args)
    except ex.RefusalError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 2
    except (ParameterError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
