import math

import numpy as np
import pytest

from thinfilm.dynamics import (
    EvolutionConfig,
    detect_blowup,
    discrete_steady_state,
    evolve,
    hypothesis_check,
    intrinsic_time,
    identity_rhs,
    sample_of,
    second_moment_audit,
    step,
    write_trajectory,
)
from thinfilm.params import ModelParams
from thinfilm.radial_field import RadialGrid, RadialProfile, dilate_mass_invariant, mass
from thinfilm.steady import solve_canonical, steady_audit
from thinfilm.variational import gns_report

P32 = ModelParams(3, 2)


@pytest.fixture(scope="module")
def canonical():
    return solve_canonical(P32)


@pytest.fixture(scope="module")
def ustar(canonical):
    return discrete_steady_state(P32, 1.0, n=512, canonical=canonical)


@pytest.fixture(scope="module")
def steady_run(ustar):
    return evolve(ustar.profile, 2.0, EvolutionConfig(T_max=1.0))


def test_config_validation():
    with pytest.raises(ValueError):
        EvolutionConfig(dt_init=1e-3, dt_min=1e-2)
    with pytest.raises(ValueError):
        EvolutionConfig(blowup_norm_factor=1.0)
    with pytest.raises(ValueError):
        EvolutionConfig(regrid_policy="shrink")
    with pytest.raises(ValueError):
        EvolutionConfig(mobility_floor=-1.0)


def test_zero_profile_is_stationary():
    u = RadialProfile(RadialGrid(1.0, 64, 3), np.zeros(64))
    assert step(u, 2.0, 1e-3) is u
    with pytest.raises(ValueError):
        step(u, 2.0, 0.0)


def test_one_step_conserves_mass(ustar):
    u0 = dilate_mass_invariant(ustar.profile, 0.9)
    tau = 1e-2 * intrinsic_time(u0, 2.0)
    u1 = step(u0, 2.0, tau)
    assert abs(mass(u1) - mass(u0)) < 1e-12 * mass(u0)
    assert np.all(u1.values >= 0)
    assert np.max(np.abs(u1.values - u0.values)) > 0


def test_discrete_steady_state_is_a_fixed_point(ustar):
    a = steady_audit(ustar)
    assert a["mass_error"] < 1e-12 and a["chemical_potential_spread"] < 1e-9
    u1 = step(ustar.profile, 2.0, 1e-4)
    assert np.max(np.abs(u1.values - ustar.profile.values)) <= 1e-10 * ustar.profile.values.max()


def test_steady_state_evolves_globally(steady_run, ustar):
    traj, outcome = steady_run
    assert outcome.tag == "Global"
    drift = max(abs(s.mass - traj[0].mass) for s in traj) / traj[0].mass
    assert drift < 1e-4
    u0 = sample_of(ustar.profile, 2.0, 0.0, 0.0)
    assert not any(detect_blowup(s, u0, EvolutionConfig()) for s in traj)
    inf_cfg = EvolutionConfig(blowup_norm_factor=math.inf)
    assert not any(detect_blowup(s, u0, inf_cfg) for s in traj)


def test_steady_state_second_moment_audit(steady_run):
    assert second_moment_audit(steady_run[0], 3, 2.0) < 1e-3


def test_audit_needs_three_samples(steady_run):
    with pytest.raises(ValueError):
        second_moment_audit(steady_run[0][:2], 3, 2.0)


def test_hypothesis_check_sides(ustar, canonical):
    rep = gns_report(canonical, 1.0)
    tie = hypothesis_check(ustar.profile, ustar, rep)
    assert tie.refused and not tie.in_scope and tie.label == "outside theorem scope"
    above = hypothesis_check(dilate_mass_invariant(ustar.profile, 1.25), ustar, rep)
    below = hypothesis_check(dilate_mass_invariant(ustar.profile, 0.8), ustar, rep)
    assert above.in_scope and above.norm_side == "Above" and above.label == "BlowUp"
    assert below.in_scope and below.norm_side == "Below" and below.label == "Global"
    assert abs(above.P_star - rep.P_star) / rep.P_star < 1e-3


def test_initial_data_must_fit_the_grid():
    g = RadialGrid(1.0, 64, 3)
    with pytest.raises(ValueError):
        evolve(RadialProfile(g, np.ones(64)), 2.0)
    with pytest.raises(ValueError):
        evolve(RadialProfile(g, np.zeros(64)), 2.0)


def test_mass_critical_family_has_flat_second_moment():
    p = ModelParams(3, "5/3")
    u = discrete_steady_state(p, n=512)
    traj, outcome = evolve(u.profile, p.mf, EvolutionConfig(T_max=1e-3))
    assert outcome.tag == "Global"
    # F and k both vanish here, so the identity is checked in absolute terms
    m2 = [s.m2 for s in traj]
    assert (max(m2) - min(m2)) < 1e-10 * m2[0]
    rhs, _ = identity_rhs(traj[0], 3, p.mf)
    energy = traj[0].grad_l2**2
    assert abs(rhs) < 1e-3 * energy


def test_trajectory_csv(tmp_path, steady_run):
    path = write_trajectory(steady_run[0][:5], tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("t,mass,") and len(lines) == 6
