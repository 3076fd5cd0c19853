import math

import numpy as np
import pytest

from thinfilm.params import ModelParams
from thinfilm.steady import (
    NoZeroContactAngle,
    SteadyStateError,
    critical_family,
    default_scan_points,
    linear_closed_form,
    nonexistence_scan,
    rescale_to_mass,
    shoot_canonical,
    solve_canonical,
    steady_audit,
)
from thinfilm.radial_field import mass

SOLVABLE = [(3, 1), (3, 2), (4, "1.2"), (5, "1.1")]


@pytest.fixture(scope="module")
def canonicals():
    return {(d, m): solve_canonical(ModelParams(d, m)) for d, m in SOLVABLE + [(3, "5/3")]}


def test_shooting_sign_conventions():
    p = ModelParams(3, 2)
    low, high = shoot_canonical(p, 1.01), shoot_canonical(p, 40.0)
    assert not low.crossed and low.miss < 0 and low.w_end > 0
    assert high.crossed and high.miss > 0 and high.slope < 0


def test_shooting_rejects_a_below_one():
    with pytest.raises(ValueError):
        shoot_canonical(ModelParams(3, 2), 0.9)


@pytest.mark.parametrize("d, m", SOLVABLE)
def test_exactly_one_sign_change(d, m):
    scan = nonexistence_scan(ModelParams(d, m), default_scan_points(1.001, 200.0, 40))
    assert scan.sign_changes == 1


@pytest.mark.parametrize("m", [5, 6])
def test_no_contact_angle_at_and_above_energy_critical(m):
    with pytest.raises(NoZeroContactAngle) as info:
        solve_canonical(ModelParams(3, m))
    assert info.value.scan.sign_changes == 0


def test_linear_case_matches_closed_form(canonicals):
    c = canonicals[(3, 1)]
    r = np.asarray(c.profile.grid.r)
    assert c.R == pytest.approx(4.493409457909064, abs=1e-8)
    assert np.max(np.abs(c.profile.values - linear_closed_form(r, c.R))) < 1e-8


@pytest.mark.parametrize("d, m", SOLVABLE)
def test_contact_conditions(canonicals, d, m):
    c = canonicals[(d, m)]
    assert abs(c.contact_slope) < 1e-8 and abs(c.contact_value) < 1e-8
    assert c.profile.support_radius() <= c.R + c.profile.grid.h


@pytest.mark.parametrize("M", [0.5, 1.0, 3.0])
def test_rescale_hits_the_mass(canonicals, M):
    s = rescale_to_mass(canonicals[(3, 2)], M)
    assert mass(s.profile) == pytest.approx(M, rel=1e-12)
    assert s.C_bar == -(s.A**2)


def test_rescale_refuses_mass_critical(canonicals):
    with pytest.raises(SteadyStateError):
        rescale_to_mass(canonicals[(3, "5/3")], 1.0)
    with pytest.raises(SteadyStateError):
        critical_family(canonicals[(3, 2)], 1.0)
    with pytest.raises(ValueError):
        rescale_to_mass(canonicals[(3, 2)], -1.0)


def test_critical_family_shares_mass(canonicals):
    c = canonicals[(3, "5/3")]
    masses = [critical_family(c, lam).M for lam in (0.5, 1.0, 2.0)]
    assert max(masses) - min(masses) < 1e-10 * masses[0]


@pytest.mark.parametrize("d, m", SOLVABLE)
def test_audits(canonicals, d, m):
    a = steady_audit(rescale_to_mass(canonicals[(d, m)], 1.0))
    assert a["steady_residual"] < 1e-4
    assert a["pohozaev_residual"] < 1e-4
    assert a["chemical_potential_spread"] < 1e-3
    assert a["dissipation_relative"] < 1e-4
    assert a["C_bar_mismatch"] < 1e-4
    assert a["mass_error"] < 1e-12


def test_moments_from_shooting_match_quadrature(canonicals):
    c = canonicals[(3, 2)]
    assert c.moments["mass"] == pytest.approx(c.mass, rel=1e-6)


def test_scan_report_dict_is_plain():
    rep = nonexistence_scan(ModelParams(3, 6), [1.5, 3.0]).as_dict()
    assert rep["sign_changes"] == 0 and len(rep["rows"]) == 2
    assert math.isfinite(rep["min_abs_miss"])
