import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thinfilm.radial_field import (
    RadialGrid,
    RadialProfile,
    diagnostics,
    dilate_equation_invariant,
    dilate_mass_invariant,
    free_energy,
    grad_l2_squared,
    integrate,
    laplacian_values,
    load_profile,
    lp_norm,
    lp_power,
    mass,
    remap_conservative,
    save_profile,
    second_moment,
    sphere_area,
)


def bump(grid, width=1.0, height=1.0):
    return RadialProfile.from_function(grid, lambda r: height * np.clip(1 - (r / width) ** 2, 0, None) ** 3)


def test_shell_volumes_fill_the_ball():
    g = RadialGrid(2.5, 101, 4)
    assert g.volumes.sum() == pytest.approx(sphere_area(4) * 2.5**4 / 4, rel=1e-13)


def test_grid_validation():
    with pytest.raises(ValueError):
        RadialGrid(1.0, 8, 3)
    with pytest.raises(ValueError):
        RadialGrid(-1.0, 64, 3)


def test_profile_is_immutable_and_nonnegative():
    g = RadialGrid(1.0, 32, 3)
    u = RadialProfile(g, np.ones(32))
    with pytest.raises(ValueError):
        u.values[0] = 2.0
    with pytest.raises(ValueError):
        RadialProfile(g, -np.ones(32))
    with pytest.raises(ValueError):
        RadialProfile(g, np.full(32, np.nan))
    with pytest.raises(ValueError):
        RadialProfile(g, np.ones(31))


def test_lp_norm_requires_p_at_least_one():
    u = bump(RadialGrid(2.0, 64, 3))
    with pytest.raises(ValueError):
        lp_norm(u, 0.5)


def test_summation_by_parts_is_exact():
    g = RadialGrid(2.0, 200, 3)
    u = bump(g, 1.7)
    lap = laplacian_values(u.values, g, closure="noflux")
    assert integrate(u, -u.values * lap) == pytest.approx(grad_l2_squared(u), rel=1e-12)


def test_noflux_laplacian_conserves_mass():
    g = RadialGrid(2.0, 200, 5)
    u = bump(g, 2.5)
    assert abs(integrate(u, laplacian_values(u.values, g, closure="noflux"))) < 1e-10


def test_unknown_closure():
    g = RadialGrid(2.0, 64, 3)
    with pytest.raises(ValueError):
        laplacian_values(np.zeros(64), g, closure="periodic")


@pytest.mark.parametrize("lam", [0.5, 0.8, 1.25, 3.0])
def test_mass_invariant_dilation_laws(lam):
    d, m = 3, 2.0
    u = bump(RadialGrid(2.0, 400, d), 1.5, 2.0)
    v = dilate_mass_invariant(u, lam)
    assert mass(v) == pytest.approx(mass(u), rel=1e-13)
    assert lp_power(v, m + 1) == pytest.approx(lam ** (d * m) * lp_power(u, m + 1), rel=1e-12)
    assert grad_l2_squared(v) == pytest.approx(lam ** (d + 2) * grad_l2_squared(u), rel=1e-12)
    assert second_moment(v) == pytest.approx(second_moment(u) / lam**2, rel=1e-12)


def test_equation_invariant_dilation_keeps_critical_norm():
    d, m = 3, 2.0
    u = bump(RadialGrid(2.0, 400, d))
    p = d * (m - 1) / 2
    for lam in [0.3, 2.0, 7.0]:
        assert lp_norm(dilate_equation_invariant(u, lam, m), p) == pytest.approx(lp_norm(u, p), rel=1e-12)
    with pytest.raises(ValueError):
        dilate_equation_invariant(u, 2.0, 1.0)
    with pytest.raises(ValueError):
        dilate_mass_invariant(u, 0.0)


def test_free_energy_and_diagnostics_agree():
    u = bump(RadialGrid(2.0, 300, 3), 1.2, 3.0)
    diag = diagnostics(u, 2)
    assert diag.free_energy == pytest.approx(free_energy(u, 2))
    assert diag.grad_l2 == pytest.approx(math.sqrt(grad_l2_squared(u)))
    assert diag.mass == pytest.approx(mass(u))


def test_save_load_round_trip(tmp_path):
    u = bump(RadialGrid(2.0, 64, 4), 1.5, 2.0)
    path = save_profile(u, tmp_path / "u.csv", m="5/3", extra={"note": "x"})
    v, header = load_profile(path)
    np.testing.assert_array_equal(v.values, u.values)
    assert header["schema_version"] == 1 and header["m"] == "5/3" and header["d"] == 4


def test_remap_is_mass_exact():
    g = RadialGrid(2.0, 128, 3)
    u = bump(g, 1.9, 5.0)
    for factor in [2.0, 3.7]:
        v = remap_conservative(u, g.scaled(factor))
        assert mass(v) == pytest.approx(mass(u), rel=1e-13)
    with pytest.raises(ValueError):
        remap_conservative(u, RadialGrid(4.0, 128, 4))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=20, max_size=60), st.floats(0.2, 5.0))
def test_mass_dilation_on_arbitrary_profiles(vals, lam):
    vals = np.array(vals + [0.0, 0.0])
    if vals.max() == 0:
        return
    u = RadialProfile(RadialGrid(1.0, len(vals), 3), vals)
    assert mass(dilate_mass_invariant(u, lam)) == pytest.approx(mass(u), rel=1e-12)
