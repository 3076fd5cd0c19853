import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from thinfilm.params import ModelParams, ParameterError
from thinfilm.radial_field import RadialGrid, RadialProfile, dilate_mass_invariant, free_energy, lp_norm, mass
from thinfilm.steady import rescale_to_mass, solve_canonical
from thinfilm.variational import (
    critical_mass,
    energy_floor,
    euler_lagrange_residual,
    floor_coefficient,
    g_aux,
    g_aux_derivative,
    gaussian,
    gns_constant,
    gns_report,
    j_functional,
    p_star,
    random_bumps,
    verify_gns,
)

P32 = ModelParams(3, 2)


@pytest.fixture(scope="module")
def can32():
    return solve_canonical(P32)


@pytest.fixture(scope="module")
def rep32(can32):
    return gns_report(can32, 1.0)


def test_j_is_invariant(can32):
    W = can32.profile
    base = j_functional(W, 2)
    scaled = RadialProfile(W.grid, 7.3 * W.values)
    assert j_functional(scaled, 2) == pytest.approx(base, rel=1e-12)
    for lam in (0.5, 2.0):
        assert j_functional(dilate_mass_invariant(W, lam), 2) == pytest.approx(base, rel=1e-12)


def test_gaussian_is_below_the_constant(can32, rep32):
    g = gaussian(RadialGrid(10.0, 2000, 3))
    check = verify_gns(g, rep32.C_star, 2)
    assert check.passed and check.ratio < 1


def test_j_errors():
    g = RadialGrid(1.0, 32, 3)
    with pytest.raises(ValueError):
        j_functional(RadialProfile(g, np.zeros(32)), 2)
    with pytest.raises(ValueError):
        j_functional(RadialProfile(g, np.ones(32)), 2)
    with pytest.raises(ParameterError):
        j_functional(RadialProfile(g, np.ones(32)), 5)


def test_p_star_needs_a_threshold():
    with pytest.raises(ParameterError):
        p_star(0.1, 1.0, ModelParams(3, "5/3"))
    with pytest.raises(ValueError):
        p_star(0.1, -1.0, P32)
    with pytest.raises(ParameterError):
        critical_mass(0.1, P32)


@pytest.mark.parametrize("M", [0.5, 1.0, 2.0])
def test_p_star_matches_rescaled_steady_state(can32, rep32, M):
    U = rescale_to_mass(can32, M).profile
    assert p_star(rep32.C_star, M, P32) == pytest.approx(lp_norm(U, 3), rel=1e-6)
    assert energy_floor(p_star(rep32.C_star, M, P32), P32) == pytest.approx(free_energy(U, 2), rel=1e-5)


def test_floor_coefficient_signs():
    assert floor_coefficient(P32) == pytest.approx(1 / 15)
    assert floor_coefficient(ModelParams(3, 1)) < 0
    assert floor_coefficient(ModelParams(3, "5/3")) == pytest.approx(0.0, abs=1e-15)


def test_g_is_stationary_at_p_star(rep32):
    P, C = rep32.P_star, rep32.C_star
    assert g_aux(0.0, C, 1.0, P32) == 0.0
    assert abs(g_aux_derivative(P, C, 1.0, P32)) < 1e-10 * P**2
    assert g_aux(P, C, 1.0, P32) == pytest.approx(rep32.F_floor, rel=1e-12)
    best = minimize_scalar(lambda x: -g_aux(x, C, 1.0, P32), bounds=(0, 3 * P), method="bounded",
                           options={"xatol": 1e-10 * P})
    assert best.x == pytest.approx(P, rel=1e-4)
    with pytest.raises(ValueError):
        g_aux(-1.0, C, 1.0, P32)


def test_g_has_a_minimum_below_mass_critical():
    can = solve_canonical(ModelParams(3, 1))
    rep = gns_report(can, 1.0)
    P = rep.P_star
    x = np.linspace(0.0, 3 * P, 3001)
    assert abs(x[np.argmin(g_aux(x, rep.C_star, 1.0, rep.params))] - P) < 3 * P / 3000


def test_trapping_bound_on_random_profiles(rep32):
    for u in random_bumps(RadialGrid(3.0, 400, 3), 20, seed=1):
        M = mass(u)
        bound = g_aux(lp_norm(u, 3), rep32.C_star, M, P32)
        assert bound <= free_energy(u, 2) * (1 + 1e-10) + 1e-12


def test_floor_changes_sign_across_mass_critical():
    signs = []
    for m in ["1", "5/3", "2"]:
        rep = gns_report(solve_canonical(ModelParams(3, m)), 1.0)
        signs.append(np.sign(round(rep.F_floor, 12)))
    assert signs == [-1, 0, 1]


def test_euler_lagrange(can32, rep32):
    U = rescale_to_mass(can32, 1.0).profile
    assert euler_lagrange_residual(U, rep32.C_star, 2) < 1e-3


def test_constant_is_stable_under_refinement():
    p = ModelParams(3, 1)
    coarse = gns_constant(solve_canonical(p, n=16001))
    fine = gns_constant(solve_canonical(p, n=32001))
    assert abs(coarse - fine) / fine < 1e-5


def test_critical_mass_report():
    rep = gns_report(solve_canonical(ModelParams(3, "5/3")), 1.0)
    assert rep.P_star is None and rep.F_floor == 0.0 and rep.M_c > 0
