import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from impulse_stopper import closedform as cf
from impulse_stopper.model import Grid, GridFunction
from impulse_stopper.operators import apply_generator

params_1 = st.builds(cf.Example1Params, alpha=st.floats(0.01, 0.2), beta=st.floats(0.1, 0.6),
                     delta=st.floats(0.01, 0.3))


def test_exponents_reference_values():
    cp, cm = cf.example1_exponents(0.05, 0.3, 0.1)
    # quoted to four places; the lower root is -1.54730 (c+ + c- = 1 - 2 alpha / beta^2)
    assert cp == pytest.approx(1.4361, abs=2e-4)
    assert cm == pytest.approx(-1.5472, abs=2e-4)
    for c in (cp, cm):
        assert abs(-0.1 + 0.05 * c + 0.5 * 0.09 * c * (c - 1)) < 1e-12


@given(params_1)
def test_exponent_vieta_identities(p):
    cp, cm = cf.example1_exponents(p.alpha, p.beta, p.delta)
    assert cp > 0 > cm
    assert abs(cp * cm + 2 * p.delta / p.beta ** 2) < 1e-10
    assert abs(cp + cm - 1 + 2 * p.alpha / p.beta ** 2) < 1e-10


def test_smooth_fit_residuals_for_default_cost():
    sol = cf.example1_solve(cf.Example1Params())
    res = cf.example1_residuals(sol)
    for k in ("value_match_x_hat", "slope_match_x_hat", "continuity_x_tilde", "foc_x_low"):
        assert abs(res[k]) < 1e-9, k
    assert 0 < sol.x_hat and sol.x_low < sol.x_tilde
    assert sol.x_tilde > sol.x_low + sol.params.kappa1


def test_smooth_fit_cost_puts_x_tilde_on_the_larger_root(ex1_sol):
    assert ex1_sol.tangent
    assert ex1_sol.x_tilde == pytest.approx(ex1_sol.x_high, rel=1e-8)
    assert abs(cf.example1_residuals(ex1_sol)["foc_x_high"]) < 1e-9
    assert ex1_sol.params.kappa1 == pytest.approx(0.48448817246435727, rel=1e-9)


def test_branches_meet_at_free_boundaries(ex1_sol):
    eps = 1e-9
    for x in (ex1_sol.x_hat, ex1_sol.x_tilde):
        lo, hi = cf.example1_psi(ex1_sol, [x * (1 - eps), x * (1 + eps)])
        assert abs(lo - hi) < 1e-8
    assert float(cf.example1_dpsi(ex1_sol, ex1_sol.x_hat * (1 + 1e-12))) == pytest.approx(1, abs=1e-8)


def test_value_is_discounted_stationary_value(ex1_sol):
    x = np.array([0.5, 2.0, 9.0])
    np.testing.assert_allclose(cf.example1_value(ex1_sol, 3.0, x),
                               math.exp(-0.3) * cf.example1_psi(ex1_sol, x), rtol=1e-15)


def test_closed_form_solves_the_pde_between_boundaries(ex1_sol, ex1_game):
    g = Grid((ex1_sol.x_hat,), (ex1_sol.x_tilde,), (801,))
    x = g.points[:, 0]
    phi = GridFunction(g, cf.example1_psi(ex1_sol, x))
    Lphi = apply_generator(ex1_game, phi, upwind=False).values
    inner = ~g.boundary_mask(2)
    resid = np.abs(Lphi - 0.1 * phi.values)[inner]
    assert resid.max() < 50 * g.h[0] ** 2


def test_impulse_lands_on_lower_root(ex1_sol):
    p = ex1_sol.params
    xi = cf.example1_impulse(ex1_sol, ex1_sol.x_tilde)
    assert ex1_sol.x_tilde - p.kappa1 - (1 + p.lam) * xi == pytest.approx(ex1_sol.x_low, abs=1e-14)
    with pytest.raises(ValueError):
        cf.example1_impulse(ex1_sol, ex1_sol.x_tilde * 0.99)
    assert cf.example1_impulse(ex1_sol, 2 * ex1_sol.x_tilde) > 0


@pytest.mark.parametrize("scale", [1.0, 1.7, 4.0])
def test_impulse_maximises_post_impulse_value_plus_reward(ex1_sol, scale):
    p = ex1_sol.params
    x = scale * ex1_sol.x_tilde
    zmax = (x - p.kappa1 - 1e-6) / (1 + p.lam)
    z = np.linspace(0, zmax, 10_000)
    obj = cf.example1_psi(ex1_sol, x - p.kappa1 - (1 + p.lam) * z) + z
    best = z[np.argmax(obj)]
    assert abs(best - cf.example1_impulse(ex1_sol, x)) <= 2 * (z[1] - z[0])


def test_root_precision_is_stable():
    a = cf.example1_solve(cf.Example1Params(), tangent_tol=1e-10)
    b = cf.example1_solve(cf.Example1Params(), tangent_tol=1e-12)
    for k, v in a.constants().items():
        assert b.constants()[k] == pytest.approx(v, rel=1e-8)


# investor model

def test_exponent_without_jumps_is_exact(ex2_sol):
    p = ex2_sol.params
    assert ex2_sol.k == p.delta / (p.e * p.r - p.sigma_f ** 2)
    assert ex2_sol.k == pytest.approx(0.5, rel=1e-12)
    assert ex2_sol.theta0 == p.sigma_f


@given(st.floats(0.01, 0.3), st.floats(0.05, 0.5), st.floats(2.5, 6.0))
def test_characteristic_at_zero_is_minus_delta(delta, r, e):
    p = cf.Example2Params(e=e, r=r, delta=delta, jump_marks=(0.2,), jump_rates=(0.3,))
    assert cf.example2_p(p, (1 / 6,), 0.0) == pytest.approx(-delta, abs=1e-14)


def test_single_atom_kernel():
    th, _ = cf.example2_theta1((0.2,), (0.5,), 0.4)
    assert th[0] == 1 - 1 / 1.2
    assert (1 - th[0]) * 1.2 == pytest.approx(1, abs=1e-15)
    th, _ = cf.example2_theta1((0.0,), (0.5,), 0.4)
    assert th[0] == 0.0


def test_two_atom_kernel_residual():
    marks, rates = (0.3, -0.2), (0.4, 0.7)
    p = cf.Example2Params(e=3.0, jump_marks=marks, jump_rates=rates)
    sol = cf.example2_solve(p)
    xi = (1 - np.array(sol.theta1)) * (1 + np.array(marks))
    assert abs(np.sum(np.array(rates) * (xi ** sol.k - 1))) < 1e-12
    assert abs(cf.example2_p(p, sol.theta1, sol.k)) < 1e-10


def test_jump_fixed_point(ex2_jump_sol):
    p = ex2_jump_sol.params
    assert 0 < ex2_jump_sol.k < 1
    assert abs(cf.example2_p(p, ex2_jump_sol.theta1, ex2_jump_sol.k)) < 1e-10
    assert abs(cf.example2_H(p, ex2_jump_sol.theta1, ex2_jump_sol.k)) < 1e-10


def test_exit_boundary_value_and_slope(ex2_sol):
    s, p = ex2_sol, ex2_sol.params
    w = s.omega_star
    assert s.a * w ** s.k == pytest.approx(p.g1 * w + p.lambda_T, rel=1e-12)
    assert s.a * s.k * w ** (s.k - 1) == pytest.approx(p.g1, rel=1e-12)


def test_printed_scale_differs_from_the_matching_scale(ex2_sol):
    p = ex2_sol.params
    printed = cf.example2_scale_printed(p.g1, p.lambda_T, ex2_sol.k)
    w = ex2_sol.omega_star
    assert abs(printed * w ** ex2_sol.k - (p.g1 * w + p.lambda_T)) > 1e-3


def test_wealth_system(ex2_sol):
    s = ex2_sol
    assert np.max(np.abs(cf.example2_wealth_residuals(s))) < 1e-9
    assert s.d1 != s.d2 and np.isreal(s.d1) and np.isreal(s.d2)
    assert s.y_hat < s.y_tilde
    left, right = cf.example2_wealth(s, [s.y_tilde * (1 - 1e-13), s.y_tilde])
    assert abs(left - right) < 1e-9


def test_wealth_part_at_zero_is_not_zero(ex2_sol):
    # c (y^d1 - y^d2) with one negative exponent diverges as y -> 0
    d_min = min(ex2_sol.d1, ex2_sol.d2)
    small = abs(float(cf.example2_wealth(ex2_sol, 1e-8)))
    assert (d_min < 0 and small > 1.0) or (d_min >= 0 and small < 1e-3)


def test_value_in_exit_region_is_bequest(ex2_sol):
    s, p = ex2_sol, ex2_sol.params
    y1, y2 = 0.5 * s.omega_star, 1.0
    assert cf.example2_value(s, 0.0, y1, y2, 1.0) == pytest.approx(p.g1 * y1 + p.lambda_T + p.g2 * y2)


def test_region_predicate_acts_when_indifferent(ex2_sol):
    s = ex2_sol
    assert cf.example2_region(s, 1.0, s.omega_star) == "exit"
    assert cf.example2_region(s, s.y_tilde, 2 * s.omega_star) == "inject"
    assert cf.example2_region(s, 0.5 * (s.y_hat + s.y_tilde), 2 * s.omega_star) == "wait"


def test_density_step_degenerate_cases():
    q = cf.q_process_step(2.0, 0.1, 0.0, 0.3)
    assert q == pytest.approx(2.0 * math.exp(-0.5 * 0.09 * 0.1))
    assert cf.q_process_step(2.0, 0.1, 0.7, 0.0) == 2.0


def test_constants_round_trip(tmp_path, ex1_sol):
    path = tmp_path / "c.txt"
    cf.write_constants(path, ex1_sol.constants())
    assert cf.read_constants(path) == ex1_sol.constants()
