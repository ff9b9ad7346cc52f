import numpy as np
import pytest
from hypothesis import given, strategies as st

from impulse_stopper import closedform as cf
from impulse_stopper.model import (GameSpec, Grid, GridFunction, PayoffSpec, as_nonzero_sum)
from impulse_stopper.qvi import CONTINUE, IMPULSE, STOP
from impulse_stopper.verify import (BOUNDARY, RegionError, check_nonzero_sum_conditions,
                                    check_zero_sum_conditions, classify_regions, label_band,
                                    perturbation_factors, region_agreement)


@pytest.fixture(scope="module")
def cf_phi(ex1_sol):
    g = Grid((0.5 * ex1_sol.x_hat,), (2 * ex1_sol.x_tilde,), (800,))
    return GridFunction(g, cf.example1_psi(ex1_sol, g.points[:, 0]), "extrapolate-linear")


def _analytic(sol, x):
    return np.where(x <= sol.x_hat, STOP, np.where(x >= sol.x_tilde, IMPULSE, CONTINUE))


def test_closed_form_regions(cf_phi, ex1_sol, ex1_game):
    rm = classify_regions(cf_phi, ex1_game)
    x = cf_phi.grid.points[:, 0]
    want = _analytic(ex1_sol, x)
    off = (rm.labels != want) & ~label_band(cf_phi.grid, want, 2) & ~cf_phi.grid.boundary_mask()
    assert not off.any()
    assert sum(rm.counts().values()) == cf_phi.grid.size


def test_bequest_on_a_stop_everywhere_model(ex1_game):
    g = Grid((0.1,), (2.0,), (200,))
    phi = GridFunction(g, g.points[:, 0] - 1.0, "extrapolate-linear")
    rm = classify_regions(phi, ex1_game)
    assert np.all(rm.labels == STOP)
    cert = check_zero_sum_conditions(phi, ex1_game)
    assert cert.passed, cert.to_text()


def test_noise_is_not_a_candidate(ex1_game):
    g = Grid((0.1,), (10.0,), (200,))
    noise = np.random.default_rng(0).normal(size=g.size)
    with pytest.raises(RegionError):
        classify_regions(GridFunction(g, noise), ex1_game)


@given(st.floats(1e-9, 1e-4), st.floats(1.0, 100.0))
def test_classified_nodes_grow_with_tolerance(eps, factor):
    sol = cf.example1_solve(cf.Example1Params(kappa1=0.48448817246435727))
    game = cf.example1_game(sol.params)
    g = Grid((0.5,), (10.0,), (150,))
    rng = np.random.default_rng(int(eps * 1e12) % 2 ** 32)
    v = cf.example1_psi(sol, g.points[:, 0]) * (1 + 1e-5 * rng.normal(size=g.size))
    phi = GridFunction(g, v, "extrapolate-linear")
    kw = dict(max_unclassified=1.0)
    a = classify_regions(phi, game, eps, eps_impulse=eps, eps_pde=eps, **kw).labels
    b = classify_regions(phi, game, eps * factor, eps_impulse=eps * factor, eps_pde=eps * factor,
                         **kw).labels
    assert np.all((a == BOUNDARY) | (b != BOUNDARY))
    assert np.all((a != STOP) | (b == STOP))


@given(st.floats(1e-3, 1e3))
def test_labels_invariant_under_payoff_scaling(scale):
    p = cf.Example1Params(kappa1=0.48448817246435727)
    sol = cf.example1_solve(p)
    base = cf.example1_game(p)
    pay = base.payoff
    scaled = PayoffSpec(lambda x: np.zeros(len(x)), lambda x: scale * pay.G(x), pay.discount,
                        pay.controller_sense, pay.stopper_sense,
                        impulse_term=lambda z: scale * base.impulse_term(z))
    game = GameSpec(base.diffusion, base.intervention, (scaled,), base.solvency)
    g = Grid((0.5,), (10.0,), (200,))
    v = cf.example1_psi(sol, g.points[:, 0])
    a = classify_regions(GridFunction(g, v, "extrapolate-linear"), base).labels
    b = classify_regions(GridFunction(g, scale * v, "extrapolate-linear"), game).labels
    assert np.array_equal(a, b)


def test_certificate_passes_then_fails_on_a_bump(ex1_sol, ex1_game):
    # the default tolerance is 10 h^2 |phi|; 2000 nodes put it below delta * 0.1 kappa1
    g = Grid((0.5 * ex1_sol.x_hat,), (2 * ex1_sol.x_tilde,), (2000,))
    cf_phi = GridFunction(g, cf.example1_psi(ex1_sol, g.points[:, 0]), "extrapolate-linear")
    pol = cf.example1_policies(ex1_sol, ex1_game)
    assert check_zero_sum_conditions(cf_phi, ex1_game, pol).passed
    x = cf_phi.grid.points[:, 0]
    v = cf_phi.values.copy()
    v[(x > ex1_sol.x_hat) & (x < ex1_sol.x_tilde)] += 0.1 * ex1_sol.params.kappa1
    bumped = check_zero_sum_conditions(cf_phi.with_values(v), ex1_game, pol)
    assert "pde_equality" in bumped.failed()


def test_certificate_without_policies_uses_classification(cf_phi, ex1_game):
    cert = check_zero_sum_conditions(cf_phi, ex1_game)
    assert cert.passed
    assert "classify_regions" in cert.to_text()


def test_nonzero_sum_cast_agrees(cf_phi, ex1_sol, ex1_game):
    pol = cf.example1_policies(ex1_sol, ex1_game)
    zs = check_zero_sum_conditions(cf_phi, ex1_game, pol)
    nz = check_nonzero_sum_conditions(cf_phi, cf_phi.with_values(-cf_phi.values), ex1_game, pol)
    assert nz.passed == zs.passed
    for c in zs.conditions:
        if c.id in nz.verdicts():
            assert nz[c.id].passed == c.passed, c.id


def test_stopper_value_below_its_obstacle_fails(cf_phi, ex1_sol, ex1_game):
    # in the cast the stopper maximises -J, so its obstacle is phi2 >= -G
    pol = cf.example1_policies(ex1_sol, ex1_game)
    G2 = as_nonzero_sum(ex1_game).payoffs[1].G(cf_phi.grid.points)
    low = cf_phi.with_values(G2 - 1.0)
    cert = check_nonzero_sum_conditions(cf_phi, low, ex1_game, pol)
    assert "obstacle_stop" in cert.failed()


def test_perturbation_factors():
    f = perturbation_factors(16)
    d = f - 1
    assert len(f) == 16
    assert np.all(np.abs(d) >= 0.05 - 1e-12) and np.all(np.abs(d) <= 0.15 + 1e-12)
    np.testing.assert_allclose(np.sort(d), -np.sort(d)[::-1], atol=1e-15)


def test_region_agreement_ignores_the_band():
    g = Grid((0.0,), (1.0,), (100,))
    a = np.where(g.points[:, 0] < 0.5, STOP, CONTINUE)
    b = np.where(g.points[:, 0] < 0.51, STOP, CONTINUE)
    assert region_agreement(a, b, g)["mismatches"] == 0
    c = np.where(g.points[:, 0] < 0.8, STOP, CONTINUE)
    assert region_agreement(a, c, g)["mismatches"] > 0
