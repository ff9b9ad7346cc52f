import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from impulse_stopper import closedform as cf
from impulse_stopper.model import (MAXIMIZE, MINIMIZE, GameSpec, Grid, GridFunction,
                                   LevyDiffusionSpec, PayoffSpec, SpecError, as_nonzero_sum, gbm,
                                   proportional_intervention, require_valid, reset_policy,
                                   validate_spec)


def _game(intervention, T=200.0, delta=0.1):
    pay = PayoffSpec(lambda x: np.zeros(len(x)), lambda x: x[:, 0] - 1.0, delta,
                     MAXIMIZE, MINIMIZE)
    return GameSpec(gbm(0.05, 0.3, T), intervention, (pay,), ((0.0, math.inf),))


def test_gbm_regularity_checks_pass():
    rep = validate_spec(_game(proportional_intervention(0.1, 0.05, reward=False)), n_samples=2000)
    for name in ("lipschitz", "linear_growth", "levy_intensity", "cost_monotone_time",
                 "cost_subadditive", "bequest_decay[0]", "senses"):
        assert rep[name].passed, rep[name].detail


@pytest.mark.parametrize("kappa,delta,T", [(0.1, 0.1, 200.0), (2.0, 0.05, 3.0), (0.5, 1.0, 1.0)])
def test_positive_fixed_cost_gives_discounted_floor(kappa, delta, T):
    rep = validate_spec(_game(proportional_intervention(kappa, 0.05, reward=False), T, delta),
                        n_samples=2000)
    assert rep["cost_floor"].passed
    assert rep["cost_floor"].value == pytest.approx(math.exp(-delta * T) * kappa, rel=1e-12)


def test_zero_fixed_cost_fails_floor():
    rep = validate_spec(_game(proportional_intervention(0.0, 0.05, reward=False)), n_samples=2000)
    assert not rep["cost_floor"].passed
    with pytest.raises(SpecError):
        require_valid(_game(proportional_intervention(0.0, 0.05, reward=False)), n_samples=500)


def test_lipschitz_bound_violation_is_reported():
    d = gbm(0.05, 0.3)
    tight = LevyDiffusionSpec(1, d.drift, d.volatility, horizon=1.0, lipschitz=(0.01, 0.3))
    pay = PayoffSpec(lambda x: 0 * x[:, 0], lambda x: x[:, 0], 0.1, MAXIMIZE, MINIMIZE)
    game = GameSpec(tight, proportional_intervention(0.1, 0.05, reward=False), (pay,),
                    ((0.0, 10.0),))
    assert validate_spec(game, n_samples=500)["lipschitz"].passed is False


def test_validation_is_deterministic_for_a_seed():
    game = _game(proportional_intervention(0.1, 0.05, reward=False))
    a = validate_spec(game, n_samples=1000, seed=3)
    b = validate_spec(game, n_samples=1000, seed=3)
    assert str(a) == str(b)


def test_negative_intensity_is_rejected():
    d = gbm(0.05, 0.3)
    with pytest.raises(SpecError):
        LevyDiffusionSpec(1, d.drift, d.volatility, lambda x, z: z * x, ((0.1, -1.0),))
    jumpy = LevyDiffusionSpec(1, d.drift, d.volatility, lambda x, z: z * x, ((0.1, 2.0),))
    pay = PayoffSpec(lambda x: 0 * x[:, 0], lambda x: x[:, 0], 0.1, MAXIMIZE, MINIMIZE)
    game = GameSpec(jumpy, proportional_intervention(0.1, 0.05, reward=False), (pay,),
                    ((0.0, 10.0),))
    assert validate_spec(game, n_samples=200)["levy_intensity"].passed


@given(st.floats(0.01, 5), st.floats(0.0, 1), st.floats(0, 50), st.floats(0, 50),
       st.floats(0.0, 10), st.floats(0.0, 10))
def test_proportional_cost_is_subadditive_and_decays(kappa, lam, z1, z2, s1, ds):
    iv = proportional_intervention(kappa, lam, reward=False)
    c = lambda s, z: math.exp(-0.1 * s) * float(iv.c(z))
    assert c(s1, z1 + z2) <= c(s1, z1) + c(s1, z2) + 1e-12
    assert c(s1, z1) >= c(s1 + ds, z1) - 1e-12


def test_zero_sum_requires_opposite_senses():
    with pytest.raises(SpecError):
        PayoffSpec(lambda x: 0, lambda x: 0, 0.1, "sideways")
    pay = PayoffSpec(lambda x: 0 * x[:, 0], lambda x: x[:, 0], 0.1, MAXIMIZE, MAXIMIZE)
    with pytest.raises(SpecError):
        GameSpec(gbm(0.05, 0.3), proportional_intervention(0.1, 0.05), (pay,), ((0.0, 1.0),))


def test_nonzero_sum_cast_negates_the_stopper_payoff(ex1_game):
    g = as_nonzero_sum(ex1_game)
    X = np.linspace(0.5, 3, 7).reshape(-1, 1)
    assert not g.zero_sum
    np.testing.assert_array_equal(g.payoffs[1].G(X), -ex1_game.payoff.G(X))
    z = np.array([0.0, 0.5, 2.0])
    np.testing.assert_array_equal(g.impulse_term(z, 1), -g.impulse_term(z, 0))
    np.testing.assert_array_equal(g.impulse_term(z, 0), ex1_game.impulse_term(z))


def test_grid_rejects_bad_axes():
    with pytest.raises(SpecError):
        Grid((1.0,), (0.0,), (10,))
    with pytest.raises(SpecError):
        Grid((0.0,), (1.0,), (2,))
    with pytest.raises(SpecError):
        GridFunction(Grid((0.0,), (1.0,), (5,)), [0, 1, np.nan, 3, 4])


def test_grid_ordering_and_boundary():
    g = Grid((0.0, 10.0), (1.0, 12.0), (3, 4))
    P = g.points
    assert P.shape == (12, 2)
    np.testing.assert_allclose(P[:4, 1], [10, 10 + 2 / 3, 10 + 4 / 3, 12])
    assert g.boundary_mask().sum() == 12 - 2
    assert g.h == (0.5, 2 / 3)


def test_reset_target_lands_in_continuation(ex1_sol, ex1_game):
    pol = reset_policy(ex1_game, ex1_sol.x_tilde, ex1_sol.x_low)
    X = np.linspace(ex1_sol.x_tilde, 10 * ex1_sol.x_tilde, 50).reshape(-1, 1)
    after = ex1_game.intervention.apply(X, pol.target(X))
    assert not pol.act_region(after).any()
    np.testing.assert_allclose(after[:, 0], ex1_sol.x_low, rtol=0, atol=1e-12)
