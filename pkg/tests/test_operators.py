import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from impulse_stopper import closedform as cf
from impulse_stopper.model import (MAXIMIZE, MINIMIZE, GameSpec, Grid, GridFunction,
                                   InterventionSpec, LevyDiffusionSpec, PayoffSpec, gbm)
from impulse_stopper.operators import (apply_generator, generator_stencil, interp,
                                       intervention_inequality_check, intervention_operator,
                                       jump_term)

GRID = Grid((0.5,), (4.0,), (201,))


def _gbm_game(alpha=0.05, beta=0.3, levy=(), sense=MAXIMIZE, iv=None):
    d = gbm(alpha, beta)
    if levy:
        d = LevyDiffusionSpec(1, d.drift, d.volatility, lambda x, z: z * x, levy)
    iv = iv or cf.example1_game(cf.Example1Params()).intervention
    other = MINIMIZE if sense == MAXIMIZE else MAXIMIZE
    pay = PayoffSpec(lambda x: np.zeros(len(x)), lambda x: x[:, 0] - 1.0, 0.1, sense, other)
    return GameSpec(d, iv, (pay,), ((0.0, math.inf),))


def _interior(g, w=1):
    return ~g.boundary_mask(w)


def test_constant_is_annihilated():
    out = apply_generator(_gbm_game(), GridFunction(GRID, np.ones(GRID.size))).values
    assert np.max(np.abs(out)) < 1e-12
    # with jumps the row sums vanish up to rounding in entries of size ~1/h^2
    st_ = generator_stencil(_gbm_game(levy=((0.1, 0.5), (-0.2, 1.0))), GRID)
    assert np.max(np.abs(st_.matrix @ np.full(GRID.size, 3.0))) < 3e-14 * abs(st_.matrix).max()


@pytest.mark.parametrize("upwind", [True, False])
def test_linear_function_gives_the_drift(upwind):
    game = _gbm_game(alpha=0.05)
    x = GRID.points[:, 0]
    out = apply_generator(game, GridFunction(GRID, x), upwind=upwind).values
    np.testing.assert_allclose(out, 0.05 * x, rtol=0, atol=1e-10)


def test_power_solution_is_an_eigenfunction(ex1_sol):
    game = _gbm_game(0.05, 0.3)
    errs = []
    for n in (201, 401):
        g = Grid((0.5,), (4.0,), (n,))
        x = g.points[:, 0]
        phi = x ** ex1_sol.c_plus
        out = apply_generator(game, GridFunction(g, phi), upwind=False).values
        errs.append(np.max(np.abs(out - 0.1 * phi)[_interior(g)]))
    assert errs[1] < 50 * g.h[0] ** 2
    assert errs[0] / errs[1] > 3.0


def test_quadratic_jump_integrand_is_exact_on_atoms():
    atoms = ((0.1, 0.5), (-0.2, 1.5))
    game = _gbm_game(levy=atoms)
    x = np.linspace(0.5, 3, 9)
    got = jump_term(game, lambda y: y ** 2, lambda y: 2 * y, x)
    np.testing.assert_allclose(got, x ** 2 * sum(nu * z * z for z, nu in atoms), rtol=1e-13)


def test_stencil_jump_part_is_second_order():
    # the stencil keeps nu [phi(x + g) - phi(x)]; the compensator sits in the drift
    atoms = ((0.1, 0.5), (-0.2, 1.5))
    game = _gbm_game(levy=atoms)
    errs = []
    for n in (201, 401):
        g = Grid((0.5,), (4.0,), (n,))
        x = g.points[:, 0]
        got = generator_stencil(game, g).jump @ x ** 2
        want = x ** 2 * sum(nu * (2 * z + z * z) for z, nu in atoms)
        inside = (x * 1.1 < 4.0) & (x * 0.8 > 0.5)
        errs.append(np.max(np.abs(got - want)[inside]))
    assert errs[1] <= sum(nu for _, nu in atoms) * g.h[0] ** 2
    assert errs[1] < errs[0]


@pytest.mark.parametrize("alpha,beta", [(0.05, 0.3), (2.0, 0.05), (-1.0, 0.01)])
def test_upwinded_stencil_is_an_m_matrix(alpha, beta):
    st_ = generator_stencil(_gbm_game(alpha, beta), GRID)
    assert st_.offdiag_min() >= 0.0
    diag = st_.matrix.diagonal()[_interior(GRID)]
    assert np.all(diag <= 0)


def test_stencil_2d_annihilates_constants_and_is_exact_on_linear(ex2_sol):
    game = cf.investor_reduced_game(ex2_sol)
    g = Grid((0.2, 0.5), (4.0, 5.0), (30, 25))
    X = g.points
    A = generator_stencil(game, g).matrix
    assert np.max(np.abs(A @ np.ones(g.size))) < 1e-12
    got = A @ (2 * X[:, 0] - 3 * X[:, 1])
    want = 2 * game.diffusion.mu(0, X)[:, 0] - 3 * game.diffusion.mu(0, X)[:, 1]
    np.testing.assert_allclose(got, want, atol=1e-10)


@given(arrays(float, GRID.size, elements=st.floats(-5, 5)),
       arrays(float, GRID.size, elements=st.floats(-5, 5)), st.floats(-3, 3), st.floats(-3, 3))
def test_generator_is_linear(u, v, a, b):
    game = _gbm_game(levy=((0.1, 0.5),))
    L = lambda w: apply_generator(game, GridFunction(GRID, w)).values
    lhs = L(a * u + b * v)
    rhs = a * L(u) + b * L(v)
    scale = max(1.0, np.max(np.abs(lhs)))
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * scale


def test_interpolation_reproduces_linear_functions():
    g = Grid((0.0, -1.0), (1.0, 2.0), (11, 7))
    f = lambda P: 1.5 + 2 * P[:, 0] - 0.5 * P[:, 1]
    pts = np.random.default_rng(1).uniform([0, -1], [1, 2], size=(200, 2))
    np.testing.assert_allclose(interp(g, f(g.points), pts), f(pts), atol=1e-13)


def test_single_impulse_adds_its_cost():
    kappa = 0.7
    iv = InterventionSpec((0.0, 0.0), lambda x, z: x.copy(), lambda z: kappa + 0 * z, kappa)
    game = _gbm_game(sense=MINIMIZE, iv=iv)
    phi = np.sin(GRID.points[:, 0])
    M = intervention_operator(game, GridFunction(GRID, phi))
    np.testing.assert_allclose(M.values.values, phi + kappa, atol=1e-14)


def test_intervention_value_beyond_the_upper_threshold(ex1_sol, ex1_game):
    p = ex1_sol.params
    g = Grid((0.2,), (3 * ex1_sol.x_tilde,), (3001,))
    x = g.points[:, 0]
    phi = GridFunction(g, cf.example1_psi(ex1_sol, x), "extrapolate-linear")
    M = intervention_operator(ex1_game, phi)
    sel = x >= ex1_sol.x_tilde
    u = lambda y: y ** ex1_sol.c_plus - y ** ex1_sol.c_minus
    want = ex1_sol.a * u(ex1_sol.x_low) + (x[sel] - ex1_sol.x_low - p.kappa1) / (1 + p.lam)
    assert np.max(np.abs(M.values.values[sel] - want)) < 10 * g.h[0] ** 2
    # first-order condition at the optimiser
    dest = x[sel] - p.kappa1 - (1 + p.lam) * M.z[sel]
    np.testing.assert_allclose(cf.example1_dpsi(ex1_sol, dest), 1 / (1 + p.lam), atol=5e-3)
    np.testing.assert_allclose(dest, ex1_sol.x_low, atol=3 * g.h[0])


phis = arrays(float, GRID.size, elements=st.floats(-3, 3))


@given(phis, arrays(float, GRID.size, elements=st.floats(0, 2)))
def test_intervention_operator_is_monotone(u, bump):
    game = _gbm_game(sense=MINIMIZE, iv=cf.example1_game(cf.Example1Params()).intervention)
    M = lambda w: intervention_operator(game, GridFunction(GRID, w), refine_iters=0).values.values
    assert np.all(M(u) <= M(u + bump) + 1e-12)


@given(phis, phis)
def test_intervention_operator_is_nonexpansive(u, v):
    game = _gbm_game(sense=MAXIMIZE)
    M = lambda w: intervention_operator(game, GridFunction(GRID, w), refine_iters=0).values.values
    assert np.max(np.abs(M(u) - M(v))) <= np.max(np.abs(u - v)) + 1e-12


def test_inequality_holds_for_the_solver_value(ex1_params, ex1_game):
    from impulse_stopper.qvi import QviProblem, solve_qvi
    g = Grid((0.01,), (25.0,), (1200,))
    phi, _ = solve_qvi(QviProblem(ex1_game, g, "extrapolate-linear"))
    M = intervention_operator(ex1_game, phi)
    scale = np.max(np.abs(phi.values))
    assert intervention_inequality_check(phi, M.values, MAXIMIZE, tol=1e-8 * scale,
                                         mask=~M.flagged) == []


def test_inequality_with_a_large_cost():
    iv = cf.example1_game(cf.Example1Params(kappa1=50.0)).intervention
    game = _gbm_game(sense=MAXIMIZE, iv=iv)
    G = GRID.points[:, 0] - 1.0
    phi = GridFunction(GRID, G)
    M = intervention_operator(game, phi)
    assert intervention_inequality_check(phi, M.values, MAXIMIZE) == []


def test_inequality_reports_a_raised_node(ex1_sol, ex1_game):
    g = Grid((0.2,), (3 * ex1_sol.x_tilde,), (600,))
    x = g.points[:, 0]
    v = cf.example1_psi(ex1_sol, x)
    i = int(np.searchsorted(x, 0.5 * (ex1_sol.x_hat + ex1_sol.x_tilde)))
    v[i] -= 10 * ex1_sol.params.kappa1
    phi = GridFunction(g, v, "extrapolate-linear")
    M = intervention_operator(ex1_game, phi)
    assert i in intervention_inequality_check(phi, M.values, MAXIMIZE, tol=1e-8)
