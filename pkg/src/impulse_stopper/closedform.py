"""Semi-analytic solutions of the two worked games.

Example 1: a GBM controller-stopper game.  The controller extracts impulses
``xi`` (reward ``xi``, state drops by ``kappa1 + (1+lam) xi``), the stopper ends
the game paying ``x - kappa2`` and minimises.

Investor problem: capital injections from investor wealth ``y2`` and an exit
decision driven by ``omega = y1 y3`` (firm liquidity times the density ``Q``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .model import (MAXIMIZE, MINIMIZE, GameSpec, InterventionSpec, LevyDiffusionSpec,
                    PayoffSpec, gbm, lower_stop_policy, proportional_intervention,
                    reset_policy)


class ClosedFormError(ValueError):
    """Raised when a free boundary cannot be bracketed or is inconsistent."""


# ---------------------------------------------------------------------------
# Example 1

@dataclass(frozen=True)
class Example1Params:
    alpha: float = 0.05
    beta: float = 0.3
    delta: float = 0.1
    kappa1: float = 0.1
    kappa2: float = 1.0
    lam: float = 0.05
    T: float = 200.0

    def __post_init__(self):
        for name in ("alpha", "beta", "delta", "kappa1", "kappa2", "lam", "T"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class Example1Solution:
    params: Example1Params
    c_plus: float
    c_minus: float
    a: float
    x_hat: float
    x_low: float  # impulse target, smaller first-order root
    x_high: float  # larger first-order root
    x_sharp: float  # concavity switch of psi_0
    x_tilde: float
    tangent: bool  # x_tilde sits on the larger root (smooth fit at x_tilde)

    def constants(self) -> dict:
        return {"c_plus": self.c_plus, "c_minus": self.c_minus, "a": self.a,
                "x_hat": self.x_hat, "x_star_low": self.x_low, "x_star_high": self.x_high,
                "x_sharp": self.x_sharp, "x_tilde": self.x_tilde}


def example1_exponents(alpha: float, beta: float, delta: float) -> tuple:
    """Roots of ``-delta + alpha c + beta^2 c (c-1) / 2 = 0`` as ``(c+, c-)``."""
    b = alpha - 0.5 * beta * beta
    disc = math.sqrt(b * b + 2.0 * beta * beta * delta)
    s2 = beta * beta
    # the root with no cancellation first, the other from the product
    if b <= 0:
        cp = (-b + disc) / s2
        cm = -2.0 * delta / (s2 * cp)
    else:
        cm = (-b - disc) / s2
        cp = -2.0 * delta / (s2 * cm)
    return cp, cm


def _psi0_parts(cp, cm):
    u = lambda x: x ** cp - x ** cm
    du = lambda x: cp * x ** (cp - 1) - cm * x ** (cm - 1)
    d2u = lambda x: cp * (cp - 1) * x ** (cp - 2) - cm * (cm - 1) * x ** (cm - 2)
    return u, du, d2u


def _sharp_point(cp, cm) -> float:
    if cp <= 1:
        return math.inf
    return abs(cm * (cm - 1) / (cp * (cp - 1))) ** (1.0 / (cp - cm))


def _roots_on(fn, knots, what):
    """All roots of ``fn`` on the pieces between consecutive ``knots``."""
    roots = []
    vals = [fn(k) for k in knots]
    for k, v in zip(knots, vals):
        if v == 0.0:
            roots.append(k)
    for (a, fa), (b, fb) in zip(zip(knots, vals), zip(knots[1:], vals[1:])):
        if fa * fb < 0:
            roots.append(brentq(fn, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))
    return sorted(set(roots))


def example1_xhat(cp: float, cm: float, kappa2: float, alpha: float = 0.0, delta: float = 1.0,
                  lo: float = 1e-6, hi: float = 1e3) -> tuple:
    """Stop boundary from the two smooth-fit equations.

    Eliminating ``a`` gives ``R(x) = u(x) - (x - kappa2) u'(x)`` with
    ``u = x^{c+} - x^{c-}``; ``R' = -(x - kappa2) u''`` so ``R`` is monotone
    between ``kappa2`` and the concavity switch, and roots are bracketed on
    those pieces (a double root at ``kappa2 = 1`` is caught exactly).
    """
    u, du, d2u = _psi0_parts(cp, cm)
    R = lambda x: u(x) - (x - kappa2) * du(x)
    xs = _sharp_point(cp, cm)
    knots = sorted({lo * kappa2, hi * kappa2, kappa2}
                   | ({xs} if lo * kappa2 < xs < hi * kappa2 else set()))
    roots = _roots_on(R, knots, "x_hat")
    # log-space scan for tangential roots the piecewise test could miss
    grid = np.geomspace(lo * kappa2, hi * kappa2, 4001)
    rv = np.array([R(g) for g in grid])
    for i in np.nonzero(rv[:-1] * rv[1:] < 0)[0]:
        roots.append(brentq(R, grid[i], grid[i + 1], xtol=1e-15, maxiter=500))
    roots = sorted({round(r, 15) for r in roots})
    bound = delta * kappa2 / (delta - alpha) if delta > alpha else math.inf
    admissible = [r for r in roots if r > 0 and r < xs and r <= bound * (1 + 1e-12)]
    if not admissible:
        raise ClosedFormError(
            f"x_hat: no admissible smooth-fit root on [{lo * kappa2:.3g}, {hi * kappa2:.3g}] "
            f"(roots found: {roots}, concavity switch {xs:.6g})")
    xh = admissible[0]
    return xh, 1.0 / du(xh)


def _m_function(sol_parts, x_low, kappa1, lam):
    a, u = sol_parts
    return lambda x: x - x_low - kappa1 - (1.0 + lam) * a * (u(x) - u(x_low))


def example1_solve(params: Example1Params, tangent_tol: float = 1e-10) -> Example1Solution:
    p = params
    cp, cm = example1_exponents(p.alpha, p.beta, p.delta)
    u, du, d2u = _psi0_parts(cp, cm)
    xh, a = example1_xhat(cp, cm, p.kappa2, p.alpha, p.delta)
    B = 1.0 / (1.0 + p.lam)
    xs = _sharp_point(cp, cm)
    if not math.isfinite(xs):
        raise ClosedFormError("x_star: psi_0 has no concavity switch (c+ <= 1)")
    g = lambda x: a * du(x) - B
    if not (g(xh) > 0 and g(xs) < 0):
        raise ClosedFormError(
            f"x_star: no sign change of psi_0' - 1/(1+lam) on [{xh:.6g}, {xs:.6g}]")
    x_low = brentq(g, xh, xs, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    top = xs * 2.0
    while g(top) < 0:
        top *= 2.0
        if top > 1e12:
            raise ClosedFormError(f"x_star: no larger root on [{xs:.6g}, 1e12]")
    x_high = brentq(g, xs, top, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)

    m = _m_function((a, u), x_low, p.kappa1, p.lam)
    start = x_low + p.kappa1
    m_high = m(x_high)
    scale = max(1.0, abs(x_high))
    tangent = False
    if abs(m_high) <= tangent_tol * scale:
        xt, tangent = x_high, True
    elif start >= x_high or m_high < 0:
        raise ClosedFormError(
            f"x_tilde: m has no sign change on ({start:.6g}, {x_high:.6g}] "
            f"(m = {m(min(start, x_high)):.3g} .. {m_high:.3g}); kappa1 above the smooth-fit level "
            f"{smooth_fit_kappa1(params):.6g}")
    else:
        xt = brentq(m, start, x_high, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if not (xh < xt and x_low < xt):
        raise ClosedFormError(f"inconsistent free boundaries: x_hat={xh}, x_low={x_low}, x_tilde={xt}")
    return Example1Solution(p, cp, cm, a, xh, x_low, x_high, xs, xt, tangent)


def smooth_fit_kappa1(params: Example1Params) -> float:
    """Fixed cost for which the intervention boundary also satisfies smooth fit.

    At this cost ``m`` touches zero at the larger first-order root, so the
    value is continuously differentiable at ``x_tilde``.
    """
    cp, cm = example1_exponents(params.alpha, params.beta, params.delta)
    u, du, _ = _psi0_parts(cp, cm)
    xh, a = example1_xhat(cp, cm, params.kappa2, params.alpha, params.delta)
    B = 1.0 / (1.0 + params.lam)
    xs = _sharp_point(cp, cm)
    g = lambda x: a * du(x) - B
    x_low = brentq(g, xh, xs, xtol=1e-15, maxiter=500)
    top = 2 * xs
    while g(top) < 0:
        top *= 2
    x_high = brentq(g, xs, top, xtol=1e-15, maxiter=500)
    return x_high - x_low - (1.0 + params.lam) * a * (u(x_high) - u(x_low))


def example1_residuals(sol: Example1Solution) -> dict:
    p = sol.params
    u, du, _ = _psi0_parts(sol.c_plus, sol.c_minus)
    a, xh, xt, xl = sol.a, sol.x_hat, sol.x_tilde, sol.x_low
    B = 1.0 / (1.0 + p.lam)
    return {
        "value_match_x_hat": a * u(xh) - (xh - p.kappa2),
        "slope_match_x_hat": a * du(xh) - 1.0,
        "continuity_x_tilde": a * u(xt) - (a * u(xl) + (xt - xl - p.kappa1) * B),
        "foc_x_low": a * du(xl) - B,
        "foc_x_high": a * du(sol.x_high) - B,
    }


def example1_psi(sol: Example1Solution, x) -> np.ndarray:
    """Stationary value ``psi(x)`` (vectorised)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("example 1 value is defined for x > 0")
    p = sol.params
    u, _, _ = _psi0_parts(sol.c_plus, sol.c_minus)
    lin = sol.a * u(sol.x_low) + (x - sol.x_low - p.kappa1) / (1.0 + p.lam)
    with np.errstate(over="ignore"):
        mid = sol.a * u(x)
    return np.where(x <= sol.x_hat, x - p.kappa2, np.where(x < sol.x_tilde, mid, lin))


def example1_dpsi(sol: Example1Solution, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _, du, _ = _psi0_parts(sol.c_plus, sol.c_minus)
    B = 1.0 / (1.0 + sol.params.lam)
    return np.where(x <= sol.x_hat, 1.0, np.where(x < sol.x_tilde, sol.a * du(x), B))


def example1_value(sol: Example1Solution, s: float, x):
    """``e^{-delta s} psi(x)``."""
    v = math.exp(-sol.params.delta * s) * example1_psi(sol, x)
    return float(v) if np.ndim(v) == 0 else v


def example1_impulse(sol: Example1Solution, x):
    """Optimal impulse ``(x - x_low - kappa1) / (1 + lam)`` on ``x >= x_tilde``."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < sol.x_tilde):
        raise ValueError(f"x={x} is not in intervention region [x_tilde={sol.x_tilde}, inf)")
    xi = (xa - sol.x_low - sol.params.kappa1) / (1.0 + sol.params.lam)
    return float(xi) if np.ndim(xi) == 0 else xi


def example1_game(params: Example1Params, upper: Optional[float] = None) -> GameSpec:
    """Game spec of Example 1; ``upper`` bounds the solvency box (default inf)."""
    p = params
    payoff = PayoffSpec(running=lambda x: np.zeros(len(x)), bequest=lambda x: x[:, 0] - p.kappa2,
                        discount=p.delta, controller_sense=MAXIMIZE, stopper_sense=MINIMIZE,
                        linear_bequest=(-p.kappa2, 1.0), zero_running=True)
    return GameSpec(gbm(p.alpha, p.beta, p.T), proportional_intervention(p.kappa1, p.lam),
                    (payoff,), ((0.0, math.inf if upper is None else upper),))


def example1_policies(sol: Example1Solution, game: Optional[GameSpec] = None,
                      x_tilde: Optional[float] = None, x_hat: Optional[float] = None):
    """Equilibrium policies: stop on ``x <= x_hat``, reset to ``x_low`` from ``x >= x_tilde``.

    ``x_tilde``/``x_hat`` override the thresholds (used for deviations).
    """
    game = game or example1_game(sol.params)
    up = sol.x_tilde if x_tilde is None else x_tilde
    lo = sol.x_hat if x_hat is None else x_hat
    return reset_policy(game, up, sol.x_low), lower_stop_policy(lo)


# ---------------------------------------------------------------------------
# investor problem

@dataclass(frozen=True)
class Example2Params:
    e: float = 2.0
    r: float = 0.1
    sigma_f: float = math.sqrt(0.1)
    jump_marks: tuple = ()  # gamma_f per atom
    jump_rates: tuple = ()  # nu per atom
    sigma_I: float = 0.3
    pi: float = 0.5
    drift: float = 0.02  # (1 - pi) r0 + pi mu_R
    delta: float = 0.05
    kappa_I: float = 0.05
    alpha_I: float = 1.0
    g1: float = 0.5
    g2: float = 0.5
    lambda_T: float = 1.0
    T: float = 50.0

    def __post_init__(self):
        if len(self.jump_marks) != len(self.jump_rates):
            raise ValueError("jump marks and rates must have equal length")
        object.__setattr__(self, "jump_marks", tuple(float(v) for v in self.jump_marks))
        object.__setattr__(self, "jump_rates", tuple(float(v) for v in self.jump_rates))
        if any(nu < 0 for nu in self.jump_rates):
            raise ValueError("jump intensities must be nonnegative")
        if any(1 + g <= 0 for g in self.jump_marks):
            raise ValueError("jump marks need 1 + gamma_f > 0")
        if not (0 < self.delta <= 1):
            raise ValueError("delta must lie in (0, 1]")
        if self.jump_marks and not (self.e > self.sigma_f ** 2 / self.r):
            raise ValueError("jump case needs e > (r / sigma_f^2)^-1")

    @property
    def has_jumps(self) -> bool:
        return bool(self.jump_marks) and sum(self.jump_rates) > 0

    @property
    def growth(self) -> float:
        return self.e * self.r - self.sigma_f ** 2


@dataclass(frozen=True)
class Example2Solution:
    params: Example2Params
    k: float
    a: float
    omega_star: float
    d1: float
    d2: float
    c: float
    y_hat: float
    y_tilde: float
    theta0: float
    theta1: tuple
    eta: float

    def constants(self) -> dict:
        out = {"k": self.k, "a": self.a, "omega_star": self.omega_star, "d1": self.d1,
               "d2": self.d2, "c": self.c, "y_hat": self.y_hat, "y_tilde": self.y_tilde,
               "theta0": self.theta0}
        for j, t in enumerate(self.theta1):
            out[f"theta1_{j}"] = t
        return out


def example2_theta1(marks, rates, k: float, eta_max: float = 1e6) -> tuple:
    """Jump kernel per atom from ``sum_j nu_j (Xi_j^k - 1) = 0``.

    ``Xi_j = (1 - theta_j)(1 + gamma_j)``.  A single atom gives the closed form
    ``1 - 1/(1 + gamma)``; several atoms use ``theta_j = 1 - eta / (1 + gamma_j)``
    with scalar ``eta`` root-found.  Returns ``(thetas, eta)``.
    """
    marks = [float(g) for g in marks]
    rates = [float(v) for v in rates]
    if not 0 < k < 1:
        raise ValueError(f"k={k} must lie in (0, 1)")
    if any(1 + g <= 0 for g in marks):
        raise ValueError("need 1 + gamma_f > 0 for every atom")
    if len(marks) == 1:
        return (1.0 - 1.0 / (1.0 + marks[0]),), 1.0
    if not marks or sum(rates) == 0:
        return tuple(1.0 - 1.0 / (1.0 + g) for g in marks), 1.0
    H = lambda eta: sum(nu * (eta ** k - 1.0) for nu in rates)
    lo, hi = 1e-12, 2.0
    while H(hi) < 0 and hi < eta_max:
        hi *= 2.0
    if not H(lo) < 0 < H(hi):
        raise ValueError(f"no root for eta in (0, {eta_max}]")
    eta = brentq(H, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps)
    return tuple(1.0 - eta / (1.0 + g) for g in marks), eta


def example2_H(params: Example2Params, thetas, k: float) -> float:
    return float(sum(nu * (((1 - th) * (1 + g)) ** k - 1.0)
                     for g, nu, th in zip(params.jump_marks, params.jump_rates, thetas)))


def example2_p(params: Example2Params, thetas, k: float) -> float:
    """``p(k) = -delta + (er - sigma_f^2) k + k sum_j nu_j (theta_j - gamma_j)``."""
    jump = sum(nu * (th - g) for g, nu, th in zip(params.jump_marks, params.jump_rates, thetas))
    return -params.delta + params.growth * k + k * jump


def example2_exponent(params: Example2Params, tol: float = 1e-10, max_iter: int = 100):
    """Return ``(k, p, thetas, eta)`` with ``p`` the evaluator ``k -> p(k)``."""
    p = params
    if not p.has_jumps:
        if p.growth == 0:
            raise ValueError("no-jump case needs er != sigma_f^2")
        k = p.delta / p.growth
        if not 0 < k < 1:
            raise ValueError(f"k = delta/(er - sigma_f^2) = {k:.6g} is not in (0, 1); "
                             f"p(0) = {-p.delta} < 0 needs er - sigma_f^2 > delta")
        thetas = tuple(0.0 for _ in p.jump_marks)
        return k, (lambda kk: example2_p(p, thetas, kk)), thetas, 1.0
    k = 0.5
    for _ in range(max_iter):
        thetas, eta = example2_theta1(p.jump_marks, p.jump_rates, k)
        pk = lambda kk, th=thetas: example2_p(p, th, kk)
        lo, hi = 1e-15, 1.0 - 1e-15
        if not pk(lo) < 0 < pk(hi):
            raise ValueError(f"p has no sign change on (0, 1): p(0) = {-p.delta} < 0 but "
                             f"p(1) = {pk(1.0):.6g}; the positivity bound needs e > (r/sigma_f^2)^-1 "
                             f"and a large enough growth rate")
        k_new = brentq(pk, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps)
        if abs(k_new - k) < tol:
            k = k_new
            break
        k = k_new
    else:
        raise ValueError("k / theta fixed point did not converge")
    thetas, eta = example2_theta1(p.jump_marks, p.jump_rates, k)
    return k, (lambda kk: example2_p(p, thetas, kk)), thetas, eta


def example2_wealth_exponents(params: Example2Params) -> tuple:
    """Roots ``d1 < 0 < d2`` of ``s d(d-1)/2 + Gamma d - delta = 0`` with ``s = (pi sigma_I)^2``."""
    s = (params.pi * params.sigma_I) ** 2
    G = params.drift
    root = math.sqrt((G - 0.5 * s) ** 2 + 2 * s * params.delta)
    return 0.5 - (root + G) / s, 0.5 + (root - G) / s


def _wealth_system(d1, d2, alpha_I, kappa_I):
    def F(v):
        c, yh, yt = v
        return np.array([
            c * ((yt ** d1 - yh ** d1) - (yt ** d2 - yh ** d2)) - (alpha_I * (yt - yh) - kappa_I),
            c * (d1 * yh ** (d1 - 1) - d2 * yh ** (d2 - 1)) - alpha_I,
            c * (d1 * yt ** (d1 - 1) - d2 * yt ** (d2 - 1)) - alpha_I,
        ])

    def J(v):
        c, yh, yt = v
        u = lambda y: d1 * y ** (d1 - 1) - d2 * y ** (d2 - 1)
        du = lambda y: d1 * (d1 - 1) * y ** (d1 - 2) - d2 * (d2 - 1) * y ** (d2 - 2)
        return np.array([
            [(yt ** d1 - yh ** d1) - (yt ** d2 - yh ** d2), -c * u(yh) + alpha_I, c * u(yt) - alpha_I],
            [u(yh), c * du(yh), 0.0],
            [u(yt), 0.0, c * du(yt)],
        ])
    return F, J


def example2_wealth_residuals(sol: Example2Solution) -> np.ndarray:
    F, _ = _wealth_system(sol.d1, sol.d2, sol.params.alpha_I, sol.params.kappa_I)
    return F(np.array([sol.c, sol.y_hat, sol.y_tilde]))


def _wealth_solve(d1, d2, alpha_I, kappa_I, max_iter=200, tol=1e-13):
    if d2 <= 1:
        raise ClosedFormError("injection boundaries need d2 > 1 (investor drift below delta)")
    u = lambda y: d1 * y ** (d1 - 1) - d2 * y ** (d2 - 1)
    ysharp = (d1 * (d1 - 1) / (d2 * (d2 - 1))) ** (1.0 / (d2 - d1))

    def pair(yh):
        c = alpha_I / u(yh)
        target = u(yh)
        top = 2 * ysharp
        while u(top) > target:
            top *= 2
        yt = brentq(lambda y: u(y) - target, ysharp, top, xtol=1e-15, maxiter=500)
        return c, yt

    def gap(yh):
        c, yt = pair(yh)
        return c * ((yt ** d1 - yh ** d1) - (yt ** d2 - yh ** d2)) - (alpha_I * (yt - yh) - kappa_I)

    # scan c through the two-root structure of u(y) = alpha_I / c
    scan = ysharp * np.geomspace(1e-8, 1 - 1e-6, 400)
    vals = np.array([gap(y) for y in scan])
    idx = np.nonzero(vals[:-1] * vals[1:] < 0)[0]
    if idx.size == 0:
        raise ClosedFormError(f"injection boundaries: no sign change scanning y_hat on "
                              f"[{scan[0]:.3g}, {scan[-1]:.6g}]")
    i = idx[-1]
    yh = brentq(gap, scan[i], scan[i + 1], xtol=1e-15, maxiter=500)
    c, yt = pair(yh)

    F, J = _wealth_system(d1, d2, alpha_I, kappa_I)
    v = np.array([c, yh, yt])
    r = F(v)
    for it in range(max_iter):
        if np.max(np.abs(r)) < tol:
            break
        Jv = J(v)
        if not np.all(np.isfinite(Jv)) or abs(np.linalg.det(Jv)) < 1e-300:
            raise ClosedFormError(f"singular Jacobian; residual {np.max(np.abs(r)):.3g}")
        step = np.linalg.solve(Jv, -r)
        lam = 1.0
        while lam > 1e-8:
            trial = v + lam * step
            if trial[1] > 0 and trial[2] > 0:
                rt = F(trial)
                if np.max(np.abs(rt)) < np.max(np.abs(r)):
                    break
            lam *= 0.5
        else:
            break
        v, r = trial, rt
    if np.max(np.abs(r)) > 1e-9:
        raise ClosedFormError(f"injection system did not converge in {max_iter} iterations; "
                              f"residual {np.max(np.abs(r)):.3g}")
    return tuple(float(t) for t in v)


def example2_solve(params: Example2Params) -> Example2Solution:
    p = params
    if not (p.lambda_T > 0 and 0 < p.g1 <= 1):
        raise ValueError("need lambda_T > 0 and g1 in (0, 1]")
    k, _, thetas, eta = example2_exponent(p)
    omega = p.lambda_T * k / (p.g1 * (1 - k))
    a = example2_scale(p.g1, p.lambda_T, k)
    d1, d2 = example2_wealth_exponents(p)
    c, yh, yt = _wealth_solve(d1, d2, p.alpha_I, p.kappa_I)
    return Example2Solution(p, k, a, omega, d1, d2, c, yh, yt, p.sigma_f, tuple(thetas), eta)


def example2_scale(g1: float, lambda_T: float, k: float) -> float:
    """Scale ``a`` solving ``a w^k = g1 w + lambda_T`` and ``a k w^{k-1} = g1`` at ``w = omega*``."""
    return g1 ** k / k * (lambda_T * k / (1 - k)) ** (1 - k)


def example2_scale_printed(g1: float, lambda_T: float, k: float) -> float:
    """The scale as printed in the source derivation, kept for comparison only."""
    return (g1 / k) ** k * (lambda_T * k / (1 - k)) ** (1 - k)


def example2_wealth(sol: Example2Solution, y2):
    """Wealth part: continuation ``c(y^d1 - y^d2)``, injection branch beyond ``y_tilde``."""
    y2 = np.asarray(y2, dtype=float)
    base = lambda y: sol.c * (y ** sol.d1 - y ** sol.d2)
    p = sol.params
    inj = base(sol.y_hat) - (p.kappa_I + p.alpha_I * (sol.y_hat - y2))
    return np.where(y2 >= sol.y_tilde, inj, base(y2))


def example2_omega_part(sol: Example2Solution, omega):
    omega = np.asarray(omega, dtype=float)
    return sol.a * omega ** sol.k


def example2_value(sol: Example2Solution, y0, y1, y2, y3):
    """Piecewise value in the original coordinates ``(time, liquidity, wealth, density)``."""
    y1, y2, y3 = (np.asarray(v, dtype=float) for v in (y1, y2, y3))
    if np.any(y1 <= 0) or np.any(y2 <= 0):
        raise ValueError("need y1 > 0 and y2 > 0")
    p = sol.params
    disc = np.exp(-p.delta * np.asarray(y0, dtype=float))
    omega = y1 * y3
    cont = sol.c * (y2 ** sol.d1 - y2 ** sol.d2)
    A3 = y3 * disc * (cont + sol.a * y1 ** sol.k * y3 ** sol.k)
    inj = sol.c * (sol.y_hat ** sol.d1 - sol.y_hat ** sol.d2)
    A1 = disc * y3 * (inj - (p.kappa_I + p.alpha_I * (sol.y_hat - y2)) / y3
                      + sol.a * y1 ** sol.k * y3 ** sol.k)
    A2 = disc * (p.g1 * y1 * y3 + p.lambda_T + p.g2 * y2)
    out = np.where(omega <= sol.omega_star, A2, np.where(y2 >= sol.y_tilde, A1, A3))
    return float(out) if out.ndim == 0 else out


def example2_region(sol: Example2Solution, y2, omega, eps: float = 1e-12):
    """Region label: 'exit', 'inject' or 'wait' (acting when indifferent)."""
    y2 = np.asarray(y2, dtype=float)
    omega = np.asarray(omega, dtype=float)
    tol_w = eps * max(1.0, abs(sol.omega_star))
    tol_y = eps * max(1.0, abs(sol.y_tilde))
    return np.where(omega <= sol.omega_star + tol_w, "exit",
                    np.where(y2 >= sol.y_tilde - tol_y, "inject", "wait"))


def q_process_step(q, dt: float, dW, sigma_f: float, jump_counts=None, thetas=(), rates=()):
    """Exact step of ``dQ = -Q (sigma_f dB + sum_j theta_j dN~_j)``.

    ``q' = q exp(-sigma_f^2 dt / 2 - sigma_f dW) prod_j (1 - theta_j)^{N_j} e^{nu_j theta_j dt}``,
    a positive martingale with ``E[q'] = q``.
    """
    q = np.asarray(q, dtype=float)
    out = q * np.exp(-0.5 * sigma_f ** 2 * dt - sigma_f * np.asarray(dW, dtype=float))
    if jump_counts is not None:
        counts = np.asarray(jump_counts, dtype=float)
        for j, (th, nu) in enumerate(zip(thetas, rates)):
            out = out * (1.0 - th) ** counts[..., j] * math.exp(nu * th * dt)
    return out


def investor_reduced_game(sol: Example2Solution, y_box=(1e-3, 1e3), w_box=(1e-6, 1e6)) -> GameSpec:
    """The investor problem in ``(y2, omega)`` with ``y3 = 1``.

    Wealth follows ``dY2 = Gamma Y2 dt + pi sigma_I Y2 dB``; ``omega`` grows
    deterministically at ``delta / k`` (``er - sigma_f^2`` without jumps; under
    the optimal kernel the jumps of ``Y1`` and ``Y3`` cancel in ``omega`` and
    only shift its drift).  Injections move ``y2 -> y2 - z`` with payoff
    ``alpha_I z - kappa_I``; the controller maximises.  The exit payment is
    ``g1 omega + lambda_T + g2 y2`` and the stopper minimises, as in the
    double-obstacle form ``max{min[psi - M psi, delta psi - L psi], psi - G} = 0``.
    """
    p = sol.params
    g = p.delta / sol.k
    s = p.pi * p.sigma_I
    diffusion = LevyDiffusionSpec(
        dimension=2,
        drift=lambda t, x: np.stack([p.drift * x[:, 0], g * x[:, 1]], axis=1),
        volatility=lambda t, x: np.stack([np.stack([s * x[:, 0], 0 * x[:, 0]], axis=1),
                                          np.zeros((len(x), 2))], axis=1),
        horizon=p.T, lipschitz=(max(abs(p.drift), abs(g)), s), growth=(max(abs(p.drift), abs(g)), s))

    def response(x, z):
        y = x.copy()
        y[:, 0] = x[:, 0] - z
        return y

    iv = InterventionSpec((0.0, math.inf), response, lambda z: p.kappa_I - p.alpha_I * z,
                          cost_floor=p.kappa_I, linear=(0.0, 1.0, p.kappa_I, -p.alpha_I))
    payoff = PayoffSpec(running=lambda x: np.zeros(len(x)),
                        bequest=lambda x: p.g1 * x[:, 1] + p.lambda_T + p.g2 * x[:, 0],
                        discount=p.delta, controller_sense=MAXIMIZE, stopper_sense=MINIMIZE,
                        zero_running=True)
    return GameSpec(diffusion, iv, (payoff,), (y_box, w_box))


def investor_reduced_value(sol: Example2Solution, y2, omega):
    """Closed-form value in ``(y2, omega)`` at ``y0 = 0``, ``y3 = 1``."""
    return example2_value(sol, 0.0, omega, y2, 1.0)


# ---------------------------------------------------------------------------
# constants documents

def format_float(v: float) -> str:
    return format(float(v), ".17g")


def write_constants(path, constants: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in constants.items():
            fh.write(f"{k} = {format_float(v)}\n")


def read_constants(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            out[k.strip()] = float(v)
    return out
