"""Monte Carlo engine for threshold policies.

Every path owns two random streams derived from ``SeedSequence([seed,
index, k])``: one for the Brownian increments and one for the jump clocks.  Runs
that share a seed therefore share their noise path by path (common random
numbers), and results do not depend on the order in which paths are run.

Events are monitored at step boundaries.  The stopper is tested first, then
the controller; impulses take no time and are followed by a fresh test.
Discount factors are taken at the event times.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .model import MINIMIZE, GameSpec, StopPolicy, ThresholdImpulsePolicy

log = logging.getLogger(__name__)

STOPPED, SOLVENCY_EXIT, HORIZON, ABORTED = 0, 1, 2, 3
EXIT_REASONS = {STOPPED: "stopped", SOLVENCY_EXIT: "solvency_exit", HORIZON: "horizon",
                ABORTED: "aborted"}
MAX_IMPULSES_PER_INSTANT = 1000


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    dt: float = 1e-3
    n_paths: int = 10_000
    seed: int = 0
    scheme: str = "exact"   # "exact" uses the exponential step for geometric dynamics
    horizon: Optional[float] = None
    substeps: int = 1       # normals per step; dt/substeps is the finest resolution
    record_paths: bool = False
    threads: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise SimulationError(f"dt must be positive, got {self.dt}")
        if self.n_paths < 1:
            raise SimulationError("n_paths must be at least 1")
        if self.scheme not in ("exact", "euler"):
            raise SimulationError(f"unknown scheme {self.scheme!r}")
        if self.substeps < 1:
            raise SimulationError("substeps must be at least 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise SimulationError("seed must be an unsigned 64-bit integer")


@dataclass
class PathRecord:
    index: int
    interventions: list          # (tau, xi, state before, state after)
    stop_time: float
    exit_reason: str
    payoff: tuple                # realised payoff per player
    stop_state: np.ndarray
    times: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None
    error: str = ""

    @property
    def n_interventions(self) -> int:
        return len(self.interventions)


def _stream(seed: int, index: int, k: int) -> np.random.Generator:
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence([int(seed), int(index), k])))


def path_streams(seed: int, index: int):
    """Diffusion and jump generators of one path."""
    return _stream(seed, index, 0), _stream(seed, index, 1)


def _horizon(game: GameSpec, cfg: SimulationConfig) -> float:
    return game.diffusion.horizon if cfg.horizon is None else cfg.horizon


# ---------------------------------------------------------------------------
# generic path simulator

def simulate_path(game: GameSpec, controller: ThresholdImpulsePolicy, stopper: StopPolicy,
                  cfg: SimulationConfig, index: int, x0, t0: float = 0.0) -> PathRecord:
    """One path of the controlled process under the given policies.

    Uses the exponential step when the diffusion is a 1-D geometric Brownian
    motion and ``cfg.scheme == "exact"``, Euler otherwise.  Jumps come from
    per-atom exponential clocks; their compensator is part of the drift.
    """
    diff = game.diffusion
    p = diff.dimension
    rng, jrng = path_streams(cfg.seed, index)
    T = _horizon(game, cfg)
    dt = cfg.dt
    n_steps = int(round((T - t0) / dt))
    delta = game.delta
    x = np.array(x0, dtype=float).reshape(p)
    atoms = diff.levy_measure
    clocks = [t0 + jrng.exponential(1.0 / nu) if nu > 0 else math.inf for _, nu in atoms]
    geometric = diff.geometric is not None and cfg.scheme == "exact" and p == 1
    interventions = []
    times, states = ([t0], [x.copy()]) if cfg.record_paths else (None, None)
    npl = len(game.payoffs)
    running = np.zeros(npl)
    impulse_sum = np.zeros(npl)

    def finish(t, reason, err=""):
        disc = math.exp(-delta * (t - t0))
        X = x.reshape(1, p)
        pay = tuple(float(running[k] + impulse_sum[k] + disc * game.payoffs[k].G(X)[0])
                    for k in range(npl))
        return PathRecord(index, interventions, t, EXIT_REASONS[reason], pay, x.copy(),
                          None if times is None else np.array(times),
                          None if states is None else np.array(states), err)

    def act(t):
        """Stopper first, then the controller; returns an exit reason or None."""
        nonlocal x
        for _ in range(MAX_IMPULSES_PER_INSTANT):
            X = x.reshape(1, p)
            if not game.in_solvency(X)[0]:
                return SOLVENCY_EXIT
            if stopper.stop_region(X)[0]:
                return STOPPED
            if not controller.act_region(X)[0]:
                return None
            xi = float(np.asarray(controller.target(X)).reshape(-1)[0])
            before = x.copy()
            x = game.intervention.apply(X, np.array([xi]))[0]
            disc = math.exp(-delta * (t - t0))
            for k in range(npl):
                impulse_sum[k] += disc * float(game.impulse_term(np.array([xi]), k)[0])
            interventions.append((t, xi, before, x.copy()))
        raise SimulationError("impulse chain did not leave the action region")

    reason = act(t0)
    if reason is not None:
        return finish(t0, reason)
    sq = math.sqrt(dt / cfg.substeps)
    for n in range(1, n_steps + 1):
        t_prev = t0 + (n - 1) * dt
        t = t0 + n * dt
        X = x.reshape(1, p)
        for k in range(npl):
            pay = game.payoffs[k]
            if not pay.zero_running:
                running[k] += math.exp(-delta * (t_prev - t0)) * float(pay.f(X)[0]) * dt
        sig = diff.sigma(t_prev, X)[0]
        m = sig.shape[1]
        dW = sq * rng.standard_normal((cfg.substeps, m)).sum(axis=0)
        comp = np.zeros(p)
        for (z, nu) in atoms:
            if nu > 0:
                comp += nu * diff.gamma(X, z)[0]
        if geometric:
            a, b = diff.geometric
            x = x * math.exp((a - 0.5 * b * b) * dt + b * dW[0]) - comp * dt
        else:
            x = x + (diff.mu(t_prev, X)[0] - comp) * dt + sig @ dW
        for j, (z, nu) in enumerate(atoms):
            while clocks[j] <= t:
                x = x + diff.gamma(x.reshape(1, p), z)[0]
                clocks[j] += jrng.exponential(1.0 / nu)
        if not np.all(np.isfinite(x)):
            return finish(t, ABORTED, f"non-finite state at t={t}")
        if times is not None:
            times.append(t)
            states.append(x.copy())
        reason = act(t)
        if reason is not None:
            return finish(t, reason)
    return finish(t0 + n_steps * dt, HORIZON)


# ---------------------------------------------------------------------------
# fast kernel: 1-D geometric dynamics, interval stop rule, reset impulses

# state slots of the kernel
_X, _STEP, _S0, _S1, _NIMP, _LAND, _DONE, _REASON, _TSTOP = range(9)


@njit(cache=True)
def _gbm_kernel(st, rng, m, n_steps, dt, a, b, euler, delta, stop_lo, stop_hi, act_hi, reset,
                k0, k1, sol_lo, sol_hi):
    """Run one path to its exit, drawing ``m`` normals per step from ``rng``.

    The exact scheme walks ``log x`` and only exponentiates at events.
    """
    sq = math.sqrt(dt / m)
    drift = (a - 0.5 * b * b) * dt
    x = st[_X]
    y = math.log(x) if x > 0 else -math.inf
    # log-space thresholds for the exact scheme
    lstop_lo = math.log(stop_lo) if stop_lo > 0 else -math.inf
    lstop_hi = math.log(stop_hi) if stop_hi > 0 else -math.inf
    lact = math.log(act_hi) if act_hi > 0 else -math.inf
    lsol_lo = math.log(sol_lo) if sol_lo > 0 else -math.inf
    lsol_hi = math.log(sol_hi) if sol_hi > 0 else -math.inf
    n = 0
    while True:
        if euler:
            hit_sol = x <= sol_lo or x >= sol_hi
            hit_stop = x <= stop_lo or x >= stop_hi
            hit_act = x >= act_hi
        else:
            hit_sol = y <= lsol_lo or y >= lsol_hi
            hit_stop = y <= lstop_lo or y >= lstop_hi
            hit_act = y >= lact
        if hit_sol or hit_stop or hit_act:
            t = n * dt
            if not euler:
                x = math.exp(y)
            # stopper, then controller, then the solvency box
            for _ in range(1000):
                if x <= sol_lo or x >= sol_hi or x <= stop_lo or x >= stop_hi:
                    st[_X] = x
                    st[_DONE] = 1.0
                    st[_REASON] = 1.0 if (x <= sol_lo or x >= sol_hi) else 0.0
                    st[_TSTOP] = t
                    st[_STEP] = n
                    return
                if x < act_hi:
                    break
                xi = (x - reset - k0) / k1
                x = x - k0 - k1 * xi
                d = math.exp(-delta * t)
                st[_S0] += d
                st[_S1] += d * xi
                st[_NIMP] += 1.0
                err = abs(x - reset)
                if err > st[_LAND]:
                    st[_LAND] = err
            y = math.log(x) if x > 0 else -math.inf
        if n >= n_steps:
            st[_X] = x if euler else math.exp(y)
            st[_DONE] = 1.0
            st[_REASON] = 2.0
            st[_TSTOP] = n * dt
            st[_STEP] = n
            return
        w = 0.0
        for i in range(m):
            w += rng.standard_normal()
        w *= sq
        n += 1
        if euler:
            x = x * (1.0 + a * dt + b * w)
            if not math.isfinite(x):
                st[_X] = x
                st[_DONE] = 1.0
                st[_REASON] = 3.0
                st[_TSTOP] = n * dt
                st[_STEP] = n
                return
        else:
            y += drift + b * w


def _fast_eligible(game: GameSpec, controller, stopper) -> bool:
    d = game.diffusion
    if d.dimension != 1 or d.geometric is None or d.total_intensity > 0:
        return False
    if controller.upper is None or (math.isfinite(controller.upper) and controller.reset is None):
        return False
    if stopper.lower is None:
        return False
    if math.isfinite(controller.upper) and game.intervention.linear is None:
        return False
    if not all(p.zero_running for p in game.payoffs):
        return False
    return all(_affine_term(game, k) is not None for k in range(len(game.payoffs)))


def _affine_term(game: GameSpec, player: int):
    z = np.array([0.0, 1.0, 2.7, 31.0])
    v = game.impulse_term(z, player)
    c0, c1 = float(v[0]), float(v[1] - v[0])
    if np.allclose(v, c0 + c1 * z, rtol=1e-12, atol=1e-12):
        return c0, c1
    return None


@dataclass
class FastPaths:
    """Per-path summaries from the fast kernel (arrays over paths)."""
    x_stop: np.ndarray
    t_stop: np.ndarray
    reason: np.ndarray
    n_impulses: np.ndarray
    disc_count: np.ndarray     # sum of e^{-delta tau_j}
    disc_impulse: np.ndarray   # sum of e^{-delta tau_j} xi_j
    landing_error: np.ndarray
    payoff: np.ndarray         # (n_paths, n_players)


def run_fast(game: GameSpec, controller: ThresholdImpulsePolicy, stopper: StopPolicy,
             cfg: SimulationConfig, x0: float, first_index: int = 0,
             n_paths: Optional[int] = None) -> FastPaths:
    """Threshold policies on 1-D geometric dynamics through the compiled kernel."""
    n_paths = cfg.n_paths if n_paths is None else n_paths
    T = _horizon(game, cfg)
    n_steps = int(round(T / cfg.dt))
    a, b = game.diffusion.geometric
    k0, k1 = (game.intervention.linear[:2] if game.intervention.linear is not None else (0.0, 1.0))
    act_hi = controller.upper if controller.upper is not None else math.inf
    reset = controller.reset if controller.reset is not None else 0.0
    stop_lo = stopper.lower if stopper.lower is not None else -math.inf
    stop_hi = stopper.upper if stopper.upper is not None else math.inf
    sol_lo, sol_hi = game.solvency[0]
    m = cfg.substeps
    out = np.zeros((n_paths, 9))
    st = np.zeros(9)
    args = (m, n_steps, cfg.dt, a, b, cfg.scheme == "euler", game.delta, stop_lo, stop_hi,
            act_hi, reset, k0, k1, sol_lo, sol_hi)
    for i in range(n_paths):
        st[:] = 0.0
        st[_X] = x0
        rng = _stream(cfg.seed, first_index + i, 0)
        _gbm_kernel(st, rng, *args)
        out[i] = st
    disc = np.exp(-game.delta * out[:, _TSTOP])
    pays = []
    for k in range(len(game.payoffs)):
        c0, c1 = _affine_term(game, k)
        G = game.payoffs[k].G(out[:, _X].reshape(-1, 1))
        pays.append(disc * G + c0 * out[:, _S0] + c1 * out[:, _S1])
    return FastPaths(out[:, _X], out[:, _TSTOP], out[:, _REASON].astype(np.int8),
                     out[:, _NIMP].astype(np.int64), out[:, _S0], out[:, _S1], out[:, _LAND],
                     np.stack(pays, axis=1))


# ---------------------------------------------------------------------------
# estimators

@dataclass
class PayoffEstimate:
    mean: np.ndarray        # per player
    stderr: np.ndarray
    n_paths: int
    n_aborted: int
    samples: Optional[np.ndarray] = None
    landing_error: float = 0.0
    mean_interventions: float = 0.0

    def __str__(self):
        return ", ".join(f"player {k}: {m:.6g} +- {s:.2g}"
                         for k, (m, s) in enumerate(zip(self.mean, self.stderr)))


def _summarise(samples: np.ndarray, aborted: np.ndarray, **kw) -> PayoffEstimate:
    n = samples.shape[0]
    n_ab = int(np.sum(aborted))
    if n_ab > 0.01 * n:
        raise SimulationError(f"{n_ab} of {n} paths aborted (non-finite state)")
    good = samples[~aborted]
    mean = good.mean(axis=0)
    se = good.std(axis=0, ddof=1) / math.sqrt(good.shape[0]) if good.shape[0] > 1 else 0 * mean
    return PayoffEstimate(mean, se, n, n_ab, samples, **kw)


def simulate_paths(game, controller, stopper, cfg, x0, first_index: int = 0) -> list:
    return [simulate_path(game, controller, stopper, cfg, first_index + i, x0)
            for i in range(cfg.n_paths)]


def estimate_payoff(game: GameSpec, controller: ThresholdImpulsePolicy, stopper: StopPolicy,
                    cfg: SimulationConfig, x0, fast: Optional[bool] = None) -> PayoffEstimate:
    """Sample mean and standard error of the realised payoff of each player."""
    if cfg.n_paths < 100:
        raise SimulationError("estimate_payoff needs at least 100 paths")
    if fast is None:
        fast = _fast_eligible(game, controller, stopper) and not cfg.record_paths
    if fast:
        fp = run_fast(game, controller, stopper, cfg, float(np.asarray(x0).reshape(-1)[0]))
        return _summarise(fp.payoff, fp.reason == ABORTED,
                          landing_error=float(fp.landing_error.max(initial=0.0)),
                          mean_interventions=float(fp.n_impulses.mean()))
    recs = simulate_paths(game, controller, stopper, cfg, x0)
    samples = np.array([r.payoff for r in recs])
    aborted = np.array([r.exit_reason == "aborted" for r in recs])
    for r in recs:
        if r.error:
            log.warning("path %d aborted: %s", r.index, r.error)
    return _summarise(samples, aborted,
                      mean_interventions=float(np.mean([r.n_interventions for r in recs])))


@dataclass
class BiasEstimate:
    coarse: float
    fine: float
    bias: float        # estimated error of the coarse estimate
    stderr: float      # standard error of the paired difference


def dt_bias(game, controller, stopper, cfg: SimulationConfig, x0, player: int = 0,
            n_paths: Optional[int] = None) -> BiasEstimate:
    """Richardson estimate of the O(dt) bias at ``cfg.dt``.

    Runs ``dt`` and ``dt/2`` on the same Brownian paths (the coarse step sums
    two fine increments) and returns ``2 (m_dt - m_dt/2)``.
    """
    n = n_paths or cfg.n_paths
    base = dict(n_paths=n, seed=cfg.seed, scheme=cfg.scheme, horizon=cfg.horizon)
    fine = SimulationConfig(dt=cfg.dt / 2, substeps=1, **base)
    coarse = SimulationConfig(dt=cfg.dt, substeps=2, **base)
    x = float(np.asarray(x0).reshape(-1)[0])
    pc = run_fast(game, controller, stopper, coarse, x).payoff[:, player]
    pf = run_fast(game, controller, stopper, fine, x).payoff[:, player]
    d = pc - pf
    return BiasEstimate(float(pc.mean()), float(pf.mean()), float(2 * d.mean()),
                        float(2 * d.std(ddof=1) / math.sqrt(n)))


# ---------------------------------------------------------------------------
# deviation experiments

@dataclass
class Deviation:
    label: str
    player: int                  # 0 controller, 1 stopper
    controller: ThresholdImpulsePolicy
    stopper: StopPolicy


@dataclass
class DeviationRow:
    label: str
    player: str
    equilibrium: float
    deviation: float
    advantage: float        # equilibrium minus deviation, in the deviating player's favour
    paired_stderr: float
    holds: bool


def _player_sense(game: GameSpec, player: int) -> tuple:
    """(payoff index, sense) of the deviating player."""
    if game.zero_sum:
        pay = game.payoff
        return 0, pay.controller_sense if player == 0 else pay.stopper_sense
    pay = game.payoffs[player]
    return player, pay.controller_sense if player == 0 else pay.stopper_sense


def deviation_test(game: GameSpec, equilibrium: tuple, deviations: Sequence[Deviation],
                   cfg: SimulationConfig, x0, n_se: float = 3.0) -> list:
    """Paired comparison of each unilateral deviation with the equilibrium.

    Every run uses the same seed, so path ``i`` sees the same noise under all
    policies.  A deviation passes when the equilibrium is no worse for the
    deviating player than the deviation, within ``n_se`` paired standard errors.
    """
    ctrl, stop = equilibrium
    x = float(np.asarray(x0).reshape(-1)[0])
    base = _samples(game, ctrl, stop, cfg, x)
    rows = []
    for dev in deviations:
        k, sense = _player_sense(game, dev.player)
        other = _samples(game, dev.controller, dev.stopper, cfg, x)
        diff = base[:, k] - other[:, k]
        if sense == MINIMIZE:
            diff = -diff
        se = float(diff.std(ddof=1) / math.sqrt(len(diff)))
        adv = float(diff.mean())
        rows.append(DeviationRow(dev.label, "controller" if dev.player == 0 else "stopper",
                                 float(base[:, k].mean()), float(other[:, k].mean()),
                                 adv, se, adv >= -n_se * se))
    return rows


def _samples(game, ctrl, stop, cfg, x):
    if _fast_eligible(game, ctrl, stop):
        return run_fast(game, ctrl, stop, cfg, x).payoff
    return np.array([r.payoff for r in simulate_paths(game, ctrl, stop, cfg, x)])


def threshold_deviations(game: GameSpec, upper: float, reset: float, lower: float,
                         factors=(0.75, 0.9, 1.1, 1.25)) -> list:
    """Rescaled intervention and stopping thresholds, one player at a time."""
    from .model import lower_stop_policy, reset_policy
    eq_ctrl = reset_policy(game, upper, reset)
    eq_stop = lower_stop_policy(lower)
    devs = [Deviation(f"intervention threshold x{f:g}", 0, reset_policy(game, upper * f, reset),
                      eq_stop) for f in factors]
    devs += [Deviation(f"stopping threshold x{f:g}", 1, eq_ctrl, lower_stop_policy(lower * f))
             for f in factors]
    return devs


# ---------------------------------------------------------------------------
# investor problem

@dataclass
class InvestorPaths:
    payoff: np.ndarray
    exit_time: np.ndarray
    exit_reason: np.ndarray     # STOPPED / HORIZON
    n_injections: np.ndarray
    y1: np.ndarray              # state at exit
    y2: np.ndarray
    y3: np.ndarray
    post_injection_y2: np.ndarray   # worst |Y2 - y_hat| right after an injection
    exit_overshoot: np.ndarray      # omega_star - omega at exit (>= 0 when stopped)
    injection_cash: np.ndarray      # discounted injection cash flows per path

    def estimate(self) -> PayoffEstimate:
        return _summarise(self.payoff.reshape(-1, 1), np.zeros(len(self.payoff), dtype=bool),
                          mean_interventions=float(self.n_injections.mean()))


# output slots of the investor kernel
_IY1, _IY2, _IY3, _IT, _IREASON, _INJ, _IPOST, _IOVER, _ICASH, _IPAY = range(10)


@njit(cache=True)
def _investor_kernel(out, rng, jrng, y1, y2, y3, n_steps, dt, delta, mu1, sf, mu2, s2,
                     marks, rates, thetas, omega_star, y_tilde, y_hat, alpha, kappa, g1, g2, lam):
    """One investor path; logs of ``Y1``, ``Y2``, ``Y3`` are advanced exactly."""
    l1, l2, l3 = math.log(y1), math.log(y2), math.log(y3)
    d1 = (mu1 - 0.5 * sf * sf) * dt
    d3 = -0.5 * sf * sf * dt
    for j in range(len(rates)):
        d3 += rates[j] * thetas[j] * dt
    d2 = (mu2 - 0.5 * s2 * s2) * dt
    lw = math.log(omega_star) if omega_star > 0 else -math.inf
    lyt = math.log(y_tilde)
    na = len(rates)
    clock = np.empty(na)
    for j in range(na):
        clock[j] = jrng.exponential(1.0 / rates[j]) if rates[j] > 0 else math.inf
    cash = 0.0
    n = 0
    while True:
        t = n * dt
        disc = math.exp(-delta * t)
        if l1 + l3 <= lw:
            om = math.exp(l1 + l3)
            y2v = math.exp(l2)
            out[_IPAY] = cash + disc * (g1 * om + lam + g2 * y2v)
            out[_IOVER] = omega_star - om
            out[_IREASON] = 0.0
            break
        if l2 >= lyt:
            y2v = math.exp(l2)
            z = y2v - y_hat
            cash += disc * (alpha * z - kappa)
            out[_INJ] += 1.0
            err = abs((y2v - z) - y_hat)
            if err > out[_IPOST]:
                out[_IPOST] = err
            l2 = math.log(y_hat)
        if n >= n_steps:
            out[_IPAY] = cash + disc * (g1 * math.exp(l1 + l3) + lam + g2 * math.exp(l2))
            out[_IREASON] = 2.0
            break
        wf = rng.standard_normal() * math.sqrt(dt)
        wi = rng.standard_normal() * math.sqrt(dt)
        n += 1
        l1 += d1 + sf * wf
        l3 += d3 - sf * wf
        l2 += d2 + s2 * wi
        tn = n * dt
        for j in range(na):
            while clock[j] <= tn:
                l1 += math.log(1.0 + marks[j])
                l3 += math.log(1.0 - thetas[j])
                clock[j] += jrng.exponential(1.0 / rates[j])
    out[_IY1] = math.exp(l1)
    out[_IY2] = math.exp(l2)
    out[_IY3] = math.exp(l3)
    out[_IT] = n * dt
    out[_ICASH] = cash


def simulate_investor(params, sol, cfg: SimulationConfig, y1: float, y2: float,
                      y3: float = 1.0, first_index: int = 0) -> InvestorPaths:
    """The investor problem under the closed-form policies.

    Firm liquidity ``Y1`` is a geometric jump-diffusion, investor wealth ``Y2``
    a geometric Brownian motion and ``Y3`` the density process (all stepped
    exactly in logs).  Injections fire when ``Y2 >= y_tilde`` and reset ``Y2``
    to ``y_hat``, paying ``alpha_I z - kappa_I`` with ``z = Y2 - y_hat``.  The
    game ends when ``omega = Y1 Y3 <= omega_star`` or at the horizon, paying
    ``g1 omega + lambda_T + g2 Y2``.
    """
    p = params
    T = _horizon_value(p.T, cfg)
    n_steps = int(round(T / cfg.dt))
    marks = np.array(p.jump_marks if p.has_jumps else (), dtype=float)
    rates = np.array(p.jump_rates if p.has_jumps else (), dtype=float)
    thetas = np.array(sol.theta1 if p.has_jumps else (), dtype=float)
    mu1 = p.e * p.r - float(np.sum(marks * rates))
    s2 = p.pi * p.sigma_I
    res = np.zeros((cfg.n_paths, 10))
    for i in range(cfg.n_paths):
        rng, jrng = path_streams(cfg.seed, first_index + i)
        _investor_kernel(res[i], rng, jrng, float(y1), float(y2), float(y3), n_steps, cfg.dt,
                         p.delta, mu1, p.sigma_f, p.drift, s2, marks, rates, thetas,
                         sol.omega_star, sol.y_tilde, sol.y_hat, p.alpha_I, p.kappa_I,
                         p.g1, p.g2, p.lambda_T)
    return InvestorPaths(res[:, _IPAY], res[:, _IT], res[:, _IREASON].astype(np.int8),
                         res[:, _INJ].astype(np.int64), res[:, _IY1], res[:, _IY2], res[:, _IY3],
                         res[:, _IPOST], res[:, _IOVER], res[:, _ICASH])


def _horizon_value(T, cfg):
    return T if cfg.horizon is None else cfg.horizon


def q_martingale_mc(sigma_f: float, T: float, n_paths: int, n_steps: int = 1, seed: int = 0,
                    thetas=(), rates=(), q0: float = 1.0) -> tuple:
    """Monte Carlo ``(mean, stderr)`` of ``Q(T)`` from exact steps."""
    from .closedform import q_process_step
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 7])))
    dt = T / n_steps
    q = np.full(n_paths, float(q0))
    for _ in range(n_steps):
        dW = math.sqrt(dt) * rng.standard_normal(n_paths)
        counts = rng.poisson(np.array(rates) * dt, size=(n_paths, len(rates))) if rates else None
        q = q_process_step(q, dt, dW, sigma_f, counts, thetas, rates)
    return float(q.mean()), float(q.std(ddof=1) / math.sqrt(n_paths))


def write_path_csv(path, records: Sequence[PathRecord]) -> None:
    """One row per event: time, state, event type, cash flow (player 0)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        dim = len(records[0].stop_state) if records else 1
        fh.write("path,time," + ",".join(f"x{k}" for k in range(dim)) + ",event,cashflow\n")
        for r in records:
            for (t, xi, _before, after) in r.interventions:
                fh.write(f"{r.index},{t:.17g}," + ",".join(f"{v:.17g}" for v in after)
                         + f",impulse,{xi:.17g}\n")
            fh.write(f"{r.index},{r.stop_time:.17g},"
                     + ",".join(f"{v:.17g}" for v in r.stop_state)
                     + f",{r.exit_reason},{r.payoff[0]:.17g}\n")
