"""Problem specification types shared by the solvers.

Conventions used throughout the package:

* States are arrays of shape ``(n, p)``; coefficient callables are vectorised
  over the leading axis.
* Payoff ingredients are stored in stationary form.  The time-dependent
  versions are ``e^{-delta t}`` times the stationary ones, so a value function
  reads ``phi(t, x) = e^{-delta t} psi(x)``.
* An impulse ``z`` moves the state to ``response(x, z)`` and costs ``cost(z)``.
  A minimising controller adds the cost to its payoff, a maximising one
  subtracts it.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

MINIMIZE = "minimize"
MAXIMIZE = "maximize"
SENSES = (MINIMIZE, MAXIMIZE)

Array = np.ndarray


class SpecError(ValueError):
    """Raised for malformed or non-finite problem specifications."""


def _as_states(x, p: int) -> Array:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, p) if p > 1 else x.reshape(-1, 1)
    return x


@dataclass(frozen=True)
class LevyDiffusionSpec:
    """Coefficients of the controlled jump-diffusion.

    ``drift(t, x) -> (n, p)``, ``volatility(t, x) -> (n, p, m)`` and
    ``jump_amplitude(x, z) -> (n, p)``.  The Levy measure is a finite list of
    ``(mark, intensity)`` atoms.  ``geometric`` optionally records ``(alpha,
    beta)`` when the dynamics are a one-dimensional geometric Brownian motion,
    which enables the exact exponential step in the simulator.
    """

    dimension: int
    drift: Callable[[float, Array], Array]
    volatility: Callable[[float, Array], Array]
    jump_amplitude: Optional[Callable[[Array, float], Array]] = None
    levy_measure: tuple = ()
    horizon: float = 1.0
    geometric: Optional[tuple] = None
    lipschitz: Optional[tuple] = None  # (c_mu, c_sigma)
    growth: Optional[tuple] = None  # (d_mu, d_sigma)

    def __post_init__(self):
        if self.dimension < 1:
            raise SpecError("dimension must be a positive integer")
        if not self.horizon > 0:
            raise SpecError("horizon must be positive")
        atoms = tuple((float(z), float(nu)) for z, nu in self.levy_measure)
        object.__setattr__(self, "levy_measure", atoms)
        for _, nu in atoms:
            if not (nu >= 0 and math.isfinite(nu)):
                raise SpecError(f"Levy intensity {nu} must be finite and nonnegative")
        if atoms and self.jump_amplitude is None:
            raise SpecError("jump atoms given without a jump amplitude")

    @property
    def total_intensity(self) -> float:
        return float(sum(nu for _, nu in self.levy_measure))

    def mu(self, t: float, x) -> Array:
        x = _as_states(x, self.dimension)
        return np.asarray(self.drift(t, x), dtype=float).reshape(x.shape)

    def sigma(self, t: float, x) -> Array:
        x = _as_states(x, self.dimension)
        s = np.asarray(self.volatility(t, x), dtype=float)
        return s.reshape(x.shape[0], self.dimension, -1)

    def gamma(self, x, z: float) -> Array:
        x = _as_states(x, self.dimension)
        return np.asarray(self.jump_amplitude(x, z), dtype=float).reshape(x.shape)


def gbm(alpha: float, beta: float, horizon: float = 1.0) -> LevyDiffusionSpec:
    """One-dimensional geometric Brownian motion ``dX = aX dt + bX dB``."""
    return LevyDiffusionSpec(
        dimension=1,
        drift=lambda t, x: alpha * x,
        volatility=lambda t, x: (beta * x)[:, :, None],
        horizon=horizon,
        geometric=(float(alpha), float(beta)),
        lipschitz=(abs(alpha), abs(beta)),
        growth=(abs(alpha), abs(beta)),
    )


@dataclass(frozen=True)
class InterventionSpec:
    """Impulse set ``[z_lo, z_hi]``, response ``x -> response(x, z)`` and cost.

    ``linear`` optionally records ``(k0, k1, c0, c1)`` for responses of the
    form ``x - k0 - k1 z`` with cost ``c0 + c1 z`` (first coordinate only).
    """

    impulse_set: tuple
    response: Callable[[Array, Array], Array]
    cost: Callable[[Array], Array]
    cost_floor: float
    linear: Optional[tuple] = None

    def __post_init__(self):
        lo, hi = (float(v) for v in self.impulse_set)
        if lo < 0 or hi < lo:
            raise SpecError(f"impulse set [{lo}, {hi}] must satisfy 0 <= z_lo <= z_hi")
        object.__setattr__(self, "impulse_set", (lo, hi))

    def apply(self, x: Array, z) -> Array:
        x = np.asarray(x, dtype=float)
        z = np.broadcast_to(np.asarray(z, dtype=float), x.shape[:1])
        return np.asarray(self.response(x, z), dtype=float).reshape(x.shape)

    def c(self, z) -> Array:
        return np.asarray(self.cost(np.asarray(z, dtype=float)), dtype=float)


def proportional_intervention(kappa: float, lam: float, z_max: float = math.inf,
                              reward: bool = True) -> InterventionSpec:
    """Response ``x - kappa - (1 + lam) z``; the impulse itself is the reward.

    With ``reward=True`` the cost is ``-z`` (the controller receives ``z``),
    otherwise the cost is ``kappa + (1 + lam) z``.
    """
    def response(x, z):
        y = x.copy()
        y[:, 0] = x[:, 0] - kappa - (1.0 + lam) * z
        return y

    if reward:
        return InterventionSpec((0.0, z_max), response, lambda z: -z, cost_floor=kappa,
                                linear=(kappa, 1.0 + lam, 0.0, -1.0))
    return InterventionSpec((0.0, z_max), response, lambda z: kappa + (1.0 + lam) * z,
                            cost_floor=kappa, linear=(kappa, 1.0 + lam, kappa, 1.0 + lam))


@dataclass(frozen=True)
class PayoffSpec:
    """Stationary payoff ingredients of one player.

    ``running(x)`` and ``bequest(x)`` are the time-zero running rate and
    terminal payment; the time-``t`` versions carry ``e^{-delta t}``.
    ``impulse_term(z)`` is what one impulse adds to this player's payoff; when
    omitted it is ``+cost`` for a minimising and ``-cost`` for a maximising
    controller.  ``linear_bequest`` optionally records ``(g0, g1)`` for
    ``bequest(x) = g0 + g1 x``.
    """

    running: Callable[[Array], Array]
    bequest: Callable[[Array], Array]
    discount: float
    controller_sense: str = MINIMIZE
    stopper_sense: str = MAXIMIZE
    impulse_term: Optional[Callable[[Array], Array]] = None
    linear_bequest: Optional[tuple] = None
    zero_running: bool = False

    def __post_init__(self):
        if not (0 < self.discount <= 1):
            raise SpecError(f"discount {self.discount} must lie in (0, 1]")
        for s in (self.controller_sense, self.stopper_sense):
            if s not in SENSES:
                raise SpecError(f"unknown sense {s!r}")

    def f(self, x: Array) -> Array:
        return np.broadcast_to(np.asarray(self.running(x), dtype=float), x.shape[:1]).copy()

    def G(self, x: Array) -> Array:
        return np.broadcast_to(np.asarray(self.bequest(x), dtype=float), x.shape[:1]).copy()

    def running_at(self, t: float, x: Array) -> Array:
        return math.exp(-self.discount * t) * self.f(x)

    def bequest_at(self, t: float, x: Array) -> Array:
        return math.exp(-self.discount * t) * self.G(x)


@dataclass(frozen=True)
class GameSpec:
    """A controller-stopper game.

    ``payoffs`` holds one spec (zero-sum) or two (non-zero-sum: the
    controller's then the stopper's).  ``solvency`` is a box ``((lo, hi), ...)``
    per coordinate; leaving it ends the game.
    """

    diffusion: LevyDiffusionSpec
    intervention: InterventionSpec
    payoffs: tuple
    solvency: tuple

    def __post_init__(self):
        pays = self.payoffs if isinstance(self.payoffs, tuple) else (self.payoffs,)
        object.__setattr__(self, "payoffs", pays)
        if len(pays) not in (1, 2):
            raise SpecError("a game carries one (zero-sum) or two payoff specs")
        if len(pays) == 1 and pays[0].controller_sense == pays[0].stopper_sense:
            raise SpecError("zero-sum mode requires opposite player senses")
        box = tuple((float(lo), float(hi)) for lo, hi in self.solvency)
        if len(box) != self.diffusion.dimension:
            raise SpecError("solvency box dimension does not match the state dimension")
        object.__setattr__(self, "solvency", box)

    @property
    def zero_sum(self) -> bool:
        return len(self.payoffs) == 1

    @property
    def payoff(self) -> PayoffSpec:
        return self.payoffs[0]

    @property
    def delta(self) -> float:
        return self.payoffs[0].discount

    def impulse_term(self, z, player: int = 0) -> Array:
        pay = self.payoffs[player]
        if pay.impulse_term is not None:
            return np.asarray(pay.impulse_term(np.asarray(z, dtype=float)), dtype=float)
        c = self.intervention.c(z)
        return c if self.payoffs[0].controller_sense == MINIMIZE else -c

    def in_solvency(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float).reshape(-1, self.diffusion.dimension)
        ok = np.ones(x.shape[0], dtype=bool)
        for k, (lo, hi) in enumerate(self.solvency):
            ok &= (x[:, k] > lo) & (x[:, k] < hi)
        return ok


def as_nonzero_sum(game: GameSpec) -> GameSpec:
    """Recast a zero-sum game as a non-zero-sum one with ``J2 = -J1``."""
    if not game.zero_sum:
        return game
    p = game.payoff
    flip = MAXIMIZE if p.stopper_sense == MINIMIZE else MINIMIZE
    p1 = PayoffSpec(p.running, p.bequest, p.discount, p.controller_sense, p.controller_sense,
                    impulse_term=lambda z: game.impulse_term(z), zero_running=p.zero_running,
                    linear_bequest=p.linear_bequest)
    p2 = PayoffSpec(lambda x: -np.asarray(p.running(x)), lambda x: -np.asarray(p.bequest(x)),
                    p.discount, p.controller_sense, flip,
                    impulse_term=lambda z: -game.impulse_term(z), zero_running=p.zero_running)
    return GameSpec(game.diffusion, game.intervention, (p1, p2), game.solvency)


# ---------------------------------------------------------------------------
# grids and grid functions

@dataclass(frozen=True)
class Grid:
    """Uniform tensor lattice over a box; nodes ordered C-style (last axis fastest)."""

    lower: tuple
    upper: tuple
    nodes: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        n = tuple(int(v) for v in np.atleast_1d(self.nodes))
        if not (len(lo) == len(hi) == len(n)) or len(n) not in (1, 2):
            raise SpecError("grids are one- or two-dimensional")
        for a, b, m in zip(lo, hi, n):
            if not (b > a and m >= 3 and math.isfinite(a) and math.isfinite(b)):
                raise SpecError(f"bad grid axis [{a}, {b}] with {m} nodes")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "nodes", n)

    @property
    def dim(self) -> int:
        return len(self.nodes)

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def h(self) -> tuple:
        return tuple((b - a) / (m - 1) for a, b, m in zip(self.lower, self.upper, self.nodes))

    @property
    def axes(self) -> tuple:
        return tuple(np.linspace(a, b, m) for a, b, m in zip(self.lower, self.upper, self.nodes))

    @property
    def points(self) -> Array:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def boundary_mask(self, width: int = 1) -> Array:
        idx = np.indices(self.nodes)
        mask = np.zeros(self.nodes, dtype=bool)
        for k, m in enumerate(self.nodes):
            mask |= (idx[k] < width) | (idx[k] >= m - width)
        return mask.ravel()


@dataclass
class GridFunction:
    """Nodal values on a grid plus the rule used at the truncation boundary."""

    grid: Grid
    values: Array
    boundary_policy: str = "dirichlet"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.size)
        if not np.all(np.isfinite(self.values)):
            raise SpecError("grid function has non-finite values")
        if self.boundary_policy not in ("dirichlet", "extrapolate-linear"):
            raise SpecError(f"unknown boundary policy {self.boundary_policy!r}")

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values, self.boundary_policy)


# ---------------------------------------------------------------------------
# policies

@dataclass(frozen=True)
class ThresholdImpulsePolicy:
    """Act on ``act_region(x)`` with impulse ``target(x)``.

    ``upper``/``reset`` optionally describe the one-dimensional rule "act when
    x >= upper and land on reset", which the fast simulator uses.
    """

    act_region: Callable[[Array], Array]
    target: Callable[[Array], Array]
    upper: Optional[float] = None
    reset: Optional[float] = None


@dataclass(frozen=True)
class StopPolicy:
    """Stop on ``stop_region(x)``; ``lower``/``upper`` describe interval rules."""

    stop_region: Callable[[Array], Array]
    lower: Optional[float] = None
    upper: Optional[float] = None


def never_act() -> ThresholdImpulsePolicy:
    return ThresholdImpulsePolicy(lambda x: np.zeros(len(x), dtype=bool),
                                  lambda x: np.zeros(len(x)), upper=math.inf)


def never_stop() -> StopPolicy:
    return StopPolicy(lambda x: np.zeros(len(x), dtype=bool), lower=-math.inf)


def reset_policy(game: GameSpec, upper: float, reset: float) -> ThresholdImpulsePolicy:
    """Act when ``x >= upper`` and choose the impulse that lands on ``reset``.

    Needs a linear response ``x - k0 - k1 z``.
    """
    if game.intervention.linear is None:
        raise SpecError("reset policies need a linear impulse response")
    k0, k1 = game.intervention.linear[:2]
    return ThresholdImpulsePolicy(
        act_region=lambda x: np.asarray(x, dtype=float).reshape(len(x), -1)[:, 0] >= upper,
        target=lambda x: (np.asarray(x, dtype=float).reshape(len(x), -1)[:, 0] - reset - k0) / k1,
        upper=float(upper), reset=float(reset))


def lower_stop_policy(lower: float) -> StopPolicy:
    return StopPolicy(lambda x: np.asarray(x, dtype=float).reshape(len(x), -1)[:, 0] <= lower,
                      lower=float(lower))


# ---------------------------------------------------------------------------
# validation of the standing assumptions

@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    value: Optional[float] = None


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list:
        return [c.name for c in self.checks if not c.passed]

    def __str__(self) -> str:
        return "\n".join(f"{c.name:22s} {'pass' if c.passed else 'FAIL'}  {c.detail}"
                         for c in self.checks)


def _sample_box(rng, box, n):
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    lo = np.where(np.isfinite(lo), lo, -1e3)
    hi = np.where(np.isfinite(hi), hi, 1e3)
    return lo + (hi - lo) * rng.random((n, len(box)))


def validate_spec(spec: GameSpec, n_samples: int = 10_000, seed: int = 0,
                  domain: Optional[Sequence] = None) -> ValidationReport:
    """Sampled checks of the regularity and cost assumptions.

    ``domain`` is the sampling box (defaults to the solvency box clipped to
    +-1e3).  Non-finite coefficients raise :class:`SpecError`.
    """
    rng = np.random.default_rng(seed)
    d = spec.diffusion
    box = domain if domain is not None else spec.solvency
    x = _sample_box(rng, box, n_samples)
    y = _sample_box(rng, box, n_samples)
    T = d.horizon
    t = rng.random(n_samples) * T
    rep = ValidationReport()

    mx, my = d.mu(0.0, x), d.mu(0.0, y)
    sx, sy = d.sigma(0.0, x), d.sigma(0.0, y)
    for arr in (mx, my, sx, sy):
        if not np.all(np.isfinite(arr)):
            raise SpecError("non-finite drift or volatility on the sampled domain")
    gx = np.zeros_like(x)
    gy = np.zeros_like(y)
    for z, nu in d.levy_measure:
        jx, jy = d.gamma(x, z), d.gamma(y, z)
        if not (np.all(np.isfinite(jx)) and np.all(np.isfinite(jy))):
            raise SpecError("non-finite jump amplitude on the sampled domain")
        gx += nu * jx ** 2
        gy += nu * jy ** 2

    dist = np.linalg.norm(x - y, axis=1)
    ok = dist > 0
    lip_mu = np.max(np.linalg.norm(mx - my, axis=1)[ok] / dist[ok])
    lip_sig = np.max(np.sqrt(np.sum((sx - sy) ** 2, axis=(1, 2))[ok]
                             + np.sum((np.sqrt(gx) - np.sqrt(gy)) ** 2, axis=1)[ok]) / dist[ok])
    if d.lipschitz is not None:
        c_mu, c_sig = d.lipschitz
        passed = lip_mu <= c_mu * (1 + 1e-9) + 1e-12 and lip_sig <= c_sig * (1 + 1e-9) + 1e-12
        rep.checks.append(Check("lipschitz", bool(passed),
                                f"ratios {lip_mu:.4g}, {lip_sig:.4g} vs bounds {c_mu:.4g}, {c_sig:.4g}"))
    else:
        rep.checks.append(Check("lipschitz", bool(np.isfinite(lip_mu) and np.isfinite(lip_sig)),
                                f"sampled ratios {lip_mu:.4g}, {lip_sig:.4g} (no bounds supplied)"))
    norm1 = 1.0 + np.linalg.norm(x, axis=1)
    gr_mu = np.max(np.linalg.norm(mx, axis=1) / norm1)
    gr_sig = np.max(np.sqrt(np.sum(sx ** 2, axis=(1, 2)) + np.sum(gx, axis=1)) / norm1)
    if d.growth is not None:
        d_mu, d_sig = d.growth
        passed = gr_mu <= d_mu * (1 + 1e-9) + 1e-12 and gr_sig <= d_sig * (1 + 1e-9) + 1e-12
        rep.checks.append(Check("linear_growth", bool(passed),
                                f"ratios {gr_mu:.4g}, {gr_sig:.4g} vs bounds {d_mu:.4g}, {d_sig:.4g}"))
    else:
        rep.checks.append(Check("linear_growth", True,
                                f"sampled ratios {gr_mu:.4g}, {gr_sig:.4g} (no bounds supplied)"))

    nus = [nu for _, nu in d.levy_measure]
    rep.checks.append(Check("levy_intensity", all(nu >= 0 for nu in nus) and math.isfinite(sum(nus)),
                            f"total intensity {sum(nus):.6g}"))

    # cost assumptions on c(t, z) = e^{-delta t} cost(z)
    iv = spec.intervention
    delta = spec.delta
    zlo, zhi = iv.impulse_set
    zcap = zhi if math.isfinite(zhi) else zlo + 1e3
    z = zlo + (zcap - zlo) * rng.random(n_samples)
    z[:2] = zlo
    t[:2] = T
    cz = iv.c(z)
    if not np.all(np.isfinite(cz)):
        raise SpecError("non-finite intervention cost on the sampled impulses")
    # the floor of c(t, z) over [0, T] is e^{-delta T} times the floor of cost(z)
    raw = float(np.min(cz))
    lam_c = math.exp(-delta * T) * raw
    ok_floor = iv.cost_floor > 0 and raw >= iv.cost_floor * (1 - 1e-12) and lam_c > 0
    rep.checks.append(Check("cost_floor", bool(ok_floor),
                            f"lambda_c = {lam_c:.6g} (min sampled cost {raw:.6g}, "
                            f"declared floor {iv.cost_floor:.6g})", lam_c))
    s2 = t + rng.random(n_samples) * (T - t)
    mono = np.all(np.exp(-delta * t) * cz >= np.exp(-delta * s2) * cz - 1e-12 * (1 + np.abs(cz)))
    rep.checks.append(Check("cost_monotone_time", bool(mono), "c(s,z) >= c(s',z) for s <= s'"))
    z2 = zlo + (zcap - zlo) * rng.random(n_samples)
    zs = z + z2
    feas = zs <= zcap
    sub = np.all(iv.c(zs[feas]) <= cz[feas] + iv.c(z2[feas]) + 1e-12 * (1 + np.abs(cz[feas])))
    rep.checks.append(Check("cost_subadditive", bool(sub), "c(z+z') <= c(z)+c(z')"))

    for k, pay in enumerate(spec.payoffs):
        gb = pay.G(x)
        if not np.all(np.isfinite(gb)):
            raise SpecError("non-finite bequest on the sampled domain")
        late = math.exp(-pay.discount * 1e4) * np.max(np.abs(gb))
        rep.checks.append(Check(f"bequest_decay[{k}]", bool(late < 1e-8),
                                f"max |G(1e4, x)| = {late:.3g}"))
    if spec.zero_sum:
        p = spec.payoff
        rep.checks.append(Check("senses", p.controller_sense != p.stopper_sense,
                                f"{p.controller_sense}/{p.stopper_sense}"))
    return rep


def require_valid(spec: GameSpec, force: bool = False, **kw) -> ValidationReport:
    """Validate and refuse a failing spec unless ``force`` is set."""
    rep = validate_spec(spec, **kw)
    if not rep.passed and not force:
        raise SpecError("spec fails assumption checks: " + ", ".join(rep.failures()))
    return rep


# ---------------------------------------------------------------------------
# config documents

CONFIG_SECTIONS = ("diffusion", "intervention", "payoff", "grid", "simulation")


def load_config(path) -> configparser.ConfigParser:
    """Read a sectioned ``key = value`` document and check the section names."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except FileNotFoundError:
        raise
    except configparser.Error as exc:
        raise SpecError(f"config parse error: {exc}") from exc
    for sec in cp.sections():
        if sec not in CONFIG_SECTIONS:
            raise SpecError(f"[{sec}]: unknown section")
    for sec in ("diffusion", "payoff"):
        if not cp.has_section(sec):
            raise SpecError(f"[{sec}]: missing section")
    return cp


def get_float(cp: configparser.ConfigParser, section: str, key: str,
              default: Optional[float] = None) -> float:
    if not cp.has_option(section, key):
        if default is None:
            raise SpecError(f"{section}.{key}: missing")
        return float(default)
    raw = cp.get(section, key)
    try:
        return float(raw)
    except ValueError:
        raise SpecError(f"{section}.{key}: not a number: {raw!r}") from None


def get_floats(cp: configparser.ConfigParser, section: str, key: str,
               default: Optional[Sequence[float]] = None) -> list:
    if not cp.has_option(section, key):
        if default is None:
            raise SpecError(f"{section}.{key}: missing")
        return [float(v) for v in default]
    raw = cp.get(section, key).strip()
    if not raw:
        return []
    try:
        return [float(v) for v in raw.split(",")]
    except ValueError:
        raise SpecError(f"{section}.{key}: not a number list: {raw!r}") from None
