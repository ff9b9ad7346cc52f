"""Config-driven pipelines: solve, simulate and verify.

Everything here composes library calls; the command line only parses
arguments, maps exceptions to exit codes and writes the run manifest.
Configs are validated completely before anything is written.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import closedform as cf
from .model import Grid, GridFunction, SpecError, get_float, get_floats, load_config
from .qvi import LABEL_NAMES, PolicyState, QviProblem, solve_qvi, write_residual_log
from .simulate import (SimulationConfig, dt_bias, deviation_test, estimate_payoff,
                       simulate_investor, threshold_deviations)
from .verify import REGION_NAMES, Certificate, RegionError, check_zero_sum_conditions, classify_regions

log = logging.getLogger(__name__)

MODELS = ("gbm", "investor")
REFERENCE_CONFIGS = ("example1", "investor-nojump", "investor-jump")


class MissingInput(FileNotFoundError):
    pass


class ShapeMismatch(ValueError):
    pass


def reference_config(name: str) -> Path:
    if name not in REFERENCE_CONFIGS:
        raise SpecError(f"unknown example {name!r}; choose from {', '.join(REFERENCE_CONFIGS)}")
    return Path(str(resources.files("impulse_stopper") / "configs" / f"{name}.cfg"))


# ---------------------------------------------------------------------------
# settings

@dataclass(frozen=True)
class GridSettings:
    lower: tuple
    upper: tuple
    nodes: tuple
    boundary: str = "dirichlet"
    tol: float = 1e-9

    def grid(self) -> Grid:
        return Grid(self.lower, self.upper, self.nodes)


@dataclass(frozen=True)
class SimSettings:
    dt: float = 1e-3
    paths: int = 10_000
    seed: int = 0
    starts: tuple = ()          # explicit start states
    n_starts: int = 5           # used when ``starts`` is empty
    bias_paths: int = 0
    deviation_paths: int = 0
    policy: Optional[Path] = None


@dataclass(frozen=True)
class Setup:
    model: str
    params: object
    grid: GridSettings
    sim: SimSettings
    source: Optional[Path] = None
    smooth_fit: bool = False


def _positive(cp, sec, key, default=None, allow_zero=False):
    v = get_float(cp, sec, key, default)
    if not math.isfinite(v) or v < 0 or (v == 0 and not allow_zero):
        raise SpecError(f"{sec}.{key}: must be {'nonnegative' if allow_zero else 'positive'}, got {v}")
    return v


def _count(cp, sec, key, default):
    raw = cp.get(sec, key, fallback=None)
    if raw is None:
        return int(default)
    try:
        v = int(float(raw))
    except ValueError:
        raise SpecError(f"{sec}.{key}: not an integer: {raw!r}") from None
    if v != float(raw) or v < 0:
        raise SpecError(f"{sec}.{key}: must be a nonnegative integer, got {raw!r}")
    return v


def _grid_settings(cp, dim: int) -> GridSettings:
    if not cp.has_section("grid"):
        raise SpecError("[grid]: missing section")
    lower = tuple(get_floats(cp, "grid", "lower"))
    upper = tuple(get_floats(cp, "grid", "upper"))
    raw_nodes = get_floats(cp, "grid", "nodes")
    for name, v in (("lower", lower), ("upper", upper), ("nodes", raw_nodes)):
        if len(v) != dim:
            raise SpecError(f"grid.{name}: expected {dim} value(s), got {len(v)}")
    if any(int(n) != n or n < 3 for n in raw_nodes):
        raise SpecError("grid.nodes: need integers >= 3")
    if any(not lo < hi for lo, hi in zip(lower, upper)):
        raise SpecError("grid.upper: must exceed grid.lower on every axis")
    boundary = cp.get("grid", "boundary", fallback="dirichlet").strip()
    if boundary not in ("dirichlet", "extrapolate-linear"):
        raise SpecError(f"grid.boundary: unknown policy {boundary!r}")
    tol = _positive(cp, "grid", "tol", 1e-9)
    return GridSettings(lower, upper, tuple(int(n) for n in raw_nodes), boundary, tol)


def _sim_settings(cp, dim: int, base: Optional[Path]) -> SimSettings:
    sec = "simulation"
    if not cp.has_section(sec):
        return SimSettings()
    seed = _count(cp, sec, "seed", 0)
    if seed >= 2 ** 64:
        raise SpecError("simulation.seed: must fit in 64 bits")
    starts = ()
    if cp.has_option(sec, "start"):
        v = get_floats(cp, sec, "start")
        if len(v) % dim or not v:
            raise SpecError(f"simulation.start: need a multiple of {dim} values")
        starts = tuple(tuple(v[i:i + dim]) for i in range(0, len(v), dim))
    policy = cp.get(sec, "policy", fallback=None)
    if policy is not None:
        policy = Path(policy.strip())
        if base is not None and not policy.is_absolute():
            policy = base.parent / policy
    paths = _count(cp, sec, "paths", 10_000)
    if paths < 100:
        raise SpecError("simulation.paths: need at least 100 paths")
    return SimSettings(dt=_positive(cp, sec, "dt", 1e-3), paths=paths, seed=seed,
                       starts=starts, n_starts=max(1, _count(cp, sec, "starts", 5)),
                       bias_paths=_count(cp, sec, "bias_paths", 0),
                       deviation_paths=_count(cp, sec, "deviation_paths", 0), policy=policy)


def _example1_params(cp):
    smooth = cp.get("intervention", "kappa1", fallback="").strip() == "smooth-fit"
    base = dict(alpha=_positive(cp, "diffusion", "alpha"), beta=_positive(cp, "diffusion", "beta"),
                delta=_positive(cp, "payoff", "delta"), kappa2=_positive(cp, "payoff", "kappa2"),
                lam=_positive(cp, "intervention", "lam"), T=_positive(cp, "diffusion", "horizon", 200.0))
    if base["delta"] > 1:
        raise SpecError("payoff.delta: must lie in (0, 1]")
    if not base["alpha"] < base["delta"]:
        raise SpecError("diffusion.alpha: must be below payoff.delta for a finite value")
    if smooth:
        k1 = cf.smooth_fit_kappa1(cf.Example1Params(kappa1=1.0, **base))
    else:
        k1 = _positive(cp, "intervention", "kappa1")
    return cf.Example1Params(kappa1=k1, **base), smooth


def _investor_params(cp):
    marks = get_floats(cp, "diffusion", "jump_marks", ())
    rates = get_floats(cp, "diffusion", "jump_rates", ())
    if len(marks) != len(rates):
        raise SpecError("diffusion.jump_rates: must have as many entries as diffusion.jump_marks")
    if any(1 + g <= 0 for g in marks):
        raise SpecError("diffusion.jump_marks: need 1 + mark > 0")
    if any(v < 0 for v in rates):
        raise SpecError("diffusion.jump_rates: must be nonnegative")
    delta = _positive(cp, "payoff", "delta")
    if delta > 1:
        raise SpecError("payoff.delta: must lie in (0, 1]")
    p = cf.Example2Params(
        e=_positive(cp, "diffusion", "e"), r=_positive(cp, "diffusion", "r"),
        sigma_f=_positive(cp, "diffusion", "sigma_f"), jump_marks=tuple(marks),
        jump_rates=tuple(rates), sigma_I=_positive(cp, "diffusion", "sigma_I"),
        pi=_positive(cp, "diffusion", "pi"), drift=get_float(cp, "diffusion", "wealth_drift"),
        delta=delta, kappa_I=_positive(cp, "intervention", "kappa_I"),
        alpha_I=_positive(cp, "intervention", "alpha_I"), g1=_positive(cp, "payoff", "g1"),
        g2=_positive(cp, "payoff", "g2"), lambda_T=_positive(cp, "payoff", "lambda_T"),
        T=_positive(cp, "diffusion", "horizon", 50.0))
    try:
        cf.example2_exponent(p)
    except ValueError as exc:
        raise SpecError(f"diffusion: parameters admit no closed-form exponent ({exc})") from None
    return p


def load_setup(path, *, seed=None, paths=None, dt=None, nodes=None, tol=None) -> Setup:
    """Parse and validate a config; CLI overrides replace the file's values."""
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"config file not found: {path}")
    cp = load_config(path)
    model = cp.get("diffusion", "model", fallback="").strip()
    if model not in MODELS:
        raise SpecError(f"diffusion.model: expected one of {', '.join(MODELS)}, got {model!r}")
    for sec in ("intervention", "grid"):
        if not cp.has_section(sec):
            raise SpecError(f"[{sec}]: missing section")
    try:
        if model == "gbm":
            params, smooth = _example1_params(cp)
            dim = 1
        else:
            params, smooth = _investor_params(cp), False
            dim = 2
    except (ValueError, ArithmeticError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(f"{'intervention' if model == 'gbm' else 'diffusion'}: {exc}") from None
    grid = _grid_settings(cp, dim)
    sim = _sim_settings(cp, dim, path)
    if nodes is not None:
        if nodes < 3:
            raise SpecError("--grid: need at least 3 nodes")
        grid = replace(grid, nodes=(int(nodes),) * dim)
    if tol is not None:
        if not tol > 0:
            raise SpecError("--tol: must be positive")
        grid = replace(grid, tol=float(tol))
    if seed is not None:
        if not 0 <= seed < 2 ** 64:
            raise SpecError("--seed: must be an unsigned 64-bit integer")
        sim = replace(sim, seed=int(seed))
    if paths is not None:
        if paths < 100:
            raise SpecError("--paths: need at least 100 paths")
        sim = replace(sim, paths=int(paths), deviation_paths=min(sim.deviation_paths, int(paths)) or 0,
                      bias_paths=min(sim.bias_paths, int(paths)))
    if dt is not None:
        if not dt > 0:
            raise SpecError("--dt: must be positive")
        sim = replace(sim, dt=float(dt))
    return Setup(model, params, grid, sim, path, smooth)


# ---------------------------------------------------------------------------
# csv helpers

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v) + 0.0, ".17g")
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# model assembly

@dataclass
class Model:
    setup: Setup
    game: object
    solution: object           # closed-form solution
    grid: Grid

    def closed_value(self) -> np.ndarray:
        X = self.grid.points
        if self.setup.model == "gbm":
            return cf.example1_psi(self.solution, X[:, 0])
        return cf.investor_reduced_value(self.solution, X[:, 0], X[:, 1])

    def problem(self) -> QviProblem:
        return QviProblem(self.game, self.grid, self.setup.grid.boundary)

    def coord_names(self) -> tuple:
        return ("x",) if self.setup.model == "gbm" else ("y2", "omega")


def build_model(setup: Setup) -> Model:
    grid = setup.grid.grid()
    if setup.model == "gbm":
        sol = cf.example1_solve(setup.params)
        game = cf.example1_game(setup.params)
    else:
        sol = cf.example2_solve(setup.params)
        game = cf.investor_reduced_game(sol)
    return Model(setup, game, sol, grid)


# ---------------------------------------------------------------------------
# solve

@dataclass
class SolveResult:
    model: Model
    phi: GridFunction
    state: PolicyState
    closed: Optional[np.ndarray]
    constants: dict = field(default_factory=dict)


def run_solve(setup: Setup, grid_only: bool = False) -> SolveResult:
    m = build_model(setup)
    phi, state = solve_qvi(m.problem(), tol=setup.grid.tol)
    log.info("grid solver: %d iterations, labels %s", state.iterations, state.counts())
    if grid_only:
        return SolveResult(m, phi, state, None)
    consts = dict(m.solution.constants())
    if setup.model == "gbm":
        consts["kappa1"] = setup.params.kappa1
    return SolveResult(m, phi, state, m.closed_value(), consts)


def write_solve(out: Path, res: SolveResult) -> list:
    out = Path(out)
    names = res.model.coord_names()
    X = res.model.grid.points
    files = []
    if res.closed is not None:
        cf.write_constants(out / "constants.txt", res.constants)
        files.append("constants.txt")
        header = [*names, "value", "closed_form"]
        rows = [(*x, v, c) for x, v, c in zip(X, res.phi.values, res.closed)]
    else:
        header = [*names, "value"]
        rows = [(*x, v) for x, v in zip(X, res.phi.values)]
    write_csv(out / "value.csv", header, rows)
    write_csv(out / "regions.csv", [*names, "region"],
              [(*x, LABEL_NAMES[int(l)]) for x, l in zip(X, res.state.labels)])
    write_residual_log(out / "residuals.csv", res.state)
    return files + ["value.csv", "regions.csv", "residuals.csv"]


# ---------------------------------------------------------------------------
# verify

def read_value(path, model: Model) -> GridFunction:
    """Load a ``value.csv`` onto the model grid; coordinates must match node by node."""
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"value file not found: {path}")
    header, rows = read_csv(path)
    names = model.coord_names()
    dim = len(names)
    if len(header) < dim + 1 or "value" not in header:
        raise ShapeMismatch(f"{path}: expected columns {', '.join(names)}, value")
    iv = header.index("value")
    try:
        data = np.array([[float(r[k]) for k in range(dim)] + [float(r[iv])] for r in rows])
    except (ValueError, IndexError):
        raise ShapeMismatch(f"{path}: non-numeric or short rows") from None
    g = model.grid
    if data.shape[0] != g.size:
        raise ShapeMismatch(f"{path}: {data.shape[0]} rows for a grid of {g.size} nodes")
    h = np.array(g.h)
    if np.any(np.abs(data[:, :dim] - g.points) > 1e-9 * np.maximum(1.0, np.abs(g.points)) + 1e-6 * h):
        raise ShapeMismatch(f"{path}: node coordinates differ from the config grid")
    return GridFunction(g, data[:, dim], model.setup.grid.boundary)


@dataclass
class VerifyResult:
    certificate: Optional[Certificate]
    region_error: str = ""

    @property
    def passed(self) -> bool:
        return self.certificate is not None and self.certificate.passed

    def report(self) -> str:
        if self.certificate is None:
            return f"region classification failed: {self.region_error}\noverall FAIL\n"
        return self.certificate.to_text()


def run_verify(setup: Setup, value_path, tol: Optional[float] = None) -> VerifyResult:
    m = build_model(setup)
    phi = read_value(value_path, m)
    try:
        rm = classify_regions(phi, m.game)
    except RegionError as exc:
        return VerifyResult(None, str(exc))
    return VerifyResult(check_zero_sum_conditions(phi, m.game, tol=tol, region_map=rm))


def write_regions(out: Path, m: Model, labels) -> None:
    write_csv(Path(out) / "classified_regions.csv", [*m.coord_names(), "region"],
              [(*x, REGION_NAMES[int(l)]) for x, l in zip(m.grid.points, labels)])


# ---------------------------------------------------------------------------
# simulate

def load_policy(setup: Setup, sol) -> dict:
    """Thresholds from a constants file when configured, else from the closed form."""
    if setup.sim.policy is not None:
        if not Path(setup.sim.policy).is_file():
            raise MissingInput(f"policy file not found: {setup.sim.policy}")
        c = cf.read_constants(setup.sim.policy)
        need = ("x_hat", "x_tilde", "x_star_low") if setup.model == "gbm" else (
            "omega_star", "y_tilde", "y_hat")
        missing = [k for k in need if k not in c]
        if missing:
            raise SpecError(f"simulation.policy: missing {', '.join(missing)}")
        return c
    return sol.constants()


def start_points(setup: Setup, policy: dict) -> list:
    if setup.sim.starts:
        return [tuple(s) for s in setup.sim.starts]
    if setup.model == "gbm":
        xs = np.linspace(policy["x_hat"], policy["x_tilde"], setup.sim.n_starts + 2)[1:-1]
        return [(float(x),) for x in xs]
    return [(0.5 * (policy["y_hat"] + policy["y_tilde"]), 2.0 * policy["omega_star"])]


@dataclass
class SimulateResult:
    summary_header: list
    summary: list
    deviation_header: list = field(default_factory=list)
    deviations: list = field(default_factory=list)


def run_simulate(setup: Setup, deviations: bool = False) -> SimulateResult:
    m = build_model(setup)
    pol = load_policy(setup, m.solution)
    sim = setup.sim
    cfg = SimulationConfig(dt=sim.dt, n_paths=sim.paths, seed=sim.seed)
    starts = start_points(setup, pol)
    if setup.model == "gbm":
        from .model import lower_stop_policy, reset_policy
        ctrl = reset_policy(m.game, pol["x_tilde"], pol["x_star_low"])
        stop = lower_stop_policy(pol["x_hat"])
        rows = []
        for (x0,) in starts:
            est = estimate_payoff(m.game, ctrl, stop, cfg, x0)
            bias, bse = math.nan, math.nan
            if sim.bias_paths:
                b = dt_bias(m.game, ctrl, stop, cfg, x0, n_paths=sim.bias_paths)
                bias, bse = b.bias, b.stderr
            ref = float(cf.example1_psi(m.solution, x0))
            log.info("x0=%.6g: %s (closed form %.6g)", x0, est, ref)
            rows.append((x0, est.mean[0], est.stderr[0], ref, bias, bse, sim.paths,
                         est.landing_error, est.mean_interventions))
        res = SimulateResult(["x0", "mean", "stderr", "closed_form", "dt_bias", "dt_bias_stderr",
                              "paths", "max_landing_error", "mean_interventions"], rows)
        if deviations:
            n = sim.deviation_paths or sim.paths
            dcfg = replace(cfg, n_paths=n)
            devs = threshold_deviations(m.game, pol["x_tilde"], pol["x_star_low"], pol["x_hat"])
            x0 = starts[len(starts) // 2][0]
            out = deviation_test(m.game, (ctrl, stop), devs, dcfg, x0)
            res.deviation_header = ["x0", "deviation", "player", "equilibrium", "deviation_payoff",
                                    "advantage", "paired_stderr", "holds"]
            res.deviations = [(x0, r.label, r.player, r.equilibrium, r.deviation, r.advantage,
                               r.paired_stderr, r.holds) for r in out]
        return res
    sol = m.solution
    if setup.sim.policy is not None:
        sol = replace(sol, omega_star=pol["omega_star"], y_tilde=pol["y_tilde"], y_hat=pol["y_hat"])
    rows = []
    for (y2, om) in starts:
        ip = simulate_investor(setup.params, sol, cfg, y1=om, y2=y2)
        est = ip.estimate()
        ref = float(cf.investor_reduced_value(m.solution, y2, om))
        rows.append((y2, om, est.mean[0], est.stderr[0], ref, sim.paths,
                     float(ip.post_injection_y2.max(initial=0.0)), float(ip.n_injections.mean()),
                     float(np.mean(ip.exit_reason == 0))))
    if deviations:
        log.warning("deviation experiments are defined for the one-dimensional threshold model only")
    return SimulateResult(["y2", "omega", "mean", "stderr", "closed_form", "paths",
                           "max_landing_error", "mean_injections", "exit_fraction"], rows)


def write_simulate(out: Path, res: SimulateResult) -> list:
    write_csv(Path(out) / "summary.csv", res.summary_header, res.summary)
    files = ["summary.csv"]
    if res.deviations:
        write_csv(Path(out) / "deviations.csv", res.deviation_header, res.deviations)
        files.append("deviations.csv")
    return files
