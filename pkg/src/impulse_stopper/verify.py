"""Region classification and verification certificates for candidate values."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import MAXIMIZE, MINIMIZE, GameSpec, Grid, GridFunction, as_nonzero_sum
from .operators import generator_stencil, in_box, interp, intervention_operator
from .qvi import CONTINUE, IMPULSE, LABEL_NAMES, STOP

BOUNDARY = 3
REGION_NAMES = {**LABEL_NAMES, BOUNDARY: "boundary"}


class RegionError(RuntimeError):
    """Too many nodes fit none of the three regions."""


@dataclass
class RegionMap:
    grid: Grid
    labels: np.ndarray
    eps: float

    def mask(self, name: str) -> np.ndarray:
        code = {v: k for k, v in REGION_NAMES.items()}[name]
        return self.labels == code

    def counts(self) -> dict:
        return {v: int(np.sum(self.labels == k)) for k, v in REGION_NAMES.items()}


@dataclass
class _Parts:
    cres: np.ndarray       # delta phi - L phi - f, nan on the truncation edge
    Mphi: np.ndarray
    z: np.ndarray
    flagged: np.ndarray
    gap: np.ndarray        # phi - G
    G: np.ndarray
    ctrl_sign: float       # +1: maximising controller
    stop_sign: float       # +1: minimising stopper


def _parts(phi: GridFunction, game: GameSpec, player: int = 0, n_z: int = 64) -> _Parts:
    grid = phi.grid
    pay = game.payoffs[player]
    X = grid.points
    st = generator_stencil(game, grid, 0.0, upwind=True)
    cres = game.delta * phi.values - st.matrix @ phi.values - pay.f(X)
    cres[grid.boundary_mask()] = np.nan
    G = pay.G(X)
    M = intervention_operator(game, phi, 0.0, pay.controller_sense, n_z=n_z, player=player, G=G)
    return _Parts(cres, M.values.values, M.z, M.flagged, phi.values - G, G,
                  1.0 if pay.controller_sense == MAXIMIZE else -1.0,
                  1.0 if pay.stopper_sense == MINIMIZE else -1.0)


def _scale(*arrays) -> float:
    s = max(float(np.max(np.abs(a))) for a in arrays)
    return s if s > 0 else 1.0


def classify_regions(phi: GridFunction, game: GameSpec, eps: Optional[float] = None,
                     player: int = 0, eps_impulse: Optional[float] = None,
                     eps_pde: Optional[float] = None, max_unclassified: float = 0.05,
                     n_z: int = 64) -> RegionMap:
    """Label every node impulse, stop, continue or boundary.

    A node is a stop node when ``phi = G`` and continuing does not beat
    stopping, a continue node when the PDE holds with both obstacles
    respected, and an impulse node when ``phi = M phi``, continuing does not
    beat the impulse and stopping is not preferred.  Tests are in that order.  All
    tolerances are relative to ``max(|phi|, |G|)``: ``eps`` for ``phi = G``
    (default 1e-7), ``eps_impulse`` for ``phi = M phi`` and ``eps_pde`` for
    the PDE residual.  The last two default to ``max(1e-7, 0.1 h^2)``: ``M phi``
    reads ``phi`` off the grid by linear interpolation and the PDE uses finite
    differences, so a smooth candidate misses both by O(h^2).  Nodes passing
    none are ``boundary``.
    """
    p = _parts(phi, game, player, n_z)
    scale = _scale(phi.values, p.G)
    h = max(phi.grid.h)
    e = (1e-7 if eps is None else eps) * scale
    grid_eps = max(1e-7, 0.1 * h * h)
    ei = (grid_eps if eps_impulse is None else eps_impulse) * scale
    ep = (grid_eps if eps_pde is None else eps_pde) * scale
    Fc_cont = np.where(np.isnan(p.cres), 0.0, p.cres)
    imp_gap = phi.values - p.Mphi
    edge = np.isnan(p.cres)
    sgc, sgs = p.ctrl_sign, p.stop_sign
    # stopping must beat the controller's combined branch; that is "either
    # branch" when the controller's optimum is the opposite of the stopper's
    c_ok = edge | (sgs * Fc_cont <= ep)
    i_ok = sgs * imp_gap <= ei
    branch_ok = np.where(p.flagged, c_ok, (c_ok | i_ok) if sgs * sgc > 0 else (c_ok & i_ok))
    stop_ok = (np.abs(p.gap) <= e) & branch_ok
    imp_ok = (~p.flagged & (np.abs(imp_gap) <= ei) & (edge | (sgc * Fc_cont >= -ep))
              & (sgs * p.gap <= e))
    cont_ok = (~edge & (np.abs(Fc_cont) <= ep) & (p.flagged | (sgc * imp_gap >= -ei))
               & (sgs * p.gap <= e))
    # continue wins over impulse when both hold, as in the solver's tie-break
    labels = np.where(stop_ok, STOP, np.where(cont_ok, CONTINUE,
                                              np.where(imp_ok, IMPULSE, BOUNDARY))).astype(np.int8)
    interior = ~edge
    frac = float(np.mean(labels[interior] == BOUNDARY)) if np.any(interior) else 0.0
    if frac > max_unclassified:
        raise RegionError(f"{100 * frac:.1f}% of interior nodes fit no region at eps={e:.3g}; "
                          "not a value-function candidate")
    return RegionMap(phi.grid, labels, e)


def label_band(grid: Grid, labels: np.ndarray, width: int = 1) -> np.ndarray:
    """Nodes within ``width`` cells (per axis) of a node with a different label."""
    L = labels.reshape(grid.nodes)
    band = np.zeros(grid.nodes, dtype=bool)
    for k in range(grid.dim):
        diff = np.diff(L, axis=k) != 0
        for s in range(width):
            lo = [slice(None)] * grid.dim
            hi = [slice(None)] * grid.dim
            lo[k] = slice(0, L.shape[k] - 1 - s)
            hi[k] = slice(1 + s, None)
            dlo = [slice(None)] * grid.dim
            dhi = [slice(None)] * grid.dim
            dlo[k] = slice(0, diff.shape[k] - s)
            dhi[k] = slice(s, None)
            band[tuple(lo)] |= diff[tuple(dlo)]
            band[tuple(hi)] |= diff[tuple(dhi)]
    return band.ravel()


# ---------------------------------------------------------------------------
# certificates

@dataclass
class ConditionResult:
    id: str
    passed: bool
    violation: float
    worst_node: Optional[int]
    worst_x: Optional[tuple]
    checked: int
    informational: bool = False
    note: str = ""


@dataclass
class Certificate:
    tol: float
    conditions: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions if not c.informational)

    def __getitem__(self, cid: str) -> ConditionResult:
        for c in self.conditions:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def failed(self) -> list:
        return [c.id for c in self.conditions if not c.passed and not c.informational]

    def verdicts(self) -> dict:
        return {c.id: c.passed for c in self.conditions}

    def to_text(self) -> str:
        lines = [f"tolerance {self.tol:.6g}",
                 f"{'condition':34s} {'verdict':8s} {'violation':>12s} {'checked':>8s}  worst node"]
        for c in self.conditions:
            verdict = ("pass" if c.passed else "FAIL") + ("*" if c.informational else "")
            where = "-" if c.worst_node is None else (
                f"{c.worst_node} at ({', '.join(f'{v:.6g}' for v in c.worst_x)})")
            lines.append(f"{c.id:34s} {verdict:8s} {c.violation:12.4e} {c.checked:8d}  {where}"
                         + (f"  [{c.note}]" if c.note else ""))
        if any(c.informational for c in self.conditions):
            lines.append("* reported only; does not affect the overall verdict")
        lines.extend(self.notes)
        lines.append("overall " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines) + "\n"


def _condition(cid, excess, mask, X, tol, informational=False, note=""):
    """``excess`` is the amount by which each node violates its requirement."""
    excess = np.where(mask, np.nan_to_num(excess, nan=0.0), -np.inf)
    n = int(np.sum(mask))
    if n == 0:
        return ConditionResult(cid, True, 0.0, None, None, 0, informational, note or "no nodes")
    i = int(np.argmax(excess))
    v = float(max(excess[i], 0.0)) + 0.0
    return ConditionResult(cid, bool(excess[i] <= tol), v, i, tuple(float(t) for t in X[i]), n,
                           informational, note)


def default_tol(phi: GridFunction) -> float:
    h = max(phi.grid.h)
    return 10.0 * h * h * max(1.0, float(np.max(np.abs(phi.values))))


def _policy_labels(X, policies, n):
    ctrl, stopper = policies
    stop = np.asarray(stopper.stop_region(X), dtype=bool)
    act = np.asarray(ctrl.act_region(X), dtype=bool) & ~stop
    return np.where(stop, STOP, np.where(act, IMPULSE, CONTINUE)).astype(np.int8)


def _regions(phi, game, policies, region_map, player=0):
    X = phi.grid.points
    if policies is not None:
        return _policy_labels(X, policies, len(X)), "regions from the supplied policies"
    rm = region_map or classify_regions(phi, game, player=player)
    return rm.labels, "regions from classify_regions"


def check_zero_sum_conditions(phi: GridFunction, game: GameSpec, policies=None,
                              tol: Optional[float] = None, region_map: Optional[RegionMap] = None,
                              n_z: int = 64) -> Certificate:
    """Node-wise check of the verification conditions for a zero-sum game.

    ``policies`` is ``(ThresholdImpulsePolicy, StopPolicy)``; without it the
    regions are classified from ``phi``.  PDE conditions skip the truncation
    edge and a one-cell band around region changes.
    """
    tol = default_tol(phi) if tol is None else tol
    grid = phi.grid
    X = grid.points
    p = _parts(phi, game, 0, n_z)
    labels, src = _regions(phi, game, policies, region_map)
    band = label_band(grid, labels) | grid.boundary_mask() | (labels == BOUNDARY)
    stop, imp, cont = labels == STOP, labels == IMPULSE, labels == CONTINUE
    everywhere = np.ones(len(X), dtype=bool)
    cert = Certificate(tol, notes=[src])
    cert.conditions += [
        _condition("obstacle_impulse", -p.ctrl_sign * (phi.values - p.Mphi), ~p.flagged, X, tol),
        _condition("obstacle_stop", p.stop_sign * p.gap, everywhere, X, tol),
        _condition("pde_inequality", -p.ctrl_sign * p.cres, cont & ~band, X, tol),
        _condition("pde_inequality_impulse_region", -p.ctrl_sign * p.cres, imp & ~band, X, tol,
                   informational=True),
        _condition("pde_equality", np.abs(p.cres), cont & ~band, X, tol),
        _condition("stop_rule", np.abs(p.gap), stop, X, tol),
        _condition("boundary_continuity", np.abs(p.gap), _stop_band(grid, labels), X, tol),
    ]
    return cert


def _stop_band(grid, labels):
    s = (labels == STOP).astype(np.int8)
    return label_band(grid, s) & (labels != BOUNDARY)


def perturbation_factors(n: int = 16) -> np.ndarray:
    """Relative target perturbations: ``n/2`` magnitudes from 5% to 15%, both signs."""
    mags = np.linspace(0.05, 0.15, n // 2)
    return np.concatenate([1.0 - mags[::-1], 1.0 + mags])


def check_nonzero_sum_conditions(phi1: GridFunction, phi2: GridFunction, game: GameSpec,
                                 policies=None, tol: Optional[float] = None,
                                 n_perturb: int = 16, n_z: int = 64) -> Certificate:
    """Verification conditions for a non-zero-sum game (controller ``phi1``, stopper ``phi2``).

    The controller's optimality against all alternative impulses is sampled
    over ``n_perturb`` rescalings of the equilibrium target.
    """
    game = as_nonzero_sum(game)
    tol = default_tol(phi1) if tol is None else tol
    grid = phi1.grid
    X = grid.points
    p1 = _parts(phi1, game, 0, n_z)
    p2 = _parts(phi2, game, 1, n_z)
    if policies is not None:
        labels = _policy_labels(X, policies, len(X))
        zhat = np.asarray(policies[0].target(X), dtype=float)
        src = "regions from the supplied policies"
    else:
        r2 = classify_regions(phi2, game, player=1)
        r1 = classify_regions(phi1, game, player=0)
        stop = r2.labels == STOP
        labels = np.where(stop, STOP, np.where(r1.labels == IMPULSE, IMPULSE,
                                               np.where(r1.labels == BOUNDARY, BOUNDARY, CONTINUE)))
        labels = labels.astype(np.int8)
        zhat = p1.z
        src = "regions from classify_regions"
    band = label_band(grid, labels) | grid.boundary_mask() | (labels == BOUNDARY)
    stop, imp, cont = labels == STOP, labels == IMPULSE, labels == CONTINUE
    everywhere = np.ones(len(X), dtype=bool)

    # sampled alternatives to the equilibrium impulse at impulse nodes
    worst_alt = np.full(len(X), -np.inf)
    zlo, zhi = game.intervention.impulse_set
    for fac in perturbation_factors(n_perturb):
        zz = np.clip(np.where(imp, zhat * fac, zlo), zlo, zhi)
        dest = game.intervention.apply(X, zz)
        val = interp(grid, phi1.values, dest) + game.impulse_term(zz, 0)
        gain = np.where(in_box(grid, dest), -p1.ctrl_sign * (phi1.values - val), -np.inf)
        worst_alt = np.maximum(worst_alt, gain)
    zsafe = np.where(imp, zhat, zlo)
    follow = (phi2.values - interp(grid, phi2.values, game.intervention.apply(X, zsafe))
              - game.impulse_term(zsafe, 1))

    cert = Certificate(tol, notes=[src, f"alternative impulses: {n_perturb} target rescalings "
                                        "between 5% and 15% in both directions"])
    cert.conditions += [
        _condition("obstacle_impulse", -p1.ctrl_sign * (phi1.values - p1.Mphi), ~p1.flagged, X, tol),
        _condition("obstacle_stop", p2.stop_sign * p2.gap, everywhere, X, tol),
        _condition("pde_inequality",
                   np.maximum(-p1.ctrl_sign * p1.cres, np.where(imp, worst_alt, -np.inf)),
                   (cont | imp) & ~band, X, tol,
                   note="controller PDE sign on continue nodes, sampled impulses on impulse nodes"),
        _condition("pde_inequality_impulse_region", -p1.ctrl_sign * p1.cres, imp & ~band, X, tol,
                   informational=True),
        _condition("pde_equality", np.maximum(np.abs(p1.cres), np.abs(p2.cres)), cont & ~band, X, tol),
        _condition("follower_impulse", np.abs(follow), imp & ~band, X, tol),
        _condition("stop_rule", np.maximum(np.abs(p2.gap), np.abs(p1.gap)), stop, X, tol),
        _condition("boundary_continuity", np.maximum(np.abs(p2.gap), np.abs(p1.gap)),
                   _stop_band(grid, labels), X, tol),
    ]
    return cert


def region_agreement(a: np.ndarray, b: np.ndarray, grid: Grid, width: int = 2) -> dict:
    """Mismatches between two labelings outside a ``width``-cell band of either."""
    band = label_band(grid, a, width) | label_band(grid, b, width)
    bad = (a != b) & ~band & (a != BOUNDARY) & (b != BOUNDARY)
    return {"mismatches": int(np.sum(bad)), "band_nodes": int(np.sum(band)),
            "nodes": [int(i) for i in np.nonzero(bad)[0][:10]]}
