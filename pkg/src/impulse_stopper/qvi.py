"""Finite-difference solver for the stationary double-obstacle QVI.

With ``phi(s, x) = e^{-delta s} psi(x)`` the value solves, node-wise,

    stopper_opt( controller_opt( delta psi - L psi - f , psi - M psi ), psi - G ) = 0

where ``controller_opt`` is ``min`` for a maximising controller (``max``
otherwise) and ``stopper_opt`` is ``max`` for a minimising stopper (``min``
otherwise).  Policies are improved by nested policy iteration: the outer loop
updates the controller's labels, the inner loop solves the stopper's obstacle
problem for the frozen impulse policy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import MAXIMIZE, MINIMIZE, GameSpec, Grid, GridFunction
from .operators import generator_stencil, interp_weights, intervention_operator

log = logging.getLogger(__name__)

CONTINUE, IMPULSE, STOP = 0, 1, 2
LABEL_NAMES = {CONTINUE: "continue", IMPULSE: "impulse", STOP: "stop"}


class QviError(RuntimeError):
    pass


@dataclass
class QviProblem:
    game: GameSpec
    grid: Grid
    boundary_policy: str = "dirichlet"
    s: float = 0.0
    n_z: int = 64
    upwind: bool = True

    @property
    def mode(self) -> str:
        return "zero_sum" if self.game.zero_sum else "non_zero_sum"

    def covers(self, lo, hi, margin: float = 0.2) -> bool:
        """Whether the grid holds ``[lo, hi]`` (per axis) with the given relative margin."""
        lo, hi = np.atleast_1d(lo), np.atleast_1d(hi)
        ok = True
        for k in range(self.grid.dim):
            width = self.grid.upper[k] - self.grid.lower[k]
            ok &= lo[k] - self.grid.lower[k] >= 0 and self.grid.upper[k] - hi[k] >= margin * width
        return bool(ok)


@dataclass
class PolicyState:
    labels: np.ndarray
    z: np.ndarray
    iterations: int = 0
    residuals: list = field(default_factory=list)
    label_changes: list = field(default_factory=list)
    iterates: list = field(default_factory=list)  # values per iteration when recorded

    def counts(self) -> dict:
        return {LABEL_NAMES[k]: int(np.sum(self.labels == k)) for k in LABEL_NAMES}


@dataclass
class _Player:
    f: np.ndarray
    G: np.ndarray
    player: int
    controller_sense: str
    stopper_sense: str


class _Discretisation:
    """Matrices and payoff arrays shared by all policy evaluations."""

    def __init__(self, problem: QviProblem, shift: float = 0.0, source=None):
        self.problem = problem
        game, grid = problem.game, problem.grid
        self.game, self.grid = game, grid
        self.n = grid.size
        self.X = grid.points
        st = generator_stencil(game, grid, problem.s, problem.upwind)
        if st.offdiag_min() < -1e-12 * max(1.0, abs(st.matrix).max()):
            raise QviError("continuation operator is not an M-matrix on this grid "
                           "(negative off-diagonal generator entries)")
        self.stencil = st
        self.delta = game.delta + shift
        self.boundary = grid.boundary_mask()
        I = sp.identity(self.n, format="csr")
        C = (self.delta * I - st.matrix).tocsr()
        rows_b = np.nonzero(self.boundary)[0]
        if problem.boundary_policy == "dirichlet":
            B = sp.csr_matrix((np.ones(rows_b.size), (rows_b, rows_b)), shape=(self.n, self.n))
        else:
            B = self._extrapolation_rows(rows_b)
        keep = sp.diags((~self.boundary).astype(float))
        self.C = (keep @ C + B).tocsr()
        self.I = I
        self.disc = math.exp(-game.delta * problem.s)
        self.players = []
        for k, pay in enumerate(game.payoffs):
            f = pay.f(self.X) + (0.0 if source is None else source[k])
            self.players.append(_Player(f, pay.G(self.X), k, pay.controller_sense,
                                        pay.stopper_sense))

    def _extrapolation_rows(self, rows_b):
        grid = self.grid
        idx = np.array(np.unravel_index(rows_b, grid.nodes)).T
        r, c, v = [], [], []
        for row, ij in zip(rows_b, idx):
            for k in range(grid.dim):
                m = grid.nodes[k]
                if ij[k] == 0 or ij[k] == m - 1:
                    step = 1 if ij[k] == 0 else -1
                    nb1, nb2 = ij.copy(), ij.copy()
                    nb1[k] += step
                    nb2[k] += 2 * step
                    for node, w in ((ij, 1.0), (nb1, -2.0), (nb2, 1.0)):
                        r.append(row)
                        c.append(int(np.ravel_multi_index(tuple(node), grid.nodes)))
                        v.append(w)
                    break
        return sp.csr_matrix((v, (r, c)), shape=(self.n, self.n))

    def cont_rhs(self, pl: _Player) -> np.ndarray:
        rhs = pl.f.copy()
        if self.problem.boundary_policy == "dirichlet":
            rhs[self.boundary] = pl.G[self.boundary]
        else:
            rhs[self.boundary] = 0.0
        return rhs

    def impulse_rows(self, act: np.ndarray, z: np.ndarray, pl: _Player):
        n = self.n
        rows = np.nonzero(act)[0]
        if rows.size == 0:
            return sp.csr_matrix((n, n)), np.zeros(n), None
        dest = self.game.intervention.apply(self.X[rows], z[rows])
        idx, w = interp_weights(self.grid, dest)
        W = sp.csr_matrix((w.ravel(), (np.repeat(rows, idx.shape[1]), idx.ravel())), shape=(n, n))
        term = np.zeros(n)
        term[rows] = self.disc * self.game.impulse_term(z[rows], pl.player)
        return W, term, (rows, idx, w)

    def assemble(self, act, z, stop, pl: _Player):
        n = self.n
        act = act & ~stop
        cont = ~act & ~stop
        W, term, chains = self.impulse_rows(act, z, pl)
        if chains is not None:
            _check_chains(act, chains, n)
        A = (sp.diags(cont.astype(float)) @ self.C
             + sp.diags(act.astype(float)) @ (self.I - W)
             + sp.diags(stop.astype(float)))
        rhs = np.where(cont, self.cont_rhs(pl), 0.0) + np.where(act, term, 0.0) + np.where(stop, pl.G, 0.0)
        return A.tocsc(), rhs, W, term

    def solve(self, act, z, stop, pl):
        A, rhs, W, term = self.assemble(act, z, stop, pl)
        V = spla.spsolve(A, rhs)
        if not np.all(np.isfinite(V)):
            raise QviError("policy evaluation produced non-finite values (singular system)")
        return V, W, term

    def contres(self, V, pl):
        return self.C @ V - self.cont_rhs(pl)

    def M(self, V, pl, sense=None):
        phi = GridFunction(self.grid, V, self.problem.boundary_policy)
        return intervention_operator(self.game, phi, self.problem.s, sense or pl.controller_sense,
                                     n_z=self.problem.n_z, player=pl.player, G=pl.G)


def _check_chains(act, chains, n):
    rows, idx, w = chains
    resolved = ~act.copy()
    live = w > 1e-14
    for _ in range(n + 1):
        ok = np.all(resolved[idx] | ~live, axis=1)
        grow = ok & ~resolved[rows]
        if not np.any(grow):
            break
        resolved[rows[grow]] = True
    if not np.all(resolved[rows]):
        bad = rows[~resolved[rows]]
        raise QviError(f"non-contractive impulse policy: destination chains from {bad.size} impulse "
                       f"nodes never reach a continue/stop node (first node {int(bad[0])})")


def _ctrl_combine(cres, ires, sense):
    return np.minimum(cres, ires) if sense == MAXIMIZE else np.maximum(cres, ires)


def _stop_combine(fc, gap, sense):
    return np.maximum(fc, gap) if sense == MINIMIZE else np.minimum(fc, gap)


def _impulse_residual(V, Mres, pl):
    ires = V - Mres.values.values
    big = np.inf if pl.controller_sense == MAXIMIZE else -np.inf
    return np.where(Mres.flagged, big, ires)


def _policy_residual(d: _Discretisation, V, act, W, term, pl):
    """Residual of the non-stop rows under a frozen impulse policy."""
    cres = d.contres(V, pl)
    ires = V - W @ V - term
    return np.where(act, ires, cres)


def _stop_howard(d, pl, act, z, stop0, tie, max_iter=500):
    stop = stop0.copy()
    # the stopper's alternative at a node is whatever the controller plays there
    W, term, _ = d.impulse_rows(act, z, pl)
    for k in range(max_iter):
        V, _, _ = d.solve(act, z, stop, pl)
        fc = _policy_residual(d, V, act, W, term, pl)
        gap = V - pl.G
        if pl.stopper_sense == MINIMIZE:
            new = np.where(stop, gap >= fc - tie, gap > fc + tie)
        else:
            new = np.where(stop, gap <= fc + tie, gap < fc - tie)
        if np.array_equal(new, stop):
            return V, stop, k + 1
        stop = new
    raise QviError("stopping policy iteration did not converge")


def _improve_controller(d, pl, V, act, tie):
    Mres = d.M(V, pl)
    cres = d.contres(V, pl)
    ires = _impulse_residual(V, Mres, pl)
    if pl.controller_sense == MAXIMIZE:
        better = ires < cres - tie
        keep = act & (ires <= cres + tie)
    else:
        better = ires > cres + tie
        keep = act & (ires >= cres - tie)
    new = (better | keep) & ~Mres.flagged
    return new, np.where(new, Mres.z, np.nan), Mres, cres, ires


def qvi_residual(phi: GridFunction, problem: QviProblem, player: int = 0,
                 _d: Optional[_Discretisation] = None) -> GridFunction:
    """Node-wise residual of the double-obstacle QVI for ``phi``."""
    d = _d or _Discretisation(problem)
    pl = d.players[player]
    V = phi.values
    Mres = d.M(V, pl)
    fc = _ctrl_combine(d.contres(V, pl), _impulse_residual(V, Mres, pl), pl.controller_sense)
    return phi.with_values(_stop_combine(fc, V - pl.G, pl.stopper_sense))


def _scale(V):
    return max(1.0, float(np.max(np.abs(V))))


def _diff_policies(a, b):
    changed = np.nonzero(a != b)[0]
    return ", ".join(f"node {i}: {LABEL_NAMES[int(a[i])]}->{LABEL_NAMES[int(b[i])]}"
                     for i in changed[:10]) + (" ..." if changed.size > 10 else "")


def _coarse_grid(grid: Grid) -> Grid:
    return Grid(grid.lower, grid.upper, tuple((m + 1) // 2 for m in grid.nodes))


def _prolong_policy(coarse: Grid, state: PolicyState, fine: Grid):
    """Nearest-node labels and interpolated targets on a finer grid."""
    idx, w = interp_weights(coarse, fine.points)
    nearest = idx[np.arange(idx.shape[0]), np.argmax(w, axis=1)]
    labels = state.labels[nearest]
    imp = np.isfinite(state.z)
    zc = np.where(imp, state.z, 0.0)
    wi = w * imp[idx]
    z = np.sum(zc[idx] * wi, axis=1) / np.maximum(np.sum(wi, axis=1), 1e-300)
    return labels == IMPULSE, np.where(labels == IMPULSE, z, np.nan), labels == STOP


def solve_qvi(problem: QviProblem, tol: float = 1e-9, max_iter: int = 200,
              shift: float = 0.0, source=None, multilevel: int = 400,
              record_iterates: bool = False, _d: Optional[_Discretisation] = None):
    """Nested policy iteration for the zero-sum game.

    Returns ``(GridFunction, PolicyState)``.  Grids with more than
    ``multilevel`` nodes along some axis are warm-started from the policy
    solved on a grid with half the nodes (0 disables this).  ``shift`` and
    ``source`` add a reaction term and a source to the continuation equation
    (used by the time-marching mode).  ``record_iterates`` keeps every
    policy-evaluation value in ``state.iterates``.
    """
    if not problem.game.zero_sum:
        raise QviError("solve_qvi needs a zero-sum game; use solve_nonzero_sum")
    d = _d or _Discretisation(problem, shift, None if source is None else [source])
    pl = d.players[0]
    n = d.n
    act = np.zeros(n, dtype=bool)
    z = np.full(n, np.nan)
    stop = np.ones(n, dtype=bool)
    if multilevel and source is None and max(problem.grid.nodes) > multilevel:
        cg = _coarse_grid(problem.grid)
        cprob = QviProblem(problem.game, cg, problem.boundary_policy, problem.s, problem.n_z,
                           problem.upwind)
        _, cstate = solve_qvi(cprob, tol, max_iter, shift, None, multilevel)
        act, z, stop = _prolong_policy(cg, cstate, problem.grid)
        log.debug("warm start from %s nodes", cg.nodes)
    state = PolicyState(np.zeros(n, dtype=np.int8), z)
    prev_labels = labels = None
    V_prev = None
    history = []
    for it in range(1, max_iter + 1):
        V, stop, _ = _stop_howard(d, pl, act, z, stop, tie=1e-13 * _scale(pl.G))
        if record_iterates:
            state.iterates.append(V.copy())
        tie = 1e-12 * _scale(V)
        new_act, new_z, Mres, cres, ires = _improve_controller(d, pl, V, act, tie)
        fc = _ctrl_combine(cres, ires, pl.controller_sense)
        R = _stop_combine(fc, V - pl.G, pl.stopper_sense)
        prev_labels = labels
        labels = np.where(stop, STOP, np.where(act, IMPULSE, CONTINUE)).astype(np.int8)
        changes = int(np.sum(new_act != act))
        res = float(np.max(np.abs(R)))
        state.residuals.append(res)
        state.label_changes.append(changes if prev_labels is None else
                                   int(np.sum(labels != prev_labels)) + changes)
        log.debug("qvi iter %d residual %.3e changes %d", it, res, changes)
        dv = math.inf if V_prev is None else float(np.max(np.abs(V - V_prev)))
        if changes == 0 and (res < tol * _scale(V) or dv < tol * _scale(V)):
            state.labels, state.z, state.iterations = labels, np.where(act, z, np.nan), it
            return GridFunction(d.grid, V, problem.boundary_policy), state
        key = (labels.tobytes(), new_act.tobytes())
        if changes > 0 and key in history[-4:]:
            raise QviError("label cycling detected: " + _diff_policies(prev_labels, labels))
        history.append(key)
        V_prev = V
        act, z = new_act, new_z
    raise QviError(f"policy iteration did not converge in {max_iter} iterations; last changes: "
                   + (_diff_policies(prev_labels, labels) if prev_labels is not None else ""))


def solve_qvi_time_marching(problem: QviProblem, horizon: float, n_steps: int,
                            tol: float = 1e-9):
    """Backward Euler in time from ``psi(T) = G``; returns the list of time slices."""
    dt = horizon / n_steps
    d0 = _Discretisation(problem)
    psi = d0.players[0].G.copy()
    out = [GridFunction(problem.grid, psi, problem.boundary_policy)]
    for _ in range(n_steps):
        phi, _ = solve_qvi(problem, tol, shift=1.0 / dt, source=psi / dt, _d=None)
        psi = phi.values
        out.append(phi)
    return out[::-1]


# ---------------------------------------------------------------------------
# non-zero-sum games

def _ctrl_howard(d, pl, stop, act, z, tol, max_iter=200):
    """Controller's best response (impulse QVI) to a frozen stopping set."""
    act = act & ~stop
    V_prev = None
    for _ in range(max_iter):
        V, _, _ = d.solve(act, z, stop, pl)
        new, new_z, _, _, _ = _improve_controller(d, pl, V, act, 1e-12 * _scale(V))
        new &= ~stop
        dv = math.inf if V_prev is None else float(np.max(np.abs(V - V_prev)))
        if np.array_equal(new, act) and dv < tol * _scale(V):
            return V, act, np.where(act, z, np.nan)
        V_prev = V
        act, z = new, np.where(new, new_z, np.nan)
    raise QviError("impulse policy iteration did not converge")


def _nzs_residuals(d, V1, V2, act, z, stop):
    p1, p2 = d.players
    M1 = d.M(V1, p1)
    r1 = _ctrl_combine(d.contres(V1, p1), _impulse_residual(V1, M1, p1), p1.controller_sense)
    W, term, _ = d.impulse_rows(act, z, p2)
    fc = _policy_residual(d, V2, act, W, term, p2)
    r2 = _stop_combine(fc, V2 - p2.G, p2.stopper_sense)
    return float(np.max(np.abs(r1[~stop]), initial=0.0)), float(np.max(np.abs(r2)))


def solve_nonzero_sum(problem: QviProblem, tol: float = 1e-9, max_iter: int = 100,
                      multilevel: int = 400):
    """Best-response iteration for a non-zero-sum controller-stopper game.

    The stopper's region is frozen while the controller solves its impulse
    QVI, then the impulse policy is frozen while the stopper solves its
    obstacle problem; this alternates until the stopping set repeats.
    Returns ``(phi1, phi2, PolicyState)``: the controller's and the stopper's
    value.  A zero-sum game is accepted and treated as the pair ``(J, -J)``.
    """
    from .model import as_nonzero_sum
    game = as_nonzero_sum(problem.game)
    prob = QviProblem(game, problem.grid, problem.boundary_policy, problem.s, problem.n_z,
                      problem.upwind)
    d = _Discretisation(prob)
    p1, p2 = d.players
    n = d.n
    stop = np.zeros(n, dtype=bool)
    act = np.zeros(n, dtype=bool)
    z = np.full(n, np.nan)
    if multilevel and max(problem.grid.nodes) > multilevel:
        cg = _coarse_grid(problem.grid)
        cprob = QviProblem(game, cg, problem.boundary_policy, problem.s, problem.n_z, problem.upwind)
        _, _, cstate = solve_nonzero_sum(cprob, tol, max_iter, multilevel)
        act, z, stop = _prolong_policy(cg, cstate, problem.grid)
    seen = [stop.tobytes()]
    state = PolicyState(np.zeros(n, dtype=np.int8), np.full(n, np.nan))
    for it in range(1, max_iter + 1):
        V1, act, z = _ctrl_howard(d, p1, stop, act, z, tol)
        V2, new_stop, _ = _stop_howard(d, p2, act, z, stop, tie=1e-13 * _scale(p2.G))
        changes = int(np.sum(new_stop != stop))
        state.label_changes.append(changes)
        if changes == 0:
            state.labels = np.where(stop, STOP, np.where(act, IMPULSE, CONTINUE)).astype(np.int8)
            state.z, state.iterations = z, it
            state.residuals.append(max(_nzs_residuals(d, V1, V2, act, z, stop)))
            return (GridFunction(d.grid, V1, problem.boundary_policy),
                    GridFunction(d.grid, V2, problem.boundary_policy), state)
        key = new_stop.tobytes()
        if key in seen:
            back = len(seen) - seen.index(key)
            raise QviError(f"best-response iteration oscillates ({back}-cycle in the stopping "
                           f"region, {changes} nodes switch between consecutive best responses)")
        seen.append(key)
        stop = new_stop
        state.residuals.append(math.nan)
    raise QviError(f"best-response iteration did not settle in {max_iter} rounds")


def write_residual_log(path, state: PolicyState) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iter,residual,label_changes\n")
        for i, (r, c) in enumerate(zip(state.residuals, state.label_changes), 1):
            fh.write(f"{i},{format(r, '.17g')},{c}\n")
