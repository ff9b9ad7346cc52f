"""Discrete generator and intervention operator on uniform grids."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .model import MINIMIZE, GameSpec, Grid, GridFunction

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class GridError(ValueError):
    """Grid too coarse or otherwise unsuitable for the requested scheme."""


# ---------------------------------------------------------------------------
# interpolation

def interp_weights(grid: Grid, pts: np.ndarray):
    """Multilinear interpolation stencil, clamped to the grid box.

    Returns ``(idx, w)`` of shape ``(n, 2**dim)`` with flat node indices.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, grid.dim)
    n = pts.shape[0]
    corners = [(np.zeros(n, dtype=np.int64), np.ones(n))]
    stride = 1
    for k in reversed(range(grid.dim)):
        lo, m, h = grid.lower[k], grid.nodes[k], grid.h[k]
        s = np.clip((pts[:, k] - lo) / h, 0.0, m - 1.0)
        i = np.minimum(np.floor(s).astype(np.int64), m - 2)
        t = s - i
        new = []
        for base, w in corners:
            new.append((base + i * stride, w * (1.0 - t)))
            new.append((base + (i + 1) * stride, w * t))
        corners = new
        stride *= m
    idx = np.stack([c[0] for c in corners], axis=1)
    w = np.stack([c[1] for c in corners], axis=1)
    return idx, w


def interp(grid: Grid, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    idx, w = interp_weights(grid, pts)
    return np.sum(values[idx] * w, axis=1)


def in_box(grid: Grid, pts: np.ndarray, rel: float = 1e-12) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, grid.dim)
    ok = np.ones(pts.shape[0], dtype=bool)
    for k in range(grid.dim):
        slack = rel * (grid.upper[k] - grid.lower[k])
        ok &= (pts[:, k] >= grid.lower[k] - slack) & (pts[:, k] <= grid.upper[k] + slack)
    return ok


# ---------------------------------------------------------------------------
# generator

def _axis_ops(m: int, h: float):
    i = np.arange(m)
    # central first derivative, second-order one-sided at the ends
    Dc = sp.lil_matrix((m, m))
    Dc[i[1:-1], i[:-2]] = -0.5 / h
    Dc[i[1:-1], i[2:]] = 0.5 / h
    Dc[0, 0], Dc[0, 1], Dc[0, 2] = -1.5 / h, 2.0 / h, -0.5 / h
    Dc[m - 1, m - 3], Dc[m - 1, m - 2], Dc[m - 1, m - 1] = 0.5 / h, -2.0 / h, 1.5 / h
    Df = sp.lil_matrix((m, m))
    Df[i[:-1], i[:-1]] = -1.0 / h
    Df[i[:-1], i[1:]] = 1.0 / h
    Df[m - 1, m - 2], Df[m - 1, m - 1] = -1.0 / h, 1.0 / h
    Db = sp.lil_matrix((m, m))
    Db[i[1:], i[:-1]] = -1.0 / h
    Db[i[1:], i[1:]] = 1.0 / h
    Db[0, 0], Db[0, 1] = -1.0 / h, 1.0 / h
    D2 = sp.lil_matrix((m, m))
    D2[i[1:-1], i[:-2]] = 1.0 / h ** 2
    D2[i[1:-1], i[1:-1]] = -2.0 / h ** 2
    D2[i[1:-1], i[2:]] = 1.0 / h ** 2
    D2[0, 0], D2[0, 1], D2[0, 2] = 1.0 / h ** 2, -2.0 / h ** 2, 1.0 / h ** 2
    D2[m - 1, m - 3], D2[m - 1, m - 2], D2[m - 1, m - 1] = 1.0 / h ** 2, -2.0 / h ** 2, 1.0 / h ** 2
    return tuple(A.tocsr() for A in (Dc, Df, Db, D2))


def _lift(op, k: int, nodes: tuple):
    """Embed a 1D operator acting on axis ``k`` into the tensor grid."""
    mats = [sp.identity(m, format="csr") for m in nodes]
    mats[k] = op
    out = mats[0]
    for M in mats[1:]:
        out = sp.kron(out, M, format="csr")
    return out


@dataclass
class GeneratorStencil:
    """Sparse realisation of the generator on a grid.

    ``matrix @ phi`` is the generator applied to nodal values; ``upwind[k]``
    marks nodes where axis ``k`` uses one-sided drift differences;
    ``jump`` is the atom quadrature part (already included in ``matrix``).
    """

    grid: Grid
    matrix: sp.csr_matrix
    upwind: tuple
    peclet: tuple
    jump: sp.csr_matrix
    interior: np.ndarray

    def offdiag_min(self) -> float:
        A = self.matrix.tocoo()
        keep = (A.row != A.col) & self.interior[A.row]
        return float(A.data[keep].min()) if np.any(keep) else 0.0


def generator_stencil(game: GameSpec, grid: Grid, s: float = 0.0, upwind: bool = True,
                      peclet_max: float = 2.0) -> GeneratorStencil:
    d = game.diffusion
    if d.dimension != grid.dim:
        raise GridError(f"grid dimension {grid.dim} does not match state dimension {d.dimension}")
    X = grid.points
    n = X.shape[0]
    mu = d.mu(s, X)
    sig = d.sigma(s, X)
    a = 0.5 * np.einsum("nik,njk->nij", sig, sig)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(a))):
        raise GridError("non-finite coefficients on the grid")

    jump = sp.csr_matrix((n, n))
    b = mu.copy()
    for z, nu in d.levy_measure:
        if nu == 0:
            continue
        g = d.gamma(X, z)
        b -= nu * g
        idx, w = interp_weights(grid, X + g)
        rows = np.repeat(np.arange(n), idx.shape[1])
        W = sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, n))
        jump = jump + nu * (W - sp.identity(n, format="csr"))

    L = jump.copy()
    ups, pes = [], []
    for k in range(grid.dim):
        Dc, Df, Db, D2 = (_lift(op, k, grid.nodes) for op in _axis_ops(grid.nodes[k], grid.h[k]))
        akk = a[:, k, k]
        bk = b[:, k]
        with np.errstate(divide="ignore", invalid="ignore"):
            pe = np.where(akk > 0, np.abs(bk) * grid.h[k] / akk, np.where(bk != 0, np.inf, 0.0))
        up = pe > peclet_max
        if np.any(up) and not upwind:
            need = np.min(np.where(bk != 0, peclet_max * akk / np.abs(np.where(bk != 0, bk, 1)), np.inf))
            raise GridError(f"cell Peclet number up to {np.max(pe):.3g} > {peclet_max} on axis {k} "
                            f"without upwinding; use h <= {need:.3g}")
        cen = np.where(up, 0.0, bk)
        fwd = np.where(up & (bk > 0), bk, 0.0)
        bwd = np.where(up & (bk < 0), bk, 0.0)
        L = L + sp.diags(cen) @ Dc + sp.diags(fwd) @ Df + sp.diags(bwd) @ Db + sp.diags(akk) @ D2
        ups.append(up)
        pes.append(pe)
    if grid.dim == 2:
        a01 = a[:, 0, 1]
        if np.any(a01 != 0):
            Dx = _lift(_axis_ops(grid.nodes[0], grid.h[0])[0], 0, grid.nodes)
            Dy = _lift(_axis_ops(grid.nodes[1], grid.h[1])[0], 1, grid.nodes)
            L = L + sp.diags(2 * a01) @ (Dx @ Dy)
    interior = ~grid.boundary_mask()
    return GeneratorStencil(grid, L.tocsr(), tuple(ups), tuple(pes), jump.tocsr(), interior)


def apply_generator(game: GameSpec, phi: GridFunction, s: float = 0.0, upwind: bool = True,
                    stencil: Optional[GeneratorStencil] = None) -> GridFunction:
    """Node-wise generator of ``phi``; boundary rows use one-sided differences."""
    st = stencil if stencil is not None else generator_stencil(game, phi.grid, s, upwind)
    return phi.with_values(st.matrix @ phi.values)


def jump_term(game: GameSpec, phi, dphi, x) -> np.ndarray:
    """``sum_j nu_j [phi(x + g_j) - phi(x) - phi'(x) g_j]`` for callables (1D)."""
    d = game.diffusion
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for z, nu in d.levy_measure:
        g = d.gamma(x.reshape(-1, 1), z)[:, 0].reshape(x.shape)
        out += nu * (phi(x + g) - phi(x) - dphi(x) * g)
    return out


# ---------------------------------------------------------------------------
# intervention operator

@dataclass
class InterventionResult:
    values: GridFunction
    z: np.ndarray
    flagged: np.ndarray  # nodes with no feasible impulse


def _feasible_zmax(game: GameSpec, grid: Grid, X: np.ndarray, iters: int = 80) -> np.ndarray:
    zlo, zhi = game.intervention.impulse_set
    n = X.shape[0]
    ok_lo = in_box(grid, game.intervention.apply(X, np.full(n, zlo)))
    if math.isfinite(zhi):
        cap = np.full(n, zhi)
    else:
        cap = np.full(n, zlo + 10.0 * max(u - l for l, u in zip(grid.lower, grid.upper)) + 1.0)
    ok_cap = in_box(grid, game.intervention.apply(X, cap))
    lo = np.full(n, zlo)
    hi = cap.copy()
    todo = ok_lo & ~ok_cap
    for _ in range(iters):
        if not np.any(todo):
            break
        mid = 0.5 * (lo + hi)
        ok = in_box(grid, game.intervention.apply(X, mid))
        lo = np.where(todo & ok, mid, lo)
        hi = np.where(todo & ~ok, mid, hi)
    zmax = np.where(ok_cap, cap, lo)
    return np.where(ok_lo, zmax, np.nan)


def intervention_operator(game: GameSpec, phi: GridFunction, s: float = 0.0,
                          sense: Optional[str] = None, n_z: int = 64, refine_iters: int = 50,
                          player: int = 0, G: Optional[np.ndarray] = None) -> InterventionResult:
    """Best immediate impulse: ``opt_z [phi(Gamma(x, z)) + term(z)]``.

    ``term`` is the player's impulse payoff discounted to time ``s``; with the
    default it is ``+cost`` for a minimising and ``-cost`` for a maximising
    controller.  The feasible impulses at a node are those keeping
    ``Gamma(x, z)`` inside the grid; the set is assumed to be an interval
    starting at ``z_lo``.  A coarse z-grid locates the best bracket and a
    golden-section search refines it.  Nodes without any feasible impulse are
    flagged and receive the boundary-policy value (``G`` for Dirichlet,
    ``phi`` otherwise).
    """
    grid = phi.grid
    sense = sense or game.payoffs[player].controller_sense
    sgn = 1.0 if sense == MINIMIZE else -1.0
    X = grid.points
    n = X.shape[0]
    disc = math.exp(-game.payoffs[player].discount * s)
    zlo = game.intervention.impulse_set[0]
    zmax = _feasible_zmax(game, grid, X)
    flagged = ~np.isfinite(zmax)
    span = np.where(flagged, 0.0, zmax - zlo)
    v = phi.values

    def objective(zz):  # zz shape (n,) -> signed objective (minimised)
        y = game.intervention.apply(X, zz)
        val = interp(grid, v, y) + disc * game.impulse_term(zz, player)
        return sgn * val

    t = np.linspace(0.0, 1.0, n_z)
    best = np.full(n, np.inf)
    kbest = np.zeros(n, dtype=np.int64)
    for k, tk in enumerate(t):
        val = objective(zlo + tk * span)
        better = val < best
        best = np.where(better, val, best)
        kbest = np.where(better, k, kbest)
    zbest = zlo + t[kbest] * span
    if refine_iters and n_z > 1:
        a = zlo + t[np.maximum(kbest - 1, 0)] * span
        b = zlo + t[np.minimum(kbest + 1, n_z - 1)] * span
        for _ in range(refine_iters):
            c = b - GOLDEN * (b - a)
            d = a + GOLDEN * (b - a)
            left = objective(c) < objective(d)
            b = np.where(left, d, b)
            a = np.where(left, a, c)
        zr = 0.5 * (a + b)
        fr = objective(zr)
        take = fr < best
        zbest = np.where(take, zr, zbest)
        best = np.where(take, fr, best)
    out = sgn * best
    if np.any(flagged):
        if phi.boundary_policy == "dirichlet" and G is not None:
            out = np.where(flagged, G, out)
        else:
            out = np.where(flagged, v, out)
        zbest = np.where(flagged, np.nan, zbest)
    return InterventionResult(phi.with_values(out), zbest, flagged)


def intervention_inequality_check(phi: GridFunction, Mphi: GridFunction, sense: str,
                                  tol: float = 1e-8, mask: Optional[np.ndarray] = None) -> list:
    """Nodes where ``M phi >= phi`` (minimising) or ``M phi <= phi`` (maximising) fails."""
    gap = Mphi.values - phi.values
    bad = gap < -tol if sense == MINIMIZE else gap > tol
    if mask is not None:
        bad &= mask
    return [int(i) for i in np.nonzero(bad)[0]]
