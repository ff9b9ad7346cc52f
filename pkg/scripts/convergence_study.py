"""Grid convergence of the policy-iteration solver on the threshold model.

Prints the sup error against the closed form, the boundary offsets in cells
and the observed order per refinement.  Small grids are dominated by where
the stop boundary falls between nodes, so orders settle only from about
2000 nodes upward.

    python3 scripts/convergence_study.py --nodes 500 1000 2000 4000 8000 --out conv.csv
"""

import argparse
import math
import time

import numpy as np

from impulse_stopper import acceptance as ac
from impulse_stopper import closedform as cf
from impulse_stopper.pipeline import write_csv
from impulse_stopper.qvi import QviProblem, qvi_residual, solve_qvi
from impulse_stopper.model import GridFunction
from impulse_stopper.verify import IMPULSE, STOP


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--nodes", type=int, nargs="+", default=[500, 1000, 2000, 4000, 8000])
    p.add_argument("--out", default=None, help="optional CSV")
    args = p.parse_args()

    params = ac.smooth_fit_params()
    sol = cf.example1_solve(params)
    game = cf.example1_game(params)
    rows, prev = [], None
    print(f"{'nodes':>6} {'sup error':>11} {'order':>6} {'stop off':>9} {'imp off':>8} "
          f"{'iters':>5} {'cf residual':>11} {'secs':>6}")
    for n in args.nodes:
        t0 = time.perf_counter()
        g = ac.solver_grid(sol, n)
        phi, st = solve_qvi(QviProblem(game, g, "extrapolate-linear"))
        secs = time.perf_counter() - t0
        x, h = g.points[:, 0], g.h[0]
        err = float(np.max(np.abs(phi.values - cf.example1_psi(sol, x))))
        order = math.log(prev / err) / math.log(2) if prev else float("nan")
        stop_off = (x[st.labels == STOP].max() - sol.x_hat) / h
        imp_off = (x[st.labels == IMPULSE].min() - sol.x_tilde) / h
        # residual of the exact solution on the same grid, away from the kinks
        exact = GridFunction(g, cf.example1_psi(sol, x), "extrapolate-linear")
        r = qvi_residual(exact, QviProblem(game, g, "extrapolate-linear")).values
        keep = (np.abs(x - sol.x_hat) > 2 * h) & (np.abs(x - sol.x_tilde) > 2 * h) & ~g.boundary_mask()
        res = float(np.max(np.abs(r[keep])))
        print(f"{n:6d} {err:11.3e} {order:6.2f} {stop_off:9.2f} {imp_off:8.2f} "
              f"{st.iterations:5d} {res:11.3e} {secs:6.2f}")
        rows.append((n, err, order, stop_off, imp_off, st.iterations, res, secs))
        prev = err
    if args.out:
        write_csv(args.out, ["nodes", "sup_error", "order", "stop_offset_cells", "impulse_offset_cells",
                             "iterations", "closed_form_residual", "seconds"], rows)


if __name__ == "__main__":
    main()
