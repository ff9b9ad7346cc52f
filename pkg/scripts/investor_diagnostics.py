"""Why the investor closed form is not the value of its own game.

The discounted exit payoff e^{-delta t}(g1 omega + lambda_T) increases along
the deterministic drift of omega exactly when omega exceeds the closed-form
exit threshold.  A minimising stopper therefore prefers exiting at once
above the threshold and waiting below it, the reverse of the closed-form
exit region.  This script prints that drift sign on both sides, the grid
solver's region counts, the fraction of nodes the classifier cannot place
and a small Monte Carlo comparison.

    python3 scripts/investor_diagnostics.py [--jumps] [--paths 4000]
"""

import argparse
import numpy as np

from impulse_stopper import closedform as cf
from impulse_stopper.model import Grid, GridFunction
from impulse_stopper.qvi import QviProblem, solve_qvi
from impulse_stopper.simulate import SimulationConfig, simulate_investor
from impulse_stopper.verify import RegionError, classify_regions


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--jumps", action="store_true", help="single downward jump atom")
    p.add_argument("--paths", type=int, default=4000)
    p.add_argument("--nodes", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    params = cf.Example2Params(jump_marks=(-0.2,), jump_rates=(0.5,)) if args.jumps else cf.Example2Params()
    sol = cf.example2_solve(params)
    g = params.delta / sol.k
    print(f"k = {sol.k:.6g}, omega growth rate {g:.4g} vs delta {params.delta:g}, "
          f"omega_star = {sol.omega_star:.6g}, a = {sol.a:.6g}")
    for w in (0.5 * sol.omega_star, 2.0 * sol.omega_star):
        slope = (params.g1 * g * w - params.delta * (params.g1 * w + params.lambda_T))
        print(f"  d/dt of discounted exit payoff at omega = {w:.4g}: {slope:+.4g}")

    grid = Grid((0.2, 0.5), (4.0, 5.0), (args.nodes, args.nodes))
    X = grid.points
    game = cf.investor_reduced_game(sol)
    phi = GridFunction(grid, cf.investor_reduced_value(sol, X[:, 0], X[:, 1]), "dirichlet")
    try:
        rm = classify_regions(phi, game)
        print(f"classification of the closed form: {rm.counts()}")
    except RegionError as exc:
        print(f"classification of the closed form: {exc}")
    v, st = solve_qvi(QviProblem(game, grid, "dirichlet"))
    print(f"grid solver regions: {st.counts()}")
    gap = np.abs(v.values - phi.values)
    print(f"solver vs closed form: max gap {gap.max():.4g}, median {np.median(gap):.4g}")

    y2 = 0.5 * (sol.y_hat + sol.y_tilde)
    for w in (2.0 * sol.omega_star, 4.0 * sol.omega_star):
        ip = simulate_investor(params, sol, SimulationConfig(n_paths=args.paths, seed=args.seed), y1=w, y2=y2)
        est = ip.estimate()
        ref = float(cf.investor_reduced_value(sol, y2, w))
        print(f"  MC at (y2={y2:.3g}, omega={w:.3g}): {est.mean[0]:.6g} +- {est.stderr[0]:.2g}, "
              f"closed form {ref:.6g}, gap {(est.mean[0] - ref) / est.stderr[0]:+.1f} se, "
              f"exited {np.mean(ip.exit_reason == 0):.0%}, mean exit time {ip.exit_time.mean():.3g}")


if __name__ == "__main__":
    main()
