"""Monte Carlo value of the threshold equilibrium against the closed form.

For each start point between the boundaries: the estimate, its standard
error, the time-step bias from a dt / 2 run on the same seeds, and the gap
to the closed form in standard errors.

    python3 scripts/mc_consistency.py --paths 20000 --dt 1e-3 --seed 0
"""

import argparse
from dataclasses import replace

import numpy as np

from impulse_stopper import acceptance as ac
from impulse_stopper import closedform as cf
from impulse_stopper.pipeline import write_csv
from impulse_stopper.simulate import SimulationConfig, dt_bias, estimate_payoff


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--paths", type=int, default=20_000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--starts", type=int, default=5)
    p.add_argument("--out", default=None)
    args = p.parse_args()

    params = ac.smooth_fit_params()
    sol = cf.example1_solve(params)
    game = cf.example1_game(params)
    ctrl, stop = cf.example1_policies(sol, game)
    cfg = SimulationConfig(dt=args.dt, n_paths=args.paths, seed=args.seed)
    rows = []
    print(f"{'x0':>6} {'closed form':>12} {'MC':>12} {'stderr':>9} {'dt bias':>9} {'gap/se':>7} {'impulses':>8}")
    for x0 in np.linspace(sol.x_hat, sol.x_tilde, args.starts + 2)[1:-1]:
        est = estimate_payoff(game, ctrl, stop, cfg, x0)
        b = dt_bias(game, ctrl, stop, replace(cfg, seed=args.seed + 1), x0,
                    n_paths=min(args.paths, 10_000))
        ref = float(cf.example1_psi(sol, x0))
        z = (est.mean[0] - ref) / est.stderr[0]
        print(f"{x0:6.3f} {ref:12.6f} {est.mean[0]:12.6f} {est.stderr[0]:9.2e} {b.bias:+9.2e} "
              f"{z:+7.2f} {est.mean_interventions:8.3f}")
        rows.append((x0, ref, est.mean[0], est.stderr[0], b.bias, z, est.mean_interventions))
    if args.out:
        write_csv(args.out, ["x0", "closed_form", "mc_mean", "mc_stderr", "dt_bias", "gap_in_se",
                             "mean_interventions"], rows)


if __name__ == "__main__":
    main()
