"""Unilateral deviations from the threshold equilibrium.

Each deviation shifts one threshold of one player; the table shows the
deviating player's advantage from staying at equilibrium with its paired
standard error (common random numbers).

    python3 scripts/deviation_table.py --paths 20000 --seed 0
"""

import argparse

from impulse_stopper import acceptance as ac
from impulse_stopper import closedform as cf
from impulse_stopper.pipeline import write_csv
from impulse_stopper.simulate import SimulationConfig, deviation_test, threshold_deviations


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--paths", type=int, default=20_000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0", type=float, default=None, help="start (default: midpoint of the boundaries)")
    p.add_argument("--out", default=None)
    args = p.parse_args()

    params = ac.smooth_fit_params()
    sol = cf.example1_solve(params)
    game = cf.example1_game(params)
    x0 = args.x0 if args.x0 is not None else 0.5 * (sol.x_hat + sol.x_tilde)
    devs = threshold_deviations(game, sol.x_tilde, sol.x_low, sol.x_hat)
    rows = deviation_test(game, cf.example1_policies(sol, game), devs,
                          SimulationConfig(dt=args.dt, n_paths=args.paths, seed=args.seed), x0)
    print(f"start x0 = {x0:.4f}, {args.paths} paths")
    for r in rows:
        print(f"{r.label:32s} {r.player:10s} eq {r.equilibrium:10.5f} dev {r.deviation:10.5f} "
              f"adv {r.advantage:+.2e} ({r.advantage / r.paired_stderr:+6.2f} se) "
              f"{'holds' if r.holds else 'VIOLATED'}")
    if args.out:
        write_csv(args.out, ["deviation", "player", "equilibrium", "deviation_value", "advantage",
                             "paired_stderr", "holds"],
                  [(r.label, r.player, r.equilibrium, r.deviation, r.advantage, r.paired_stderr, r.holds)
                   for r in rows])


if __name__ == "__main__":
    main()
