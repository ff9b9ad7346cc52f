"""Command-line entry point.

    impulse-stopper solve     --config FILE [--out DIR] [--grid N] [--tol F] [--grid-only]
    impulse-stopper simulate  --config FILE [--out DIR] [--seed S] [--paths N] [--dt F] [--deviations]
    impulse-stopper verify    --config FILE VALUE_CSV [--out DIR] [--tol F]
    impulse-stopper reproduce {example1,investor-nojump,investor-jump} [--out DIR] [--seed S] [--paths N]

Exit codes: 0 success, 1 verification failure, 2 config error, 3 missing
input, 4 shape mismatch.  ``IMPULSE_STOPPER_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_MISSING, EXIT_SHAPE = 0, 1, 2, 3, 4
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
MANIFEST = "manifest.json"

log = logging.getLogger("impulse_stopper")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    common.add_argument("--paths", type=int, help="Monte Carlo paths")
    common.add_argument("--dt", type=float, help="simulation step")
    common.add_argument("--grid", type=int, help="grid nodes per axis")
    common.add_argument("--tol", type=float, help="solver / certificate tolerance")
    common.add_argument("--threads", type=int, help="cap on worker threads")

    p = argparse.ArgumentParser(prog="impulse-stopper", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common], help="closed form and grid solver")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--grid-only", action="store_true", help="skip the closed form")
    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo under threshold policies")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--deviations", action="store_true", help="run unilateral deviation tests")
    s = sub.add_parser("verify", parents=[common], help="certificate for a value table")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("value", type=Path, help="value CSV on the config grid")
    s = sub.add_parser("reproduce", parents=[common], help="full pipeline for a reference example")
    s.add_argument("example", choices=("example1", "investor-nojump", "investor-jump"))
    return p


def _setup_logging() -> None:
    raw = os.environ.get("IMPULSE_STOPPER_LOG", "error").strip().lower()
    if raw not in LOG_LEVELS:
        raise ValueError(f"IMPULSE_STOPPER_LOG: expected error, info or debug, got {raw!r}")
    logging.basicConfig(level=LOG_LEVELS[raw], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _version() -> str:
    from importlib.metadata import PackageNotFoundError, version
    try:
        return version("impulse_stopper")
    except PackageNotFoundError:
        return "unknown"


def write_manifest(out: Path, command: str, config, seed, started: float, files) -> None:
    doc = {"command": command, "config": None if config is None else str(config),
           "seed": seed, "output_directory": str(out), "version": _version(),
           "wall_clock_seconds": round(time.time() - started, 3),
           "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()), "files": list(files)}
    with open(out / MANIFEST, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _overrides(args) -> dict:
    return dict(seed=args.seed, paths=args.paths, dt=args.dt, nodes=args.grid,
                tol=args.tol if args.command == "solve" else None)


def _cmd_solve(args, pl) -> tuple:
    setup = pl.load_setup(args.config, **_overrides(args))
    res = pl.run_solve(setup, grid_only=args.grid_only)
    args.out.mkdir(parents=True, exist_ok=True)
    return EXIT_OK, pl.write_solve(args.out, res), setup.sim.seed


def _cmd_simulate(args, pl) -> tuple:
    setup = pl.load_setup(args.config, **_overrides(args))
    if setup.sim.policy is not None and not setup.sim.policy.is_file():
        raise pl.MissingInput(f"policy file not found: {setup.sim.policy}")
    res = pl.run_simulate(setup, deviations=args.deviations)
    args.out.mkdir(parents=True, exist_ok=True)
    files = pl.write_simulate(args.out, res)
    for r in res.deviations:
        print(f"{r[1]:32s} {r[2]:10s} advantage {r[5]:+.4g} +- {r[6]:.2g}  "
              f"{'holds' if r[7] else 'VIOLATED'}")
    return EXIT_OK, files, setup.sim.seed


def _cmd_verify(args, pl) -> tuple:
    setup = pl.load_setup(args.config, nodes=args.grid)
    if not args.value.is_file():
        raise pl.MissingInput(f"value file not found: {args.value}")
    res = pl.run_verify(setup, args.value, tol=args.tol)
    args.out.mkdir(parents=True, exist_ok=True)
    text = res.report()
    (args.out / "certificate.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return (EXIT_OK if res.passed else EXIT_FAIL), ["certificate.txt"], None


def _cmd_reproduce(args, pl) -> tuple:
    from . import acceptance as ac
    cfg_path = pl.reference_config(args.example)
    setup = pl.load_setup(cfg_path, seed=args.seed, paths=args.paths, dt=args.dt, nodes=args.grid)
    seed = setup.sim.seed
    args.out.mkdir(parents=True, exist_ok=True)
    files = []
    for stage, sub in (("solve", "solve"), ("simulate", "simulate")):
        d = args.out / sub
        d.mkdir(exist_ok=True)
        if stage == "solve":
            res = pl.run_solve(setup)
            names = pl.write_solve(d, res)
            v = pl.run_verify(setup, d / "value.csv")
            (d / "certificate.txt").write_text(v.report(), encoding="utf-8")
            names.append("certificate.txt")
        else:
            names = pl.write_simulate(d, pl.run_simulate(setup, deviations=setup.model == "gbm"))
        write_manifest(d, f"reproduce {args.example} ({stage})", cfg_path, seed, args._started, names)
        files += [f"{sub}/{n}" for n in names]
    rows = ac.criteria_for(args.example, seed=seed, paths=args.paths)
    pl.write_csv(args.out / "acceptance.csv", ["criterion", "title", "passed", "detail"],
                 [(r.id, r.title, r.passed, r.detail) for r in rows])
    files.append("acceptance.csv")
    print(ac.summary_table(rows), end="")
    return (EXIT_OK if all(r.ok for r in rows) else EXIT_FAIL), files, seed


COMMANDS = {"solve": _cmd_solve, "simulate": _cmd_simulate, "verify": _cmd_verify,
            "reproduce": _cmd_reproduce}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    args._started = time.time()
    try:
        _setup_logging()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    # thread caps must be in the environment before the numerical libraries load
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads: must be at least 1", file=sys.stderr)
            return EXIT_CONFIG
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    from . import pipeline as pl
    from .model import SpecError
    try:
        code, files, seed = COMMANDS[args.command](args, pl)
    except SpecError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pl.MissingInput as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except pl.ShapeMismatch as exc:
        print(f"shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    if args.command != "reproduce":
        write_manifest(args.out, args.command, getattr(args, "config", None), seed, args._started, files)
    else:
        write_manifest(args.out, f"reproduce {args.example}", None, seed, args._started, files)
    return code


if __name__ == "__main__":
    sys.exit(main())
