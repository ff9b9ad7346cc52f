import json
import os
import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from impulse_stopper import pipeline as pl
from impulse_stopper.cli import main

EX1 = pl.reference_config("example1")


def _small_config(tmp_path, upper="10.0", nodes="400", extra=""):
    text = EX1.read_text()
    text = re.sub(r"(?m)^upper = .*$", f"upper = {upper}", text)
    text = re.sub(r"(?m)^nodes = .*$", f"nodes = {nodes}", text)
    path = tmp_path / "small.cfg"
    path.write_text(text + extra)
    return path


def _manifests(root):
    return sorted(p.parent for p in Path(root).rglob("manifest.json"))


def test_solve_writes_csvs_and_one_manifest(tmp_path):
    cfg = _small_config(tmp_path)
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "solve" and man["seed"] == 42
    assert set(man["files"]) == {"constants.txt", "value.csv", "regions.csv", "residuals.csv"}
    raw = (out / "value.csv").read_bytes()
    assert raw.startswith(b"x,value,closed_form\n") and b"\r" not in raw
    # 17 significant digits
    assert re.search(rb"\n0\.01,-0\.98999999999999999,", raw)
    assert _manifests(out) == [out]


def test_cli_is_a_thin_shell(tmp_path):
    cfg = _small_config(tmp_path)
    out = tmp_path / "cli"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    lib = tmp_path / "lib"
    lib.mkdir()
    pl.write_solve(lib, pl.run_solve(pl.load_setup(cfg)))
    for name in ("constants.txt", "value.csv", "regions.csv", "residuals.csv"):
        assert (out / name).read_bytes() == (lib / name).read_bytes(), name


def test_verify_accepts_the_solver_output_and_rejects_a_bump(tmp_path):
    cfg = _small_config(tmp_path)
    out = tmp_path / "s"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["verify", "--config", str(cfg), str(out / "value.csv"), "--out",
                 str(tmp_path / "v")]) == 0
    assert "overall PASS" in (tmp_path / "v" / "certificate.txt").read_text()
    header, rows = pl.read_csv(out / "value.csv")
    rows = [list(r) for r in rows]
    mid = len(rows) // 5
    rows[mid][1] = str(float(rows[mid][1]) + 0.5)
    pl.write_csv(tmp_path / "bumped.csv", header, rows)
    assert main(["verify", "--config", str(cfg), str(tmp_path / "bumped.csv"), "--out",
                 str(tmp_path / "v2")]) == 1
    assert "overall FAIL" in (tmp_path / "v2" / "certificate.txt").read_text()


def test_bequest_verifies_on_a_stop_everywhere_model(tmp_path):
    cfg = _small_config(tmp_path, upper="2.0", nodes="200")
    x = np.linspace(0.01, 2.0, 200)
    pl.write_csv(tmp_path / "g.csv", ["x", "value"], [(v, v - 1.0) for v in x])
    assert main(["verify", "--config", str(cfg), str(tmp_path / "g.csv"), "--out",
                 str(tmp_path / "v")]) == 0


def test_simulate_is_deterministic(tmp_path):
    cfg = _small_config(tmp_path)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["simulate", "--config", str(cfg), "--out", str(out), "--paths", "500",
                     "--dt", "0.01", "--deviations"]) == 0
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    assert "summary.csv" in names and "deviations.csv" in names
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "c"), "--paths", "500",
                 "--dt", "0.01", "--seed", "7"]) == 0
    assert (tmp_path / "c" / "summary.csv").read_bytes() != (outs[0] / "summary.csv").read_bytes()


@pytest.mark.parametrize("edit,field", [
    (("alpha = 0.05", "alpha = banana"), "diffusion.alpha"),
    (("model = gbm", "model = heston"), "diffusion.model"),
    (("nodes = 400", "nodes = 2"), "grid.nodes"),
    (("dt = 1e-3", "dt = -1"), "simulation.dt"),
])
def test_config_errors_exit_2_without_outputs(tmp_path, capsys, edit, field):
    cfg = _small_config(tmp_path)
    cfg.write_text(cfg.read_text().replace(*edit))
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 2
    assert field in capsys.readouterr().err
    assert not out.exists()


def test_bad_override_and_thread_count_exit_2(tmp_path):
    cfg = _small_config(tmp_path)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"),
                 "--paths", "10"]) == 2
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o"), "--threads", "0"]) == 2
    assert not (tmp_path / "o").exists()


def test_missing_inputs_exit_3(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "o")]) == 3
    cfg = _small_config(tmp_path)
    assert main(["verify", "--config", str(cfg), str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "o")]) == 3
    cfg2 = _small_config(tmp_path, extra="policy = missing-constants.txt\n")
    assert main(["simulate", "--config", str(cfg2), "--out", str(tmp_path / "o"),
                 "--paths", "100"]) == 3
    assert not (tmp_path / "o").exists()


def test_grid_mismatch_exits_4(tmp_path):
    cfg = _small_config(tmp_path)
    out = tmp_path / "s"
    assert main(["solve", "--config", str(cfg), "--out", str(out), "--grid", "300"]) == 0
    assert main(["verify", "--config", str(cfg), str(out / "value.csv"),
                 "--out", str(tmp_path / "v")]) == 4


def _run(args, env_extra):
    env = dict(os.environ, **env_extra)
    return subprocess.run([sys.executable, "-m", "impulse_stopper.cli", *args], env=env,
                          capture_output=True, text=True)


def test_log_level_from_environment(tmp_path):
    cfg = _small_config(tmp_path, nodes="100")
    r = _run(["solve", "--config", str(cfg), "--out", str(tmp_path / "d")],
             {"IMPULSE_STOPPER_LOG": "debug"})
    assert r.returncode == 0 and "DEBUG" in r.stderr
    r = _run(["solve", "--config", str(cfg), "--out", str(tmp_path / "e")],
             {"IMPULSE_STOPPER_LOG": "error"})
    assert r.returncode == 0 and "DEBUG" not in r.stderr
    r = _run(["solve", "--config", str(cfg), "--out", str(tmp_path / "f")],
             {"IMPULSE_STOPPER_LOG": "chatty"})
    assert r.returncode == 2 and not (tmp_path / "f").exists()


@pytest.mark.slow
def test_reproduce_investor_jump(tmp_path):
    out = tmp_path / "r"
    code = main(["reproduce", "investor-jump", "--out", str(out), "--paths", "2000"])
    header, rows = pl.read_csv(out / "acceptance.csv")
    verdict = {r[0]: r[2] for r in rows}
    assert verdict["AC8"] == "true" and verdict["AC9"] == "true"
    # the investor Monte Carlo row is expected to fail (see the simulation tests)
    assert verdict["MC"] == "false" and code == 1
    assert _manifests(out) == sorted([out, out / "simulate", out / "solve"])
