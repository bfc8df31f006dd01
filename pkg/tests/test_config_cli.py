from __future__ import annotations

import csv
import io
import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from finsysid import cli
from finsysid.config import Config, experiment_from, system_from, to_matrix, to_scalar
from finsysid.errors import ConfigError, ContractError
from finsysid.systems import ArxSystem, StateSpaceInnovation, Trajectory

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# --- config parsing -----------------------------------------------------------------------

def test_parse_basics():
    cfg = Config.parse("# header\nseed = 3\nsystem.a = 0.5, -0.1  # trailing\n\nnoise.family = rademacher\n")
    assert cfg.int("seed") == 3
    assert cfg.floats("system.a") == [0.5, -0.1]
    assert cfg.str("noise.family") == "rademacher"
    assert cfg.sections() == ["noise", "system"]
    assert cfg.float("missing", 2.5) == 2.5
    with pytest.raises(ConfigError, match="missing"):
        cfg.float("missing")


def test_parse_errors():
    with pytest.raises(ConfigError, match="duplicate"):
        Config.parse("a = 1\na = 2\n")
    with pytest.raises(ConfigError, match="key = value"):
        Config.parse("just words\n")
    with pytest.raises(ConfigError):
        Config.parse("x = abc\n").float("x")
    with pytest.raises(ConfigError):
        Config.parse("x = 1.5\n").int("x")
    with pytest.raises(ConfigError):
        Config.load("/nonexistent/dir/file.cfg")


def test_matrix_and_scalar_conversion():
    np.testing.assert_array_equal(to_matrix("1, 2; 3, 4"), [[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(to_matrix("0.9"), [[0.9]])
    with pytest.raises(ConfigError):
        to_matrix("1, 2; 3")
    assert to_scalar("3") == 3 and isinstance(to_scalar("3"), int)
    assert to_scalar("0.25") == 0.25
    assert to_scalar("true") is True
    assert to_scalar("0, 0.5") == (0.0, 0.5)


def test_system_kinds():
    arx = system_from(Config.parse("system.a = 0.9, -0.14\nsystem.b = 1\n"))
    assert isinstance(arx, ArxSystem) and (arx.p, arx.q) == (2, 1)
    mat = system_from(Config.parse("system.p = 1\nsystem.A_1 = 0.5, 0; 0.1, 0.3\n"))
    assert mat.d_y == 2 and mat.q == 0
    ss = system_from(Config.parse("system.kind = state_space\nsystem.A = 0.5\nsystem.B = 1\nsystem.C = 1\n"
                                  "system.F = 0.2\nsystem.Sigma_E_sqrt = 1\n"))
    assert isinstance(ss, StateSpaceInnovation)
    std = system_from(Config.parse("system.kind = standard\nsystem.A = 0.9\nsystem.B = 1\nsystem.C = 1\n"
                                   "system.Sigma_W = 1\nsystem.Sigma_V = 1\n"))
    p = max(np.roots([1.0, -0.81, -1.0]).real)
    assert std.F[0, 0] == pytest.approx(0.9 * p / (p + 1), rel=1e-9)
    with pytest.raises(ConfigError):
        system_from(Config.parse("system.kind = bilinear\n"))
    with pytest.raises(ContractError):
        system_from(Config.parse("system.a = 1.5\n"))


def test_experiment_from_options():
    cfg = Config.load(str(CONFIGS / "nonlinear_gains.cfg"))
    exp = experiment_from(cfg, 5)
    assert exp.estimator == "nonlinear" and exp.base_seed == 5
    assert exp.options["gains"] == (0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75)
    assert exp.options["k"] == 16


# --- CLI ----------------------------------------------------------------------------------

def test_bounds_golden(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.run("bounds", str(CONFIGS / "bounds_golden.cfg"), str(out)) == 0
    reports = {r["name"]: r for r in json.loads((out / "bounds.json").read_text())}
    expected = {
        "hw_tail": 2 * math.exp(-120 / (16 * math.sqrt(2))),
        "csys": 1 + 4 * math.sqrt(2) * (1 / 18 + 9),
        "covering_cardinality_bound": 8.0,
        "matrix_markov_factor": 30.0,
        "power_norm_bound": 2 * math.e,
        "nonlinear_bound": 1.0,
    }
    assert set(reports) == set(expected)
    for name, value in expected.items():
        assert reports[name]["value"] == pytest.approx(value, rel=1e-9), name
    assert reports["hw_tail"]["inputs"]["raw_value"] == reports["hw_tail"]["value"]
    printed = capsys.readouterr().out
    assert "hw_tail" in printed and "bounds.json" in printed


def test_simulate_zero_noise(tmp_path):
    out = tmp_path / "sim"
    assert cli.run("simulate", str(CONFIGS / "simulate_zero.cfg"), str(out)) == 0
    traj = Trajectory.from_csv((out / "trajectory.csv").read_text())
    assert traj.T == 20
    assert np.all(traj.Y == 0.0)
    assert "-0" not in (out / "trajectory.csv").read_text()


def test_missing_config_exit_2_without_outputs(tmp_path):
    out = tmp_path / "never"
    assert cli.run("bounds", str(tmp_path / "nope.cfg"), str(out)) == 2
    assert not out.exists()


def test_seed_policy(tmp_path):
    text = "system.a = 0.5\nsimulate.T = 30\n"
    path = write(tmp_path, text)
    assert cli.run("simulate", path, str(tmp_path / "a")) == 2
    assert not (tmp_path / "a").exists()
    assert cli.run("simulate", path, str(tmp_path / "b"), seed_override=4) == 0
    seeded = write(tmp_path, "seed = 4\n" + text, "seeded.cfg")
    assert cli.run("simulate", seeded, str(tmp_path / "c")) == 0
    assert cli.run("simulate", seeded, str(tmp_path / "d"), seed_override=5) == 0
    b, c, d = ((tmp_path / x / "trajectory.csv").read_bytes() for x in "bcd")
    assert b == c and b != d


def test_domain_error_exit_1(tmp_path):
    path = write(tmp_path, "riccati.A = 0.99\nriccati.C = 1\nriccati.Sigma_W = 1\nriccati.Sigma_V = 1\n"
                           "riccati.max_iter = 2\n")
    assert cli.run("riccati", path, str(tmp_path / "r")) == 1
    bad = write(tmp_path, "seed = 1\nsystem.a = 2.0\nsimulate.T = 5\n", "bad.cfg")
    assert cli.run("simulate", bad, str(tmp_path / "s")) == 1


def test_unknown_bound_inputs_are_config_errors(tmp_path):
    path = write(tmp_path, "hw_tail.s = 1\nhw_tail.sigma = 1\n")
    assert cli.run("bounds", path, str(tmp_path / "x")) == 2


def test_identify_recovers_arx(tmp_path):
    out = tmp_path / "id"
    assert cli.run("identify", str(CONFIGS / "identify_arx.cfg"), str(out)) == 0
    est = json.loads((out / "estimate.json").read_text())
    np.testing.assert_allclose(est["theta_hat"], [0.9, -0.14, 1.0], atol=0.05)
    # identify from a saved trajectory needs no seed
    path = write(tmp_path, f"identify.trajectory = {out / 'trajectory.csv'}\nidentify.p = 2\nidentify.q = 1\n")
    assert cli.run("identify", path, str(tmp_path / "id2")) == 0
    again = json.loads((tmp_path / "id2" / "estimate.json").read_text())
    assert again["theta_hat"] == est["theta_hat"]


def test_riccati_output(tmp_path):
    out = tmp_path / "ric"
    assert cli.run("riccati", str(CONFIGS / "riccati_scalar.cfg"), str(out)) == 0
    payload = json.loads((out / "riccati.json").read_text())
    p = max(np.roots([1.0, -0.81, -1.0]).real)
    assert payload["P_star"][0][0] == pytest.approx(p, rel=1e-10)
    assert payload["residual"] <= 1e-12


@pytest.mark.parametrize("sub,cfg_text,files", [
    ("simulate", "seed = 1\nsystem.a = 0.7\nsystem.b = 0.5\nsimulate.T = 64\nsimulate.restart_k = 16\n",
     ["trajectory.csv"]),
    ("mc-coverage", "seed = 2\nsystem.a = 0.5\nexperiment.estimator = selfnorm\nexperiment.horizons = 64, 128\n"
                    "experiment.trials = 25\nexperiment.deltas = 0.1, 0.2\n", ["coverage.csv", "coverage.json"]),
    ("rate", "seed = 3\nsystem.a = 0.5\nexperiment.horizons = 64, 128, 256, 512\nexperiment.trials = 20\n",
     ["rate.csv", "rate.json"]),
    ("tail", "seed = 4\ntail.M = 2, 1; 1, 3\ntail.samples = 2000\ntail.s_grid = 0, 1, 5\nnoise.family = uniform\n",
     ["tail.csv", "tail.json"]),
])
def test_reruns_are_byte_identical_and_config_untouched(tmp_path, sub, cfg_text, files):
    path = write(tmp_path, cfg_text)
    before = Path(path).read_bytes()
    assert cli.run(sub, path, str(tmp_path / "one")) == 0
    assert cli.run(sub, path, str(tmp_path / "two")) == 0
    for name in files:
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes(), name
    assert Path(path).read_bytes() == before
    assert sorted(os.listdir(tmp_path / "one")) == sorted(files)


def test_coverage_csv_rows(tmp_path):
    path = write(tmp_path, "seed = 2\nsystem.a = 0.5\nexperiment.estimator = pe\nexperiment.horizons = 100, 200\n"
                           "experiment.trials = 10\n")
    assert cli.run("mc-coverage", path, str(tmp_path / "o")) == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "o" / "coverage.csv").read_text())))
    assert [(r["experiment"], r["T"]) for r in rows] == [("experiment:pe", "100"), ("experiment:pe", "200")]
    side = json.loads((tmp_path / "o" / "coverage.json").read_text())
    assert side["base_seed"] == 2 and side["config"]["estimator"] == "pe"


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "finsysid", "bounds", "--config",
                           str(CONFIGS / "bounds_golden.cfg"), "--out", str(tmp_path / "m")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "m" / "bounds.json").exists()
    proc = subprocess.run([sys.executable, "-m", "finsysid", "simulate", "--config", str(tmp_path / "x.cfg"),
                           "--out", str(tmp_path / "n")], capture_output=True, text=True)
    assert proc.returncode == 2 and "config error" in proc.stderr
