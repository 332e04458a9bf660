import json
import shutil
import subprocess

import numpy as np
import pytest

from preview_mpc import cli
from preview_mpc.scenario import ScenarioError, default_scenario_path, load_scenario, parse_scenario


@pytest.fixture
def small_config(tmp_path):
    """The shipped scenario on a coarse grid with short runs."""
    data = json.loads(default_scenario_path().read_text())
    data["grid"] = {"nx": 13, "ny": 13, "inflate": 0.05}
    data["steps"] = 8
    path = tmp_path / "small.json"
    path.write_text(json.dumps(data))
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_synth_writes_report(small_config, tmp_path, capsys):
    out = tmp_path / "o"
    assert run("synth", "--config", small_config, "--out", out, "--samples", 100) == cli.EXIT_OK
    rep = json.loads((out / "synth_report.json").read_text())
    assert rep["constants"]["alpha_x"] == pytest.approx(0.35)
    assert rep["reference"]["alpha_x"] == 0.328
    assert rep["sums"]["alpha_x+beta_x"] <= 1.0
    assert set(rep["lambda"]) == {"2", "inf", "1"}
    text = capsys.readouterr().out
    assert "reference" in text and "note:" in text
    assert json.loads((out / "ingredients.json").read_text())["gain_label"] == "deadbeat"


def test_simulate_outputs_are_deterministic(small_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("simulate", "--config", small_config, "--out", a) == cli.EXIT_OK
    assert run("simulate", "--config", small_config, "--out", b) == cli.EXIT_OK
    files = sorted(p.name for p in a.iterdir())
    assert files == ["trajectories.svg"] + [f"trajectory_{i}.csv" for i in range(5)]
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = (a / "trajectory_0.csv").read_text().splitlines()
    assert rows[0].startswith("k,x1,x2,u1,w1,w2,V,feasible,in_level_set")
    assert len(rows) == 9


@pytest.mark.parametrize("mode", ["tail", "random-delta", "nominal-baseline"])
def test_simulate_modes(small_config, tmp_path, mode):
    assert run("simulate", "--config", small_config, "--out", tmp_path, "--mode", mode,
               "--x0", "0.5,-0.5", "--steps", 4) == cli.EXIT_OK
    assert (tmp_path / "trajectory_0.csv").exists()


def test_simulate_infeasible_start(small_config, tmp_path, capsys):
    assert run("simulate", "--config", small_config, "--out", tmp_path, "--x0", "9.5,9.5") == cli.EXIT_INFEASIBLE
    assert "infeasible" in capsys.readouterr().err


def test_simulate_with_level_sets(small_config, tmp_path):
    assert run("simulate", "--config", small_config, "--out", tmp_path, "--x0", "1.9,2.5", "--levelsets") == 0
    lv = json.loads((tmp_path / "levelsets.json").read_text())
    assert len(lv) == 5 and np.array(lv["0"]["mask"]).shape == (13, 13)


@pytest.mark.parametrize("which", ["terminal", "controllability", "levelset", "roa"])
def test_sets(small_config, tmp_path, which):
    assert run("sets", "--config", small_config, "--out", tmp_path, "--which", which, "--w-index", "0,2") == 0
    data = json.loads((tmp_path / f"sets_{which}.json").read_text())
    assert data["which"] == which
    assert (tmp_path / f"sets_{which}.svg").read_text().startswith("<svg")


def test_sets_bad_index(small_config, tmp_path):
    assert run("sets", "--config", small_config, "--out", tmp_path, "--which", "terminal", "--w-index", "0..9") == 1


def test_verify_prop1(small_config, tmp_path):
    assert run("verify", "--config", small_config, "--out", tmp_path, "--suite", "prop1", "--samples", 100) == 0
    assert json.loads((tmp_path / "verify_prop1.json").read_text())["passed"]


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["sets", "--which", "nope"])
    assert exc.value.code == cli.EXIT_PARSE
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == cli.EXIT_PARSE


def test_malformed_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"plant": {"A": [[1, 1], [0, 1]],\n "B": [[0.5], [1]]\n')
    assert run("synth", "--config", bad, "--out", tmp_path) == cli.EXIT_PARSE
    assert "line" in capsys.readouterr().err
    assert run("synth", "--config", tmp_path / "missing.json") == cli.EXIT_PARSE


def test_synthesis_failure_exit_code(tmp_path):
    data = json.loads(default_scenario_path().read_text())
    data["gain"] = [[1.0, 1.0]]
    path = tmp_path / "unstable.json"
    path.write_text(json.dumps(data))
    assert run("synth", "--config", path, "--out", tmp_path) == cli.EXIT_SYNTH


def test_scenario_validation():
    data = json.loads(default_scenario_path().read_text())
    sc = parse_scenario(data)
    assert sc.N == 3 and len(sc.sequences) == 5 and len(sc.x0) == 5
    for key in ("plant", "sets", "weights"):
        broken = dict(data)
        del broken[key]
        with pytest.raises(ScenarioError):
            parse_scenario(broken)
    broken = json.loads(json.dumps(data))
    broken["schedule"]["sequences"][0] = [3.0, 0.0, 0.0]
    with pytest.raises(ScenarioError):
        parse_scenario(broken)
    broken = json.loads(json.dumps(data))
    broken["x0"] = [[1.0, 2.0, 3.0]]
    with pytest.raises(ScenarioError):
        parse_scenario(broken)
    with pytest.raises(ScenarioError):
        load_scenario().schedule("bogus")


@pytest.mark.skipif(shutil.which("preview-mpc") is None, reason="console script not installed")
def test_console_script():
    r = subprocess.run(["preview-mpc", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "synth" in r.stdout
