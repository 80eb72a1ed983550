import json

import pytest

from poissonlab.cli import main
from poissonlab.experiments import ConfigError, run_experiment


def test_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert "cubic_model" in out and "polterovich" in out
    assert "DERIVED" in out and "SOURCE" in out


def test_rate_sweep(tmp_path):
    out = tmp_path / "rs"
    code = main(["run", "--scenario", "cubic_model", "--experiment", "rate-sweep",
                 "--eps", "1e-3,1e-4,1e-5,1e-6", "--resolution", "101", "--out", str(out)])
    assert code == 0
    lines = (out / "rate.csv").read_text().splitlines()
    assert lines[0].startswith("# poissonlab-csv v1")
    assert len(lines) == 2 + 4
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] and 0.64 <= rep["values"]["slope"] <= 0.70
    assert all("resolution" in c for c in rep["checks"])
    assert (out / "rate.svg").read_text().lstrip().startswith("<?xml")


def test_deterministic(tmp_path):
    args = ["run", "--scenario", "cubic_model", "--experiment", "rate-sweep",
            "--eps", "1e-3,1e-4,1e-5,1e-6", "--resolution", "61"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("rate.csv", "rate.svg", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_counterexample_incomplete(tmp_path, capsys):
    code = main(["run", "--scenario", "incomplete_flow", "--experiment", "counterexample",
                 "--n", "1,4", "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    names = [c["name"] for c in rep["checks"] if c["pass"]]
    assert "n=4: {f_n,g_n} = 0 on grid" in names
    assert "n=4: g_n flow leaves the domain" in names


def test_missing_scenario(tmp_path, capsys):
    code = main(["run", "--scenario", "nope", "--experiment", "rate-sweep", "--out",
                 str(tmp_path)])
    assert code == 2
    assert "nope" in capsys.readouterr().err


def test_no_experiment(tmp_path):
    assert main(["run", "--out", str(tmp_path)]) == 2


def test_partial_triple(tmp_path):
    assert main(["run", "--experiment", "displacement-sim", "--t", "0.1",
                 "--out", str(tmp_path)]) == 2


def test_bad_eps_list():
    with pytest.raises(SystemExit):
        main(["run", "--experiment", "rate-sweep", "--eps", "a,b"])


def test_expectation_failure(tmp_path, capsys):
    # a triple that violates the sufficient condition is reported as a failed check
    code = main(["run", "--experiment", "displacement-sim", "--t", "0.02", "--r", "0.005",
                 "--alpha", "0.01", "--samples", "256", "--out", str(tmp_path)])
    assert code == 1
    assert "condition holds" in capsys.readouterr().err


def test_config_file(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[experiment]\nkind = "counterexample"\nscenario = "staircase"\n'
                   f'out = "{(tmp_path / "o").as_posix()}"\n[params]\nn = [5, 20, 100]\n')
    assert main(["run", str(cfg)]) == 0
    assert (tmp_path / "o" / "counterexample.csv").read_text().count("\n") == 2 + 3


def test_config_file_scenario_table(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('''
[experiment]
kind = "factorize"
l = 1
[experiment.scenario]
name = "inline"
dim = 2
f = "x - x^3/3 - x*y^2"
g = "y"
box = { lows = [-1, -1], highs = [1, 1], resolution = 21 }
''')
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("kind = \n")
    assert main(["run", str(bad)]) == 2
    nokind = tmp_path / "nokind.toml"
    nokind.write_text('scenario = "cubic_model"\n')
    assert main(["run", str(nokind)]) == 2
    assert main(["run", str(tmp_path / "missing.toml")]) == 2
    with pytest.raises(ConfigError):
        run_experiment("nope", {}, tmp_path)


@pytest.mark.parametrize("kind,scenario,extra", [
    ("factorize", "quartic_model", {"l": 2}),
    ("counterexample", "nonlocal_cutoff", {"n": [2]}),
    ("counterexample", "polterovich", {"n": [1, 4]}),
    ("counterexample", "torus_B", {}),
    ("bounds-report", "quartic_model", {"l": 2, "eps": [1e-3]}),
])
def test_other_kinds(tmp_path, kind, scenario, extra):
    rep = run_experiment(kind, dict(scenario=scenario, **extra), tmp_path)
    assert rep.passed, rep.failures()
    assert (tmp_path / "report.json").exists()


def test_counterexample_unsupported(tmp_path):
    with pytest.raises(ConfigError):
        run_experiment("counterexample", {"scenario": "cubic_model"}, tmp_path)
