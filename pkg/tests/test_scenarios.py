import math

import numpy as np
import pytest

from poissonlab import scenarios
from poissonlab.bracketops import phi_invariant, poisson
from poissonlab.fieldexpr import FieldDomainError, grid_max, sup_norm


def test_catalog():
    names = scenarios.names()
    assert len(names) >= 7
    for n in ("cubic_model", "polterovich", "incomplete_flow", "nonlocal_cutoff", "staircase"):
        assert n in names


@pytest.mark.parametrize("name", scenarios.names())
def test_references_verify(name):
    sc = scenarios.get(name, verify=False)
    got = sc.verify()
    assert set(got) == {r.name for r in sc.references}
    assert sc.summary()["name"] == name


def test_unknown():
    with pytest.raises(scenarios.ScenarioError):
        scenarios.get("nope")


def test_wrong_reference_detected():
    sc = scenarios.get("cubic_model", verify=False)
    sc.references[1].value = 5.0
    with pytest.raises(scenarios.ScenarioError):
        sc.verify()


def test_cubic_and_dual_share_bracket():
    a, b = scenarios.get("cubic_model"), scenarios.get("cubic_model_dual")
    pts = np.random.default_rng(1).uniform(-1, 1, (30, 2))
    assert np.allclose(a.h.evaluate(pts), b.h.evaluate(pts), atol=1e-14)


def test_incomplete_flow_domain():
    sc = scenarios.get("incomplete_flow")
    chi = sc.aux["chi"]
    with pytest.raises(FieldDomainError):
        chi.at([0, 0, -1.5, 0])


def test_vanishing_pair_sign():
    sc = scenarios.get("polterovich")
    FG = poisson(sc.families["F"](16), sc.families["G"](16), sc.conv)
    assert sup_norm(FG + sc.aux["chi_chi_prime"], sc.box).value < 1e-10


def test_torus_form():
    sc = scenarios.get("torus_B")
    B = sc.aux["B"]
    assert B.is_antisymmetric()
    assert B(sc.f, sc.g).at([1.0, 2.0, 0.0]) == pytest.approx(1.0)


TOML = """
[scenario]
name = "user_cubic"
dim = 2
f = "x - x^3/3 - x*y^2"
g = "y"
x = [0.0, 0.0]
box = { lows = [-1, -1], highs = [1, 1], resolution = 41 }
references = { Phi = 4.0, h = 1.0 }
"""


def test_toml(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text(TOML)
    sc = scenarios.load_toml(p)
    assert sc.name == "user_cubic" and sc.box.resolution == (41, 41)
    assert phi_invariant(sc.f, sc.g, sc.conv).at(sc.x) == pytest.approx(4.0)


def test_toml_bad_reference(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text(TOML.replace("Phi = 4.0", "Phi = 3.0"))
    with pytest.raises(scenarios.ScenarioError):
        scenarios.load_toml(p)


def test_toml_convention_and_missing(tmp_path):
    d = {"name": "s", "dim": 2, "f": "x", "g": "y", "box": {"lows": [-1, -1], "highs": [1, 1]},
         "convention": {"sign": -1}, "references": {"h": -1.0}}
    sc = scenarios.scenario_from_dict(d)
    assert sc.h.at([0, 0]) == -1.0
    with pytest.raises(scenarios.ScenarioError):
        scenarios.scenario_from_dict({"name": "s", "dim": 2})
    with pytest.raises(scenarios.ScenarioError):
        scenarios.scenario_from_dict(dict(d, convention="weird"))
