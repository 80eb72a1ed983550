import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poissonlab import scenarios
from poissonlab.bracketops import ham_vector_field
from poissonlab.fieldexpr import Box, parse_field
from poissonlab.ratemeter import (DegenerateCriticalPointError, MultiplicityError, RateTable,
                                  check_multiplicity, first_order_bound, fit_loglog,
                                  higher_bound, intermediate_bound, signed_root,
                                  theoretical_band, truncated_jet_bound,
                                  unicontinuity_criterion, upsilon_upper_curve)


@pytest.fixture(scope="module")
def cubic():
    return scenarios.get("cubic_model")


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 2.0), st.floats(1e-3, 10.0))
def test_fit_recovers_power_law(p, c):
    eps = np.geomspace(1e-2, 1e-7, 6)
    slope, icpt, rms = fit_loglog(eps, c * eps ** p)
    assert slope == pytest.approx(p, abs=1e-9) and math.exp(icpt) == pytest.approx(c, rel=1e-8)
    assert rms < 1e-9


def test_signed_root():
    assert signed_root(-8.0, 3) == pytest.approx(-2.0)
    assert np.allclose(signed_root([27.0, -1.0], 3), [3.0, -1.0])


class TestRateTable:
    def test_ordering(self):
        with pytest.raises(ValueError):
            RateTable([1e-4, 1e-3], [1, 2], (0, 1))

    def test_fit_needs_four(self):
        t = RateTable([1e-3, 1e-4, 1e-5], [1, 2, 3], (0, 1))
        with pytest.raises(ValueError):
            t.fit()

    def test_csv(self, tmp_path):
        e = np.array([1e-3, 1e-4, 1e-5, 1e-6])
        t = RateTable(e, 0.6 * e ** (2 / 3), (0.5, 10)).fit()
        t.to_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0].startswith("# ratetable v1") and len(lines) == 6
        assert t.in_band().all()


class TestBand:
    def test_cubic(self, cubic):
        lo, hi, flags = theoretical_band(cubic.f, cubic.g, [cubic.x], cubic.conv)
        c = 4 ** (1 / 3)
        assert lo == pytest.approx(c / 3) and hi == pytest.approx(6 * c) and flags == []

    def test_degenerate(self):
        sc = scenarios.get("quartic_model")
        with pytest.raises(DegenerateCriticalPointError):
            theoretical_band(sc.f, sc.g, [sc.x], sc.conv)
        lo, hi, flags = theoretical_band(sc.f, sc.g, [sc.x], sc.conv, check=False)
        assert (lo, hi) == (0.0, 0.0) and flags

    def test_empty(self, cubic):
        with pytest.raises(ValueError):
            theoretical_band(cubic.f, cubic.g, [], cubic.conv)


def test_upsilon_curve(cubic):
    t = upsilon_upper_curve(cubic, [1e-3, 1e-4, 1e-5, 1e-6], resolution=61)
    assert t.slope == pytest.approx(2 / 3, abs=1e-6)
    assert t.in_band(1.1).all()
    assert len(t.meta["runs"]) == 4


class TestHigherBound:
    def test_cubic_l1(self, cubic):
        # D h(0) = -4, so -9 * root3(-4/2) = 9 * 2^(1/3)
        assert higher_bound(1, cubic.f, cubic.g, cubic.x, cubic.conv) == pytest.approx(
            9 * 2 ** (1 / 3))

    def test_quartic_l2(self):
        sc = scenarios.get("quartic_model")
        v = higher_bound(2, sc.f, sc.g, sc.x, sc.conv)
        assert v > 0
        c = scenarios.get("cubic_model")
        with pytest.raises(MultiplicityError):
            higher_bound(2, c.f, c.g, c.x, c.conv)

    def test_check_multiplicity(self):
        h = parse_field("1 - x^4 - y^4", dim=2)
        assert check_multiplicity(h, [0, 0], 4) == 0.0
        with pytest.raises(MultiplicityError):
            check_multiplicity(parse_field("1 - x^2", dim=2), [0, 0], 4)

    def test_sign_warning(self):
        f, g = parse_field("x + x^3/3 + x*y^2", dim=2), parse_field("y", dim=2)
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            assert higher_bound(1, f, g, [0, 0]) < 0
        assert any("maximality" in str(x.message) for x in w)


def test_truncated_jet(cubic):
    norm, smax, clamped, res = truncated_jet_bound(1, 1e-4, cubic.f, cubic.g,
                                                   Box.cube([0, 0], 0.5, 41), cubic.conv)
    # D h = -4 everywhere, so the series is h - 9 * 2^(1/3) eps^(2/3)
    assert smax == pytest.approx(1 - 9 * 2 ** (1 / 3) * 1e-4 ** (2 / 3), rel=1e-9)
    assert clamped == 0 and res == (41, 41)


def test_first_order_bound(cubic):
    X = ham_vector_field(cubic.g, cubic.conv)
    # lambda(f) = h, lambda^3 f (0) = X(X(h)) = h_xx = -2
    b = first_order_bound(X, cubic.f, cubic.x, 1e-3)
    assert b == pytest.approx(1 - 4.5 ** (1 / 3) * 2 ** (1 / 3) * 1e-2)
    with pytest.raises(DegenerateCriticalPointError):
        first_order_bound(X, cubic.f, [0.5, 0.0], 1e-3)


def test_unicontinuity():
    sc = scenarios.get("polterovich")
    box = sc.box.with_resolution((129, 61))
    rows, trend = unicontinuity_criterion(sc.f, sc.g, sc.families["F"], sc.families["G"],
                                          [1, 4, 16], box)
    assert trend == "non-vanishing"
    assert rows[-1]["product"] == pytest.approx(1.0, rel=0.05)


def test_intermediate(cubic):
    ib, six = intermediate_bound(cubic.f, cubic.g, cubic.x, cubic.conv)
    assert ib == pytest.approx(144 ** (1 / 3) * 2 ** (1 / 3))
    assert six == pytest.approx(6 * 4 ** (1 / 3)) and ib <= six
