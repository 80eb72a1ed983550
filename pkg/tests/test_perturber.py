import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poissonlab import scenarios
from poissonlab.bracketops import BilinearForm, poisson
from poissonlab.fieldexpr import Box, coordinate, parse_field, sup_norm
from poissonlab.perturber import (ChartError, DegenerateMaximumError, InfeasibleError,
                                  build_phi_profile, check_phi_profile, find_eps0,
                                  local_perturbation, staircase_counterexample,
                                  staircase_profile)


@pytest.fixture(scope="module")
def cubic():
    return scenarios.get("cubic_model")


class TestPhiProfile:
    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.5, 20), st.floats(1e-7, 1e-3), st.floats(0.5, 1.0))
    def test_conditions(self, A, eps, b):
        prof = build_phi_profile(A, eps, b, -0.1)
        chk = check_phi_profile(prof, eps)
        assert chk["linear"] and chk["nondecreasing_inner"] and chk["slope_floor"]
        assert chk["zero_outside"] and chk["bounded"]
        assert chk["c1_jump"] < 1e-12
        t = np.linspace(-b, b, 2001)
        assert np.allclose(prof(-t), -prof(t), atol=1e-15)

    def test_values(self):
        prof = build_phi_profile(4.0, 1e-3, 1.0, -0.1)
        a = 4 ** (-1 / 3) * 1e-3 ** (1 / 3)
        assert prof(a) == pytest.approx(5e-4)
        assert prof(0.0, 1) == pytest.approx(0.5 * 4 ** (1 / 3) * 1e-3 ** (2 / 3))

    def test_infeasible(self):
        with pytest.raises(InfeasibleError) as ei:
            build_phi_profile(4.0, 0.5, 1.0, -0.01)
        assert ei.value.limit_eps > 0
        with pytest.raises(ValueError):
            build_phi_profile(4.0, 1e-3, 1.0, 0.1)


class TestLocalPerturbation:
    @pytest.mark.parametrize("eps", [1e-3, 1e-5])
    def test_cubic(self, cubic, eps):
        lp = local_perturbation(cubic.f, cubic.g, cubic.x, cubic.box, eps, cubic.conv,
                                resolution=101)
        ck = lp.checks
        assert not lp.swapped and lp.A == pytest.approx(2.0)
        assert ck["within_eps"] and ck["outside_K"] <= 1e-12 and ck["identity"] <= 1e-10
        assert lp.gap == pytest.approx(lp.guaranteed, rel=1e-6)
        assert sup_norm(lp.G - cubic.g, cubic.box).value == 0.0

    def test_rate_exponent(self, cubic):
        # gap / eps^(2/3) is eps independent, the ratio is A^(1/3)/2 with A = 2
        ratios = [local_perturbation(cubic.f, cubic.g, cubic.x, cubic.box, e, cubic.conv,
                                     resolution=61).gap / e ** (2 / 3) for e in (1e-4, 1e-6)]
        assert ratios[0] == pytest.approx(ratios[1], rel=1e-6)
        assert ratios[0] == pytest.approx(0.5 * 2 ** (1 / 3), rel=1e-6)

    def test_swap_on_quadratic(self):
        sc = scenarios.get("quadratic_model")
        lp = local_perturbation(sc.f, sc.g, sc.x, sc.box, 1e-4, sc.conv, resolution=101)
        assert lp.swapped and lp.A == pytest.approx(6.0)
        assert lp.checks["within_eps"] and lp.checks["identity"] <= 1e-10
        assert sup_norm(lp.F - sc.f, sc.box).value == 0.0

    def test_dual_forced(self):
        sc = scenarios.get("cubic_model_dual")
        lp = local_perturbation(sc.f, sc.g, sc.x, sc.box, 1e-3, sc.conv, resolution=101)
        assert lp.swapped and lp.forced
        assert sup_norm(lp.F - sc.f, sc.box).value == 0.0
        assert lp.gap == pytest.approx(0.5 * 2 ** (1 / 3) * 1e-2, rel=1e-6)

    def test_eps_zero(self, cubic):
        lp = local_perturbation(cubic.f, cubic.g, cubic.x, cubic.box, 0.0, cubic.conv,
                                resolution=21)
        assert lp.F.same_as(cubic.f) and lp.gap == 0.0

    def test_degenerate(self):
        sc = scenarios.get("quartic_model")
        with pytest.raises(DegenerateMaximumError):
            local_perturbation(sc.f, sc.g, sc.x, sc.box, 1e-3, sc.conv, resolution=21)

    def test_not_critical(self, cubic):
        with pytest.raises(DegenerateMaximumError):
            local_perturbation(cubic.f, cubic.g, [0.3, 0.0], cubic.box, 1e-3, cubic.conv,
                               resolution=21)

    def test_no_flow_box(self):
        f = parse_field("x + y^3", dim=2)
        g = parse_field("y + x^3", dim=2)
        with pytest.raises(ChartError):
            local_perturbation(f, g, [0, 0], Box.cube([0, 0], 1, 21), 1e-3)

    def test_json(self, cubic):
        lp = local_perturbation(cubic.f, cubic.g, cubic.x, cubic.box, 1e-4, cubic.conv,
                                resolution=41)
        d = lp.to_json()
        assert d["resolution"] == [41, 41] and d["checks"]["within_eps"] is True

    def test_find_eps0(self, cubic):
        e0 = find_eps0(cubic.f, cubic.g, cubic.x, cubic.box, cubic.conv, resolution=41)
        assert 1e-4 < e0 <= 1.0


class TestStaircase:
    def test_profile(self):
        p = staircase_profile()
        assert p(0.5) == 0 and p(1.0) == 0 and p(2.0) == pytest.approx(2.0)
        assert p(4.5) == pytest.approx(4.0) and p(-1.0) == pytest.approx(-2.0)
        t = np.linspace(-5, 5, 4001)
        assert np.all(np.diff(p(t)) >= -1e-14)
        # derivative supports of p(t) and p(t + 1) are disjoint
        assert np.max(np.abs(p(t, 1) * p(t + 1, 1))) == 0.0

    @pytest.mark.parametrize("n", [5, 20, 100])
    def test_pair(self, n):
        c = ("x", "y")
        B = BilinearForm([[1.0, 0.0], [0.0, 0.0]], c)
        h = coordinate("x", c)
        fn, gn = staircase_counterexample(B, h, n)
        box = Box((-3, -3), (3, 3), 121)
        assert sup_norm(B(fn, gn), box).value == 0.0
        assert sup_norm(fn - h, box).value <= 2 / n
        assert sup_norm(gn - h, box).value <= 3 / n

    def test_bad_n(self):
        with pytest.raises(ValueError):
            staircase_counterexample(None, None, 0)
