import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poissonlab.trigfact import (FactorizationError, NegativityError, OddMultiplicityError,
                                 TrigPoly, aberth_roots, fejer_riesz, from_angle_samples,
                                 laurent_lift, mean_bound, roots)

TH = np.linspace(0, 2 * np.pi, 1000, endpoint=False)


def random_q(rng, deg):
    return TrigPoly(rng.normal(size=deg + 1) + 1j * rng.normal(size=deg + 1), 0)


class TestTrigPoly:
    def test_from_real_and_eval(self):
        P = TrigPoly.from_real(2.0, [1.0], [0.5])
        th = np.array([0.0, 1.0])
        assert np.allclose(P.real_values(th), 2 + np.cos(th) + 0.5 * np.sin(th))
        assert P.is_real and P.degree == 1

    def test_trim(self):
        P = TrigPoly([0, 0, 3, 0, 0])
        assert P.lo == 0 and P.hi == 0 and P.coeff(0) == 3

    def test_abs2(self):
        Q = TrigPoly([1, 2j], 0)
        th = np.linspace(0, 6, 13)
        assert np.allclose(Q.abs2().real_values(th), np.abs(Q(th)) ** 2)

    def test_from_angle_samples_exact(self):
        P = TrigPoly.from_real(3.0, [0.5, -0.25], [0.1, 0.2])
        R = from_angle_samples(P.real_values, 2)
        assert np.allclose(R.coeffs, P.coeffs, atol=1e-14)

    def test_laurent_lift(self):
        P = TrigPoly.from_real(2.0, [1.0])
        T, r = laurent_lift(P)
        assert r == 1 and np.allclose(T, [0.5, 2.0, 0.5])


class TestRoots:
    def test_simple(self):
        z = aberth_roots([-6, 11, -6, 1])
        assert np.allclose(np.sort(z.real), [1, 2, 3], atol=1e-10)

    def test_multiplicity(self):
        rs = roots([1, 4, 6, 4, 1])  # (1 + z)^4
        assert rs.multiplicities.tolist() == [4]
        assert rs.values[0] == pytest.approx(-1, abs=1e-8)
        assert rs.classify().tolist() == [0]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 8))
    def test_roots_reproduce_poly(self, seed, deg):
        rng = np.random.default_rng(seed)
        c = rng.normal(size=deg + 1) + 1j * rng.normal(size=deg + 1)
        z = roots(c).expanded()
        assert len(z) == deg
        assert np.max(np.abs(np.polyval(c[::-1], z))) <= 1e-8 * np.sum(np.abs(c)) * (1 + np.max(np.abs(z))) ** deg


class TestFejerRiesz:
    def test_constant(self):
        Q = fejer_riesz(TrigPoly([4.0], 0))
        assert abs(Q.coeff(0)) == pytest.approx(2.0)

    def test_example_cosine(self):
        P = TrigPoly.from_real(1.0, [1.0])  # 1 + cos = |(1 + z)|^2 / 2, double root at -1
        Q = fejer_riesz(P)
        assert np.allclose(np.abs(Q(TH)) ** 2, P.real_values(TH), atol=1e-8)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 6))
    def test_roundtrip(self, seed, deg):
        rng = np.random.default_rng(seed)
        P = random_q(rng, deg).abs2()
        Q = fejer_riesz(P)
        assert np.max(np.abs(np.abs(Q(TH)) ** 2 - P.real_values(TH))) <= 1e-8 * max(1, P.coeff(0).real)
        # interior roots are the ones assigned to Q
        assert np.all(np.abs(np.roots(Q.coeffs[::-1])) <= 1 + 1e-6)

    def test_sign_change_rejected(self):
        P = TrigPoly.from_real(np.cos(0.7), [1.0])  # cos(0.7) + cos(theta) changes sign
        with pytest.raises(FactorizationError):
            fejer_riesz(P)
        with pytest.raises(OddMultiplicityError):
            fejer_riesz(P, check_grid=False)

    def test_negative_rejected(self):
        with pytest.raises(NegativityError):
            fejer_riesz(TrigPoly.from_real(-1.0, [0.5]))

    def test_complex_rejected(self):
        with pytest.raises(FactorizationError):
            fejer_riesz(TrigPoly([1j, 2, 1], -1))


class TestMeanBound:
    def test_extreme(self):
        # Fejer kernel |1 + z + z^2|^2 attains max 9 = (2*1+1)... with l=1 degree 2
        P = TrigPoly([1, 1, 1], 0).abs2()
        maxp, bound, holds = mean_bound(P, 1)
        assert maxp == pytest.approx(9.0) and bound == pytest.approx(9.0) and holds

    def test_degree_check(self):
        with pytest.raises(ValueError):
            mean_bound(TrigPoly([1, 1, 1, 1], 0).abs2(), 1)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 3))
    def test_holds_on_random(self, seed, l):
        P = random_q(np.random.default_rng(seed), 2 * l).abs2()
        assert mean_bound(P, 2 * l)[2]
