import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bgw_genealogy.mechanism import (
    BAry,
    DomainError,
    Generic,
    Geometric,
    LinearFractional,
    MechanismError,
    PgfSeries,
    Sibuya,
    derivative_eval,
    extinction_prob,
    iterate,
    parse_mechanism,
    pgf_eval,
    popsize_pmf,
    survival_prob,
)

MECHS = [BAry(2), BAry(3), Geometric(0.3), Geometric(0.5), Geometric(0.7),
         LinearFractional(0.4, 0.6), Sibuya(0.5, 1.0), Sibuya(0.3, 0.6), Generic((0.25, 0.25, 0.5))]


def brute_iterate(mech, t, z):
    for _ in range(t):
        z = mech.pgf(z)
    return z


class TestPgfEval:
    def test_examples(self):
        assert pgf_eval(Geometric(0.5), 0.0) == pytest.approx(0.5)
        assert pgf_eval(Sibuya(0.5, 1.0), 0.75) == pytest.approx(0.5)
        assert pgf_eval(Generic((1 / 3, 1 / 3, 1 / 3)), 1.0) == 1.0

    @pytest.mark.parametrize("z", [-0.1, 1.5, math.nan])
    def test_domain(self, z):
        with pytest.raises(DomainError):
            pgf_eval(Geometric(0.5), z)


class TestParse:
    @pytest.mark.parametrize("text,expected", [
        ("kind=bary b=2", BAry(2)),
        ("kind=geometric p=0.25", Geometric(0.25)),
        ("kind=lf p0=0.4 p=0.6", LinearFractional(0.4, 0.6)),
        ("kind=sibuya alpha=0.5 lambda=0.64", Sibuya(0.5, 0.64)),
        ("kind=sibuya alpha=0.5", Sibuya(0.5, 1.0)),
        ("kind=generic coeffs=0.5,0,0.5", Generic((0.5, 0.0, 0.5))),
    ])
    def test_roundtrip(self, text, expected):
        mech = parse_mechanism(text)
        assert mech == expected
        assert parse_mechanism(mech.spec_string()) == mech

    @pytest.mark.parametrize("text", [
        "kind=geometric", "b=2", "kind=nope p=1", "kind=bary b=2.5", "kind=bary b=1",
        "kind=geometric p=1.2", "kind=sibuya alpha=1", "kind=sibuya alpha=0.5 lambda=0",
        "kind=generic coeffs=0.5,0.4", "kind=generic coeffs=0,1", "kind=geometric p=0.5 q=3", "kind geometric",
    ])
    def test_rejects(self, text):
        with pytest.raises(MechanismError):
            parse_mechanism(text)

    def test_generic_tolerance(self):
        m = parse_mechanism("kind=generic coeffs=0.5,0.49999 tol=1e-4")
        assert m.mass_deficit == pytest.approx(1e-5)


class TestIterate:
    @pytest.mark.parametrize("mech", MECHS, ids=str)
    @pytest.mark.parametrize("t", [0, 1, 3, 5])
    def test_matches_composition(self, mech, t):
        z = np.linspace(0, 1, 11)
        ip = iterate(mech, t)
        np.testing.assert_allclose(ip.value(z), brute_iterate(mech, t, z), rtol=1e-12, atol=1e-14)

    def test_sibuya_params(self):
        ip = iterate(Sibuya(0.5, 0.64), 3)
        at, lt = ip.sibuya
        assert at == pytest.approx(0.125)
        assert lt == pytest.approx(0.64 ** ((1 - 0.125) / 0.5))

    def test_geometric_delta_shift(self):
        # delta_t = beta_{t+1}
        for t in range(1, 6):
            assert iterate(Geometric(0.6), t).lf_delta == pytest.approx(iterate(Geometric(0.6), t + 1).lf_beta)

    @pytest.mark.parametrize("mech", MECHS, ids=str)
    def test_derivatives_by_finite_difference(self, mech):
        ip = iterate(mech, 2)
        z, h = 0.4, 1e-5
        for r in (1, 2):
            lo, hi = derivative_eval(ip, r - 1, z - h), derivative_eval(ip, r - 1, z + h)
            assert derivative_eval(ip, r, z) == pytest.approx((hi - lo) / (2 * h), rel=1e-6)

    @pytest.mark.parametrize("mech", MECHS, ids=str)
    def test_pmf_generates_pgf(self, mech):
        ip = iterate(mech, 3)
        p = ip.pmf(200, 2)
        z = 0.3
        assert np.polynomial.polynomial.polyval(z, p) == pytest.approx(float(ip.value(z)) ** 2, rel=1e-10)
        assert np.all(p >= -1e-12)

    def test_popsize_helpers(self):
        ip = iterate(Geometric(0.5), 3)
        assert popsize_pmf(ip, 1, 0) == pytest.approx(3 / 4)
        assert extinction_prob(ip, 2) == pytest.approx(9 / 16)
        assert survival_prob(ip, 1, 1) == pytest.approx(1 / 4)
        assert survival_prob(ip, 1, 0) == 1.0

    def test_bary_pmf(self):
        p = iterate(BAry(2), 2).pmf(8, 1)
        assert p[4] == 1.0 and p.sum() == 1.0

    def test_bad_t(self):
        with pytest.raises(DomainError):
            iterate(Geometric(0.5), -1)


class TestPgfSeries:
    def test_derivative_drops_order(self):
        s = PgfSeries.from_coeffs([0.2, 0.3, 0.5], 10)
        assert s.derivative().trunc_order == 9

    def test_compose_keeps_min_order(self):
        a = PgfSeries.from_coeffs([0.5, 0.5], 6)
        b = PgfSeries.from_coeffs([0.1, 0.9], 4)
        assert a.compose(b).trunc_order == 4

    def test_power_and_mass(self):
        s = PgfSeries.from_coeffs([0.5, 0.5], 10)
        np.testing.assert_allclose(s.power(3).coeffs[:4], [1 / 8, 3 / 8, 3 / 8, 1 / 8])
        assert s.power(3).mass() == pytest.approx(1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=2, max_size=5), st.floats(0, 1))
    def test_compose_evaluates_like_functions(self, raw, z):
        total = sum(raw)
        if total == 0:
            return
        c = [x / total for x in raw]
        outer = PgfSeries.from_coeffs(c, 64)
        inner = PgfSeries.from_coeffs(c, 64)
        assert outer.compose(inner)(z) == pytest.approx(outer(inner(z)), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.05, 0.95), st.integers(1, 6))
    def test_geometric_series_nonnegative(self, p, t):
        pm = iterate(Geometric(p), t).pmf(100)
        assert np.all(pm >= -1e-12) and pm.sum() <= 1 + 1e-9
