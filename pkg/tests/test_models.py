import itertools
import math

import numpy as np
import pytest

from bgw_genealogy import ancestry as A
from bgw_genealogy import models as M
from bgw_genealogy.mechanism import BAry, Generic, Geometric, LinearFractional, Sibuya
from bgw_genealogy.models import AsymptoticRegime, classify


@pytest.mark.parametrize("mech,regime", [
    (Geometric(0.3), AsymptoticRegime.SUBCRITICAL),
    (Geometric(0.5), AsymptoticRegime.CRITICAL),
    (Geometric(0.7), AsymptoticRegime.SUPERCRITICAL),
    (Sibuya(0.5), AsymptoticRegime.INFINITE_MEAN),
    (BAry(2), AsymptoticRegime.SUPERCRITICAL),
    (Generic((0.5, 0.0, 0.5)), AsymptoticRegime.CRITICAL),
    (LinearFractional(0.2, 0.5), AsymptoticRegime.SUBCRITICAL),
])
def test_classify(mech, regime):
    assert classify(mech) is regime


class TestBAry:
    def test_examples(self):
        assert M.bary_closed_forms(2, 2, 1, 2, 0).prob_finite == pytest.approx(1.0)
        assert M.bary_pair_conditional_law(2, 3, 0) == pytest.approx(4 / 7)
        assert M.bary_closed_forms(2, 20, 4, 2, 0).prob_finite == pytest.approx(1 / 4, abs=1e-4)

    @pytest.mark.parametrize("b,t,n0,i", list(itertools.product((2, 3), (1, 2, 3), (1, 2), (2, 3))))
    def test_against_quadrature(self, b, t, n0, i):
        f = M.bary_closed_forms(b, t, n0, i, t - 1)
        assert A.prob_finite(BAry(b), t, n0, i) == pytest.approx(f.prob_finite, abs=1e-12)
        assert A.transition_prob(BAry(b), t, n0, i, 1) == pytest.approx(f.transition_i1, abs=1e-12)
        assert A.tmrca_tail(BAry(b), t, n0, 2, t - 1) == pytest.approx(f.pair_tail, abs=1e-12)
        if n0 * b**t >= 3:
            assert A.merger_ratio(BAry(b), t, n0) == pytest.approx(f.merger_ratio, abs=1e-12)

    def test_pair_conditional_law_sums_to_one(self):
        assert sum(M.bary_pair_conditional_law(3, 5, k) for k in range(5)) == pytest.approx(1.0)


class TestGeometric:
    @pytest.mark.parametrize("p", [0.3, 0.5, 0.7])
    def test_lauricella_matches_quadrature(self, p):
        for t, n0 in itertools.product((2, 4, 6), (2, 3)):
            for k in range(t):
                assert M.lauricella_pair_tail(p, t, n0, k) == pytest.approx(A.tmrca_tail(Geometric(p), t, n0, 2, k),
                                                                            abs=1e-10)

    @pytest.mark.parametrize("p", [0.3, 0.5, 0.7])
    def test_prob_finite_identity(self, p):
        for t, n0 in itertools.product((1, 3, 6), (1, 2, 3)):
            assert M.geometric_pair_prob_finite(p, t, n0) == pytest.approx(A.prob_finite(Geometric(p), t, n0, 2),
                                                                           abs=1e-11)

    def test_whole_population_examples(self):
        assert M.geometric_whole_population_tail(2 / 3, 3, 1) == pytest.approx(7 / 15)
        assert A.whole_population_tail(Geometric(0.5), 3, 1) == pytest.approx(3 / 4, abs=1e-12)
        # the large-t form exceeds one at small t
        assert M.geometric_whole_population_tail_critical_printed(3, 1) == pytest.approx(9 / 8)

    def test_full_sample_critical(self):
        for t, i, k in itertools.product((3, 5), (2, 3), (1, 2)):
            assert M.geometric_full_sample_critical(t, i, k) == pytest.approx(
                A.tmrca_full_sample_given_size(Geometric(0.5), t, i, k), abs=1e-12)

    def test_large_t_no_overflow(self):
        v = M.geometric_whole_population_tail(0.9, 2000, 5)
        assert v == pytest.approx(9.0**-5, rel=1e-9)


class TestLimits:
    def test_e3_small_k(self):
        assert M.e3_limit(2.0, 1e-6) == pytest.approx(1.0, abs=1e-5)

    def test_e4_endpoints(self):
        assert M.e4_limit(1e-6) == pytest.approx(1.0, abs=1e-5)
        assert M.e4_limit(1.0) == 0.0
        with pytest.raises(ValueError):
            M.e4_limit(1.5)

    def test_uniform(self):
        assert M.whole_population_limit(1.0, 0.5) == 0.5

    def test_domains(self):
        with pytest.raises(ValueError):
            M.e3_limit(0.5, 1)
        with pytest.raises(ValueError):
            M.e3_limit(2.0, -1)
        with pytest.raises(ValueError):
            M.e1_limit(2.0, 1)

    def test_supercritical_prob_finite_limit(self):
        for n0 in (1, 2, 3):
            exact = A.prob_finite(Geometric(2 / 3), 60, n0, 2).raw
            assert exact == pytest.approx(M.supercritical_prob_finite_limit(2.0, n0), abs=1e-9)

    def test_e3_geometric_rate(self):
        g = Geometric(2 / 3)
        gaps = [abs(A.conditional_tail_given_finite(g, t, 1, 2, 1).raw - M.e3_limit(2.0, 1)) for t in range(5, 12)]
        ratios = np.array(gaps[1:]) / np.array(gaps[:-1])
        assert np.all(np.abs(ratios - 0.5) < 0.1)


class TestSibuya:
    def test_examples(self):
        f = M.sibuya_closed_forms(0.5, 1.0, 5, 1, 2, 1)
        assert f.whole_population_pmf == pytest.approx(0.25)
        assert M.sibuya_closed_forms(0.5, 1.0, 5, 1, 2, 4).whole_population_pmf == pytest.approx(0.0625)
        assert M.sibuya_closed_forms(0.5, 1.0, 2, 3, 2, 0).prob_infinite == pytest.approx(0.25)
        assert M.sibuya_closed_forms(0.5, 0.64, 2, 1, 2, 0).defective_limit_mass == pytest.approx(0.4096)

    @pytest.mark.parametrize("a,lam", list(itertools.product((0.3, 0.8), (0.6, 1.0))))
    def test_against_quadrature(self, a, lam):
        mech = Sibuya(a, lam)
        for t, n0, i in itertools.product((2, 4), (1, 3), (2, 3)):
            for k in range(t):
                f = M.sibuya_closed_forms(a, lam, t, n0, i, k)
                assert A.transition_prob(mech, t, n0, i, 1) == pytest.approx(f.transition_i1, abs=1e-11)
                assert A.tmrca_full_sample_given_size(mech, t, i, k) == pytest.approx(f.full_sample_conditional,
                                                                                      abs=1e-10)
                assert A.prob_infinite_with_survivors(mech, t, n0, 2) == pytest.approx(f.prob_infinite_survivors,
                                                                                       abs=1e-11)
                less_than_two = 1 - A.row_sum_check(mech, t, n0, 2)[1]
                assert less_than_two == pytest.approx(f.prob_fewer_than_two, abs=1e-11)

    def test_whole_population_pmf_sums(self):
        t = 6
        pm = [M.sibuya_closed_forms(0.4, 1.0, t, 1, 2, k).whole_population_pmf for k in range(t)]
        assert sum(pm) == pytest.approx(1.0)

    def test_gap_law(self):
        law = M.sibuya_pair_gap_law(0.5, 8)
        assert law.sum() == pytest.approx(1.0)
        tv = 0.5 * (np.abs(law - M.geometric_pmf(0.5, np.arange(1, 9))).sum() + 0.5**8)
        assert tv <= 0.5**8 + 1e-12


def test_closed_form_value_dispatch():
    assert M.closed_form_value(Sibuya(0.5), "whole-pop-tail", 4, k=2) == pytest.approx(0.25)
    assert M.closed_form_value(BAry(2), "prob-finite", 2, n0=2, i=2) == pytest.approx(3 / 7)
    assert M.closed_form_value(Generic((0.5, 0.0, 0.5)), "prob-finite", 2) is None
    assert M.closed_form_value(Geometric(0.5), "tmrca-tail", 3, i=3) is None
    assert math.isclose(M.closed_form_value(Geometric(0.5), "prob-finite", 3), 3 / 16)
