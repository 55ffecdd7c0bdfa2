import math

import numpy as np
import pytest
from scipy import stats

from bgw_genealogy import ancestry as A
from bgw_genealogy.ancestry import CoalescenceQuery as Q
from bgw_genealogy.mechanism import BAry, Generic, Geometric, LinearFractional, Sibuya, iterate
from bgw_genealogy.oracle import (
    DegenerateConditioningError,
    InsufficientPopulationError,
    Mode,
    _sample_counts,
    _simulate_batch,
    estimate,
    exhaustive_estimate,
    fisher_yates_sample,
    sample_offspring,
    simulate_forest,
    tau_from_counts,
    trace_ancestry,
)


def chi_square_p(obs, expected_probs):
    exp = np.asarray(expected_probs) * obs.sum()
    keep = exp > 5
    obs, exp = obs[keep], exp[keep]
    return stats.chisquare(obs, exp * obs.sum() / exp.sum()).pvalue


class TestSampler:
    @pytest.mark.parametrize("alpha,lam", [(0.5, 1.0), (0.3, 0.6), (0.8, 0.6)])
    def test_sibuya_chi_square_gate(self, alpha, lam):
        mech = Sibuya(alpha, lam)
        x = sample_offspring(mech, np.random.default_rng(11), 10**6)
        probs = mech.pmf(np.arange(51))
        obs = np.bincount(np.minimum(x, 51), minlength=52)
        assert chi_square_p(obs, np.append(probs, 1 - probs.sum())) > 0.001

    def test_sibuya_atoms(self):
        x = sample_offspring(Sibuya(0.5, 1.0), np.random.default_rng(1), 10**6)
        for m, p in ((1, 0.5), (2, 0.125)):
            assert abs((x == m).mean() - p) < 3 * math.sqrt(p * (1 - p) / 1e6)

    def test_geometric_zero(self):
        x = sample_offspring(Geometric(0.5), np.random.default_rng(2), 10**6)
        assert abs((x == 0).mean() - 0.5) < 3 * 0.0005

    def test_bary(self):
        assert sample_offspring(BAry(3), np.random.default_rng(0)) == 3

    def test_clip(self):
        x = sample_offspring(Sibuya(0.2), np.random.default_rng(0), 10**4, clip=100)
        assert x.max() <= 100


class TestForest:
    def test_bary_sizes(self):
        f = simulate_forest(BAry(2), 3, 1, rng=np.random.default_rng(0))
        assert f.sizes == [1, 2, 4, 8]
        f.check()

    def test_invariants(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            f = simulate_forest(Geometric(0.5), 6, 3, rng=rng)
            f.check()

    def test_capped(self):
        f = simulate_forest(BAry(3), 6, 1, cap=100, rng=np.random.default_rng(0))
        assert f.capped and f.sizes[-1] == 0

    def test_sibuya_no_extinction(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            f = simulate_forest(Sibuya(0.5, 1.0), 10, 1, rng=rng)
            assert f.capped or f.sizes[10] >= 1

    def test_critical_survival(self):
        b = _simulate_batch(Geometric(0.5), 50, 1, 10**6, np.random.default_rng(6), 100_000)
        p = (b.sizes[:, 50] > 0).mean()
        assert abs(p - 1 / 51) < 3 * math.sqrt((1 / 51) * (50 / 51) / 1e5)

    @pytest.mark.parametrize("mech", [Geometric(0.3), Geometric(0.7), LinearFractional(0.4, 0.6),
                                      Generic((0.2, 0.3, 0.1, 0.4)), Sibuya(0.8, 0.6), BAry(2)], ids=str)
    def test_popsize_pmf_chi_square(self, mech):
        t = 3
        b = _simulate_batch(mech, t, 1, 10**6, np.random.default_rng(5), 400_000)
        n = b.sizes[~b.capped, t]
        probs = iterate(mech, t).pmf(30)[:30]
        obs = np.bincount(np.minimum(n, 30), minlength=31)[:31]
        if isinstance(mech, BAry):
            assert obs[8] == obs.sum()
            return
        assert chi_square_p(obs, np.append(probs, max(0.0, 1 - probs.sum()))) > 0.001


class TestTrace:
    def test_siblings(self):
        f = simulate_forest(BAry(2), 2, 1, rng=np.random.default_rng(0))
        tr = trace_ancestry(f, [0, 1])
        assert tr.backward() == [2, 1, 1]
        assert tr.tau(1) == 1.0

    def test_single_individual(self):
        f = simulate_forest(Geometric(0.7), 4, 1, rng=np.random.default_rng(3))
        if f.sizes[4] > 0:
            assert list(trace_ancestry(f, [0]).counts) == [1] * 5

    def test_different_founders(self):
        f = simulate_forest(BAry(2), 2, 2, rng=np.random.default_rng(0))
        tr = trace_ancestry(f, [0, 7])
        assert tr.counts[0] == 2 and math.isinf(tr.tau(1))
        assert tr.founder_set == frozenset({0, 1})

    def test_insufficient(self):
        f = simulate_forest(BAry(2), 1, 1, rng=np.random.default_rng(0))
        with pytest.raises(InsufficientPopulationError):
            trace_ancestry(f, i=3, rng=np.random.default_rng(0))

    def test_fisher_yates_uniform(self):
        rng = np.random.default_rng(8)
        pairs = np.array([sorted(fisher_yates_sample(5, 2, rng)) for _ in range(20000)])
        codes = pairs[:, 0] * 5 + pairs[:, 1]
        _, counts = np.unique(codes, return_counts=True)
        assert counts.size == 10
        assert stats.chisquare(counts).pvalue > 0.001

    def test_tau_from_counts(self):
        counts = np.array([[1, 1, 2, 3], [2, 2, 2, 3], [1, 2, 2, 3]])
        np.testing.assert_array_equal(tau_from_counts(counts, 1), [1, -1, 0])
        np.testing.assert_array_equal(tau_from_counts(counts, 2), [2, 2, 2])


class TestEstimate:
    def test_determinism(self):
        q = Q(3, 2, 2, 1, 1)
        a = estimate(Geometric(0.6), q, Mode.TMRCA_TAIL, 5000, seed=3)
        b = estimate(Geometric(0.6), q, Mode.TMRCA_TAIL, 5000, seed=3)
        assert a == b

    def test_workers_do_not_change_result(self):
        q = Q(3, 1, 2, 1, 0)
        a = estimate(Geometric(0.6), q, Mode.PROB_FINITE, 6000, seed=4, batch_size=1000)
        b = estimate(Geometric(0.6), q, Mode.PROB_FINITE, 6000, seed=4, batch_size=1000, workers=2)
        assert a == b

    def test_exhaustive_bary(self):
        e = exhaustive_estimate(BAry(2), Q(2, 2, 2, 1, 0), Mode.TAU_TAIL)
        assert (e.hits, e.replicates) == (12, 28)

    def test_pathwise_identity_single_founder(self):
        # n0 = 1: the sample coalesces exactly when N_t >= i
        rng = np.random.default_rng(12)
        b = _simulate_batch(Geometric(0.6), 4, 1, 10**6, rng, 20_000)
        rows = np.flatnonzero(b.sizes[:, 4] >= 3)
        tau = tau_from_counts(_sample_counts(b, rows, 3, rng), 1)
        assert np.all(tau != -1)

    def test_degenerate_conditioning(self):
        with pytest.raises(DegenerateConditioningError):
            estimate(Geometric(0.2), Q(6, 1, 5, 1, 1), Mode.FULL_SAMPLE_GIVEN_SIZE, 1000, seed=0)

    def test_replicate_floor(self):
        with pytest.raises(A.QueryError):
            estimate(Geometric(0.5), Q(2), Mode.PROB_FINITE, 10)

    def test_ancestor_count_matches_integral(self):
        mech, t, n0, i, j, k = Geometric(0.7), 5, 2, 3, 2, 2
        e = estimate(mech, Q(t, n0, i, j, k), Mode.ANCESTOR_COUNT, 100_000, seed=21)
        assert abs(e.z_score(A.tau_tail(mech, t, n0, i, j, k))) < 4

    def test_last_visit_tail_exceeds_count_law(self):
        # for j >= 2 the last generation with j ancestors can lie after k
        mech, t, n0, i, j, k = Geometric(0.7), 5, 2, 3, 2, 2
        e = estimate(mech, Q(t, n0, i, j, k), Mode.TAU_TAIL, 100_000, seed=21)
        assert e.value - A.tau_tail(mech, t, n0, i, j, k).raw > 10 * e.std_err

    def test_sibuya_whole_population(self):
        e = estimate(Sibuya(0.8, 1.0), Q(3, 1, 1, 1, 2), Mode.WHOLE_POPULATION_TAIL, 50_000, seed=2)
        assert abs(e.z_score(0.64)) < 4 and not e.unreliable
