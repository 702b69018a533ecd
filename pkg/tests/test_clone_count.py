import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pldp_shuffle.clone_count import (
    CloneCountDistribution,
    DomainError,
    binom_half_cdf,
    binom_half_pmf,
    log_binom_half_pmf,
    poisson_binomial,
)


def brute_force(q):
    out = np.zeros(len(q) + 1)
    for bits in itertools.product((0, 1), repeat=len(q)):
        out[sum(bits)] += math.prod(qi if b else 1 - qi for qi, b in zip(q, bits))
    return out


class TestPoissonBinomial:
    def test_all_zero(self):
        np.testing.assert_array_equal(poisson_binomial([0, 0, 0]).weights, [1, 0, 0, 0])

    def test_single_fair(self):
        np.testing.assert_allclose(poisson_binomial([0.5]).weights, [0.5, 0.5])

    def test_hand_case(self):
        # Pr[C=3] = 0.2*0.4*0.9, Pr[C=0] = 0.8*0.6*0.1
        q = [0.2, 0.4, 0.9]
        got = poisson_binomial(q).weights
        np.testing.assert_allclose(got, [0.048, 0.476, 0.404, 0.072], atol=1e-15)
        np.testing.assert_allclose(got, brute_force(q), atol=1e-15)

    def test_empty_is_point_mass(self):
        d = poisson_binomial([])
        assert d.n == 1 and d.weights[0] == 1.0

    def test_certain_trials_shift(self):
        np.testing.assert_allclose(poisson_binomial([1.0, 0.5, 1.0]).weights, [0, 0, 0.5, 0.5])

    @pytest.mark.parametrize("m", [1, 4, 9, 15])
    def test_matches_enumeration(self, m):
        rng = np.random.default_rng(m)
        q = rng.uniform(0, 1, m)
        assert np.max(np.abs(poisson_binomial(q).weights - brute_force(q))) < 1e-12

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=12))
    @settings(max_examples=60, deadline=None)
    def test_enumeration_property(self, q):
        assert np.max(np.abs(poisson_binomial(q).weights - brute_force(q))) < 1e-12

    @pytest.mark.parametrize("m, q", [(50, 0.3), (2000, 0.07), (10_000, 0.4)])
    def test_homogeneous_is_binomial(self, m, q):
        got = poisson_binomial(np.full(m, q)).weights
        ref = stats.binom.pmf(np.arange(m + 1), m, q)
        assert np.max(np.abs(got - ref)) < 1e-12

    @pytest.mark.parametrize("bad", [[-0.1], [1.2], [0.3, float("nan")]])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            poisson_binomial(bad)

    def test_truncation_records_mass(self):
        q = np.full(400, 0.5)
        full = poisson_binomial(q)
        cut = poisson_binomial(q, truncate=1e-18)
        assert cut.truncated_mass > 0
        assert cut.truncated_mass < 1e-15
        assert math.fsum(cut.weights) == pytest.approx(1.0, abs=1e-12)
        assert np.max(np.abs(cut.weights - full.weights)) < 1e-15

    def test_support_window(self):
        d = poisson_binomial(np.full(3000, 0.5))
        lo, hi = d.support
        assert d.weights[lo] > 0 and d.weights[hi - 1] > 0
        assert not d.weights[:lo].any() and not d.weights[hi:].any()
        assert d.mean() == pytest.approx(1500.0, rel=1e-12)


class TestDistribution:
    def test_rejects_bad_mass(self):
        with pytest.raises(ValueError):
            CloneCountDistribution(np.array([0.5, 0.4]))
        with pytest.raises(ValueError):
            CloneCountDistribution(np.array([1.2, -0.2]))

    def test_read_only(self):
        d = CloneCountDistribution(np.array([0.25, 0.75]))
        with pytest.raises(ValueError):
            d.weights[0] = 1.0
        assert len(d) == d.n == 2


class TestBinomHalf:
    @pytest.mark.parametrize("i, x, expected", [(0, -0.1, 0.0), (2, 1.0, 0.75), (10, 10, 1.0),
                                                (3, 1.9, 0.5), (5, 7.5, 1.0), (4, -3, 0.0)])
    def test_cdf_values(self, i, x, expected):
        assert binom_half_cdf(i, x) == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("i, k, expected", [(0, 0, 1.0), (4, 2, 0.375), (3, -1, 0.0), (3, 4, 0.0)])
    def test_pmf_values(self, i, k, expected):
        assert binom_half_pmf(i, k) == pytest.approx(expected, abs=1e-16)

    def test_log_pmf_outside(self):
        assert log_binom_half_pmf(5, 6) == -np.inf

    @pytest.mark.parametrize("i", [1, 7, 50, 333, 1000])
    def test_cdf_is_pmf_sum(self, i):
        k = np.arange(-1, i + 2)
        pmf = binom_half_pmf(i, np.arange(i + 1))
        partial = np.concatenate(([0.0], np.cumsum(pmf), [1.0]))
        np.testing.assert_allclose(binom_half_cdf(i, k), np.minimum(partial, 1.0), atol=1e-13, rtol=0)

    @pytest.mark.parametrize("i", [10, 201, 5000])
    def test_pmf_symmetry(self, i):
        k = np.arange(i + 1)
        np.testing.assert_array_equal(binom_half_pmf(i, k), binom_half_pmf(i, i - k))

    @pytest.mark.parametrize("i, k", [(1000, 10), (1000, 250), (1000, 700), (100_000, 49_000),
                                      (100_000, 30_000), (100_000, 50_500), (4000, 3990)])
    def test_cdf_against_exact_integers(self, i, k):
        # exact rational tail sums with Python integers; the nearer tail is
        # summed so that the reference itself never cancels
        def tail(upto):
            c, total = 1, 0
            for j in range(upto + 1):
                total += c
                c = c * (i - j) // (j + 1)
            return total

        got = binom_half_cdf(i, k + 0.5)
        if 2 * k < i:
            assert got == pytest.approx(float(Fraction(tail(k), 2**i)), rel=1e-10, abs=1e-300)
        else:
            upper = float(Fraction(tail(i - k - 1), 2**i))
            assert 1.0 - got == pytest.approx(upper, rel=1e-9, abs=1e-16)

    @given(st.integers(0, 3000), st.floats(-5, 3005), st.floats(0, 50))
    @settings(max_examples=100, deadline=None)
    def test_cdf_monotone(self, i, x, dx):
        assert binom_half_cdf(i, x) <= binom_half_cdf(i, x + dx) + 1e-15

    def test_vectorised_mixed_shapes(self):
        out = binom_half_cdf(np.array([2, 4, 6]), 1.0)
        np.testing.assert_allclose(out, [0.75, 5 / 16, 7 / 64])
