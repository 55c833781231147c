import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from dtcmr.core import MapSet
from dtcmr.exceptions import NumericalError, ValidationError
from dtcmr.metrics import (angle_distance, ks_asymptotic_p, ks_statistic, ks_two_sample, maae,
                           mae, map_errors, median_iqr, wilcoxon_signed_rank)

angles = arrays(np.float64, (20,), elements=st.floats(-90, 90))


def angle_oracle(x, y):
    return min(abs(x - y + 180 * k) for k in (-2, -1, 0, 1, 2))


class TestAngles:
    @pytest.mark.parametrize("x,y,d", [(89, -89, 2), (45, -45, 90), (0, 0, 0), (90, -90, 0),
                                       (10, 30, 20), (-80, 80, 20)])
    def test_unit_cases(self, x, y, d):
        assert maae(np.array([x]), np.array([y])) == pytest.approx(d, abs=1e-12)

    @given(angles, angles)
    def test_matches_loop_oracle(self, x, y):
        d = angle_distance(x, y)
        assert np.allclose(d, [angle_oracle(a, b) for a, b in zip(x, y)], atol=1e-12)
        assert np.all((d >= 0) & (d <= 90))
        assert np.array_equal(d, angle_distance(y, x))

    def test_identity_zero(self):
        x = np.linspace(-90, 90, 50)
        assert maae(x, x) == 0.0

    def test_mask_and_empty(self):
        x = np.array([0.0, 50.0])
        y = np.array([10.0, 0.0])
        assert maae(x, y, np.array([True, False])) == 10.0
        with pytest.raises(ValidationError, match="empty"):
            maae(x, y, np.zeros(2, bool))
        with pytest.raises(ValidationError):
            mae(x, y[:1])


def test_map_errors_keys():
    mask = np.ones((2, 2), bool)
    a = MapSet(np.full((2, 2), 1e-3), np.full((2, 2), 0.5), np.zeros((2, 2)),
               np.zeros((2, 2)), mask)
    b = MapSet(np.full((2, 2), 2e-3), np.full((2, 2), 0.25), np.full((2, 2), 89.0),
               np.full((2, 2), -89.0), mask)
    e = map_errors(a, b)
    assert e == pytest.approx({"ha": 89.0, "e2a": 89.0, "md": 1e-3, "fa": 0.25})


def ks_permutation_p(a, b):
    """Exact two-sided p by enumerating every split of the pooled sample."""
    pooled = np.concatenate([a, b])
    n = len(a)
    d_obs = ks_statistic(a, b)
    hits = total = 0
    for idx in itertools.combinations(range(len(pooled)), n):
        sel = np.zeros(len(pooled), bool)
        sel[list(idx)] = True
        total += 1
        hits += ks_statistic(pooled[sel], pooled[~sel]) >= d_obs - 1e-12
    return hits / total


class TestKS:
    def test_statistic_brute_force(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=13), rng.normal(0.5, size=17)
        grid = np.concatenate([a, b, [-np.inf]])
        d = max(abs(np.mean(a <= t) - np.mean(b <= t)) for t in grid)
        assert ks_statistic(a, b) == pytest.approx(d, abs=1e-15)

    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("n,m", [(5, 5), (4, 6), (3, 7)])
    def test_exact_matches_permutation(self, seed, n, m):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=n), rng.normal(0.8, size=m)
        _, p = ks_two_sample(a, b)
        assert p == pytest.approx(ks_permutation_p(a, b), abs=1e-12)

    def test_matches_scipy_exact_moderate(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=40), rng.normal(0.4, size=35)
        d, p = ks_two_sample(a, b)
        ref = stats.ks_2samp(a, b, method="exact")
        assert d == pytest.approx(ref.statistic, abs=1e-15)
        assert p == pytest.approx(ref.pvalue, rel=1e-8)

    def test_asymptotic_branch_for_large_samples(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=150), rng.normal(0.3, size=120)
        d, p = ks_two_sample(a, b)
        assert p == ks_asymptotic_p(d, 150, 120)
        assert p == pytest.approx(stats.ks_2samp(a, b, method="exact").pvalue, abs=0.02)

    def test_identical_samples(self):
        assert ks_two_sample([1.0, 2.0], [1.0, 2.0]) == (0.0, 1.0)

    def test_empty(self):
        with pytest.raises(ValidationError):
            ks_two_sample([], [1.0])


def wilcoxon_enumeration_p(d):
    d = np.asarray(d, dtype=float)
    d = d[d != 0]
    ranks = stats.rankdata(np.abs(d))
    w_obs = ranks[d > 0].sum()
    mean = ranks.sum() / 2
    n = len(d)
    extreme = 0
    for signs in itertools.product([0, 1], repeat=n):
        w = ranks[np.array(signs, bool)].sum()
        extreme += abs(w - mean) >= abs(w_obs - mean) - 1e-9
    return extreme / 2 ** n


class TestWilcoxon:
    @pytest.mark.parametrize("n", range(1, 13))
    def test_exact_matches_enumeration(self, n):
        rng = np.random.default_rng(n)
        d = np.round(rng.normal(0.3, 1.0, size=n), 1)  # rounding creates ties
        d[d == 0] = 0.1
        _, p = wilcoxon_signed_rank(d)
        assert p == pytest.approx(wilcoxon_enumeration_p(d), abs=1e-9)

    def test_normal_approximation_matches_scipy(self):
        rng = np.random.default_rng(7)
        d = np.round(rng.normal(0.4, 1.0, size=40), 1)
        w, p = wilcoxon_signed_rank(d)
        ref = stats.wilcoxon(d, method="approx", correction=True, zero_method="wilcox")
        nz = d[d != 0]
        w_minus = stats.rankdata(np.abs(nz))[nz < 0].sum()
        assert min(w, w_minus) == pytest.approx(ref.statistic)
        assert p == pytest.approx(ref.pvalue, rel=1e-9)

    def test_all_zero_is_degenerate(self):
        with pytest.raises(NumericalError, match="degenerate"):
            wilcoxon_signed_rank([0.0, 0.0, 0.0])

    def test_symmetric_pair(self):
        assert wilcoxon_signed_rank([1.0, -1.0])[1] == 1.0


def test_median_iqr_loop_oracle():
    rng = np.random.default_rng(0)
    for n in (1, 2, 5, 10, 33):
        x = rng.normal(size=n)
        s = np.sort(x)

        def q(p):
            h = (n - 1) * p
            lo = math.floor(h)
            hi = min(lo + 1, n - 1)
            return s[lo] + (h - lo) * (s[hi] - s[lo])

        med, iqr = median_iqr(x)
        assert med == pytest.approx(q(0.5), abs=1e-15)
        assert iqr == pytest.approx(q(0.75) - q(0.25), abs=1e-14)
    with pytest.raises(ValidationError):
        median_iqr([])


def test_wilcoxon_all_positive_n5():
    w, p = wilcoxon_signed_rank([1.0, 2.0, 3.0, 4.0, 5.0])
    assert w == 15 and p == pytest.approx(0.0625, abs=1e-12)


def test_wilcoxon_n15_approximation_near_enumeration():
    d = np.random.default_rng(11).normal(0.5, 1.0, size=15)
    assert wilcoxon_signed_rank(d)[1] == pytest.approx(wilcoxon_enumeration_p(d), abs=0.01)


def test_ks_disjoint_supports():
    assert ks_two_sample([1.0, 2.0, 3.0], [10.0, 11.0])[0] == 1.0


@given(st.lists(st.integers(-200, 200), min_size=1, max_size=9),
       st.lists(st.integers(-200, 200), min_size=1, max_size=9))
def test_ks_invariant_under_monotone_transform(a, b):
    # quarter steps keep the transform strictly increasing in floating point
    a, b = np.array(a) / 4.0, np.array(b) / 4.0
    d, p = ks_two_sample(a, b)
    d2, p2 = ks_two_sample(np.arctan(a / 10) ** 3, np.arctan(b / 10) ** 3)
    assert d == d2 and p == p2


@given(angles, angles)
def test_maae_half_turn_invariance(x, y):
    # a half turn wrapped back into [-90, 90] maps 90 to -90 and leaves the rest
    shifted = np.where(x == 90, -90.0, x)
    assert maae(shifted, y) == pytest.approx(maae(x, y), abs=1e-9)
