import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from idconfound import (
    MetricError,
    TieStructure,
    auc_analytic_pvalue,
    auc_null_variance,
    midranks,
    pseudo_pvalue,
    roc_auc,
    roc_points,
    tie_structure,
    u_statistic,
)
from idconfound.metrics import log10_normal_upper_tail, normal_upper_tail


def brute_force_auc(scores, labels):
    """Pairwise oracle: wins + half-credit ties over all (pos, neg) pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    gt = np.count_nonzero(pos[:, None] > neg[None, :])
    eq = np.count_nonzero(pos[:, None] == neg[None, :])
    return (gt + 0.5 * eq) / (len(pos) * len(neg))


def rank_sum_u_negatives(scores, labels):
    """Mann-Whitney U of the negative sample from midranks."""
    ranks = midranks(np.asarray(scores, dtype=np.float64))
    labels = np.asarray(labels)
    n_neg = int(np.sum(labels == 0))
    rank_sum = float(np.sum(ranks[labels == 0]))
    return rank_sum - n_neg * (n_neg + 1) / 2.0


@st.composite
def scored_sample(draw, max_n=60):
    n = draw(st.integers(min_value=2, max_value=max_n))
    # a small value pool makes exact ties common
    pool = draw(st.integers(min_value=2, max_value=12))
    scores = draw(
        st.lists(
            st.integers(min_value=0, max_value=pool), min_size=n, max_size=n
        )
    )
    n_pos = draw(st.integers(min_value=1, max_value=n - 1))
    labels = np.zeros(n, dtype=np.int8)
    positions = draw(st.permutations(range(n)))
    labels[list(positions[:n_pos])] = 1
    return np.asarray(scores, dtype=np.float64) / pool, labels


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0]) == 1.0

    def test_all_scores_equal(self):
        assert roc_auc([0.4, 0.4, 0.4, 0.4], [1, 0, 1, 0]) == 0.5

    def test_mixed_instance_with_tie(self):
        # pairs: (.6 vs .4)=1, (.6 vs .6)=.5, (.2 vs .4)=0, (.2 vs .6)=0
        assert roc_auc([0.6, 0.4, 0.6, 0.2], [1, 0, 0, 1]) == 0.375

    def test_single_class_rejected(self):
        with pytest.raises(MetricError, match="single class"):
            roc_auc([0.1, 0.2], [1, 1])

    def test_non_finite_scores_rejected(self):
        with pytest.raises(MetricError, match="non-finite"):
            roc_auc([0.1, np.nan], [1, 0])

    @settings(max_examples=200, deadline=None)
    @given(scored_sample())
    def test_matches_pairwise_oracle(self, sample):
        scores, labels = sample
        assert abs(roc_auc(scores, labels) - brute_force_auc(scores, labels)) <= 1e-12

    @settings(max_examples=200, deadline=None)
    @given(scored_sample())
    def test_complement_identity_exact(self, sample):
        scores, labels = sample
        assert roc_auc(scores, labels) + roc_auc(-scores, labels) == 1.0

    @settings(max_examples=100, deadline=None)
    @given(scored_sample())
    def test_invariant_under_increasing_transform(self, sample):
        scores, labels = sample
        base = roc_auc(scores, labels)
        assert abs(roc_auc(2.0 * scores + 3.0, labels) - base) <= 1e-15
        assert abs(roc_auc(np.exp(scores), labels) - base) <= 1e-15


class TestTieStructure:
    def test_one_duplicated_value(self):
        ties = tie_structure([0.6, 0.4, 0.6, 0.2], [1, 0, 0, 1])
        assert ties.tie_group_sizes == (2,)
        assert (ties.n_neg, ties.n_pos) == (2, 2)

    def test_all_distinct(self):
        assert tie_structure([0.1, 0.2, 0.3], [1, 0, 1]).tie_group_sizes == ()

    def test_all_equal(self):
        ties = tie_structure([0.5] * 6, [1, 1, 1, 0, 0, 0])
        assert ties.tie_group_sizes == (6,)

    def test_invalid_structure_rejected(self):
        with pytest.raises(MetricError):
            TieStructure(n_neg=0, n_pos=2, tie_group_sizes=())
        with pytest.raises(MetricError):
            TieStructure(n_neg=2, n_pos=2, tie_group_sizes=(1,))
        with pytest.raises(MetricError):
            TieStructure(n_neg=1, n_pos=1, tie_group_sizes=(3,))


class TestUStatistic:
    def test_perfect_auc_gives_zero(self):
        ties = TieStructure(n_neg=2, n_pos=2, tie_group_sizes=())
        assert u_statistic(1.0, ties) == 0.0

    def test_mixed_instance(self):
        ties = tie_structure([0.6, 0.4, 0.6, 0.2], [1, 0, 0, 1])
        assert u_statistic(0.375, ties) == 2.5

    def test_null_mean(self):
        ties = TieStructure(n_neg=3, n_pos=4, tie_group_sizes=())
        assert u_statistic(0.5, ties) == 6.0

    @settings(max_examples=200, deadline=None)
    @given(scored_sample())
    def test_identity_matches_rank_sum(self, sample):
        scores, labels = sample
        ties = tie_structure(scores, labels)
        from_auc = u_statistic(roc_auc(scores, labels), ties)
        assert abs(from_auc - rank_sum_u_negatives(scores, labels)) <= 1e-9


class TestNullVariance:
    def test_tie_free_small(self):
        ties = TieStructure(n_neg=5, n_pos=5, tie_group_sizes=())
        assert abs(auc_null_variance(ties) - 11 / 300) <= 1e-15

    def test_single_pair(self):
        ties = TieStructure(n_neg=1, n_pos=1, tie_group_sizes=())
        assert auc_null_variance(ties) == 0.25

    def test_ties_shrink_variance(self):
        free = auc_null_variance(TieStructure(n_neg=4, n_pos=4, tie_group_sizes=()))
        tied = auc_null_variance(TieStructure(n_neg=4, n_pos=4, tie_group_sizes=(3, 2)))
        all_tied = auc_null_variance(TieStructure(n_neg=4, n_pos=4, tie_group_sizes=(8,)))
        assert all_tied < tied < free
        assert all_tied == 0.0  # one full tie group degenerates the null

    @settings(max_examples=100, deadline=None)
    @given(st.integers(min_value=1, max_value=40), st.integers(min_value=1, max_value=40))
    def test_tie_free_closed_form(self, n_neg, n_pos):
        ties = TieStructure(n_neg=n_neg, n_pos=n_pos, tie_group_sizes=())
        expected = (n_neg + n_pos + 1) / (12 * n_neg * n_pos)
        assert auc_null_variance(ties) == expected


class TestAnalyticPValue:
    def test_chance_auc_gives_half(self):
        ties = TieStructure(n_neg=6, n_pos=6, tie_group_sizes=())
        assert abs(auc_analytic_pvalue(0.5, ties) - 0.5) <= 1e-15

    def test_monotone_decreasing_in_auc(self):
        ties = TieStructure(n_neg=6, n_pos=6, tie_group_sizes=())
        values = [auc_analytic_pvalue(a, ties) for a in np.linspace(0.5, 1.0, 21)]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_degenerate_null_rejected(self):
        ties = TieStructure(n_neg=3, n_pos=3, tie_group_sizes=(6,))
        with pytest.raises(MetricError, match="degenerate"):
            auc_analytic_pvalue(0.7, ties)

    def test_matches_exhaustive_label_permutation_null(self):
        # 12 fixed tie-free scores; the exact null enumerates all C(12,6)
        # positive-label placements (record-wise label exchange)
        scores = np.array(
            [0.28, 0.461, 0.122, 0.523, 0.409, 0.072, 0.099, 0.986, 0.694, 0.449, 0.64, 0.27]
        )
        labels = np.array([0, 1, 1, 0, 1, 0, 0, 1, 1, 0, 1, 0], dtype=np.int8)
        observed = roc_auc(scores, labels)
        exceed = 0
        total = 0
        for pos_idx in combinations(range(12), 6):
            lab = np.zeros(12, dtype=np.int8)
            lab[list(pos_idx)] = 1
            total += 1
            if roc_auc(scores, lab) >= observed:
                exceed += 1
        exact = exceed / total
        analytic = auc_analytic_pvalue(observed, tie_structure(scores, labels))
        assert total == 924
        assert abs(exact - 0.046537) < 1e-6  # frozen from the enumeration
        assert abs(analytic - exact) <= 0.02

    def test_u_scale_left_tail_equals_auc_scale_right_tail(self):
        # the left tail of the U null and the right tail of the AUC null are
        # the same number under the linear U-AUC bridge
        rng = np.random.default_rng(4)
        for _ in range(25):
            n_neg = int(rng.integers(2, 30))
            n_pos = int(rng.integers(2, 30))
            ties = TieStructure(n_neg=n_neg, n_pos=n_pos, tie_group_sizes=())
            auc = float(rng.uniform(0.5, 0.99))
            u = u_statistic(auc, ties)
            u_mean = n_neg * n_pos / 2.0
            u_sd = n_neg * n_pos * math.sqrt(auc_null_variance(ties))
            left_tail_u = normal_upper_tail(-(u - u_mean) / u_sd)
            assert abs(left_tail_u - auc_analytic_pvalue(auc, ties)) <= 1e-13


class TestPseudoPValue:
    def test_chance_median_gives_half(self):
        ties = TieStructure(n_neg=10, n_pos=10, tie_group_sizes=())
        assert abs(pseudo_pvalue(0.5, ties) - 0.5) <= 1e-15

    def test_strictly_decreasing_in_median(self):
        ties = TieStructure(n_neg=20, n_pos=30, tie_group_sizes=(4, 2))
        values = [pseudo_pvalue(m, ties) for m in np.linspace(0.45, 0.95, 26)]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_confounded_cohort_magnitude(self):
        # a realized test set of the 20-subject cohort (53 controls, 99
        # cases, no ties) at null median 0.77; frozen value from a 50-digit
        # computation, and within an order of magnitude of the 6e-8
        # reported for this regime
        ties = TieStructure(n_neg=53, n_pos=99, tie_group_sizes=())
        p = pseudo_pvalue(0.77, ties)
        assert abs(p - 2.1596811305378708e-08) <= 1e-16
        assert 6e-9 < p < 6e-7

    def test_large_cohort_underflows_to_zero(self):
        # at a large-cohort scale the headline value underflows; the
        # log-space tail stays finite for reporting
        ties = TieStructure(n_neg=5000, n_pos=5000, tie_group_sizes=())
        assert pseudo_pvalue(0.954, ties) == 0.0
        z = (0.954 - 0.5) / math.sqrt(auc_null_variance(ties))
        log10_p = log10_normal_upper_tail(z)
        assert math.isfinite(log10_p)
        assert log10_p < -1000


class TestNormalTail:
    def test_against_high_precision_reference(self):
        mpmath = pytest.importorskip("mpmath")
        mpmath.mp.dps = 40
        for z in (-8.0, -3.0, -1.0, 0.0, 0.5, 1.0, 2.5, 5.0, 7.5, 8.0, 10.0):
            reference = float(mpmath.erfc(mpmath.mpf(z) / mpmath.sqrt(2)) / 2)
            assert abs(normal_upper_tail(z) - reference) <= 1e-12

    def test_log_tail_against_reference(self):
        mpmath = pytest.importorskip("mpmath")
        mpmath.mp.dps = 60
        for z in (0.5, 3.0, 7.9, 8.0, 9.0, 12.0, 20.0, 40.0, 80.0, 200.0):
            reference = float(
                mpmath.log10(mpmath.erfc(mpmath.mpf(z) / mpmath.sqrt(2)) / 2)
            )
            assert abs(log10_normal_upper_tail(z) - reference) <= 1e-6 * abs(reference)


class TestRocPoints:
    def test_perfect_separation_corner(self):
        points = roc_points([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0])
        assert points.tolist() == [[0, 0], [0, 0.5], [0, 1], [0.5, 1], [1, 1]]

    def test_all_tied_is_diagonal(self):
        points = roc_points([0.5] * 4, [1, 0, 1, 0])
        assert points.tolist() == [[0, 0], [1, 1]]

    @settings(max_examples=150, deadline=None)
    @given(scored_sample())
    def test_monotone_from_origin_to_corner(self, sample):
        scores, labels = sample
        points = roc_points(scores, labels)
        assert points[0].tolist() == [0.0, 0.0]
        assert points[-1].tolist() == [1.0, 1.0]
        assert np.all(np.diff(points[:, 0]) >= 0)
        assert np.all(np.diff(points[:, 1]) >= 0)

    @settings(max_examples=150, deadline=None)
    @given(scored_sample())
    def test_area_under_step_curve_equals_auc(self, sample):
        scores, labels = sample
        points = roc_points(scores, labels)
        area = float(np.trapezoid(points[:, 1], points[:, 0]))
        assert abs(area - roc_auc(scores, labels)) <= 1e-12
