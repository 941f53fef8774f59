"""Tie-aware AUC and the analytic AUC null under record-wise label exchange.

The AUC here is the Mann-Whitney form: over all (positive, negative) score
pairs, the fraction won by the positive score, with half credit for exact
ties.  It is computed via midranks in O(n log n) and agrees with the
pairwise definition to floating-point exactness.

When labels are exchanged record-wise (destroying both the label signal and
any subject structure), the AUC is asymptotically normal around 0.5 with a
variance that shrinks for tied scores.  `auc_analytic_pvalue` is the upper
tail of that null at the observed AUC; `pseudo_pvalue` evaluates the same
tail at the median of a disease-recognition null instead, giving the cheap
conservative screen for identity confounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    """Metric undefined for the given inputs."""


@dataclass(frozen=True)
class TieStructure:
    """Label counts and sizes of tied-score groups in a pooled score vector.

    Only groups of two or more equal scores are listed; exact float equality
    defines a tie (classifier vote fractions collide exactly, so no epsilon
    grouping is wanted).
    """

    n_neg: int
    n_pos: int
    tie_group_sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.n_neg < 1 or self.n_pos < 1:
            raise MetricError("both classes must be present")
        if any(t < 2 for t in self.tie_group_sizes):
            raise MetricError("tie groups must have size >= 2")
        if sum(self.tie_group_sizes) > self.n:
            raise MetricError("tie group sizes exceed the number of scores")

    @property
    def n(self) -> int:
        return self.n_neg + self.n_pos


def _check_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or labels.shape != scores.shape:
        raise MetricError("scores and labels must be 1-D arrays of equal length")
    if not np.isfinite(scores).all():
        raise MetricError("scores contain non-finite values")
    if not np.isin(labels, (0, 1)).all():
        raise MetricError("labels must be 0 or 1")
    if (labels == 1).all() or (labels == 0).all():
        raise MetricError("AUC undefined: labels contain a single class")
    return scores, labels.astype(np.int8)


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their rank block."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        # block spans sorted positions i..j; mean rank is exact in floats
        rank = (i + j) / 2.0 + 1.0
        ranks[order[i : j + 1]] = rank
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for tied pairs, via midranks."""
    scores, labels = _check_scores_labels(scores, labels)
    ranks = midranks(scores)
    n_pos = int(np.sum(labels == 1))
    n_neg = len(labels) - n_pos
    rank_sum_pos = float(np.sum(ranks[labels == 1]))
    # numerator is an exact half-integer, so the single division is the
    # only rounding step
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_neg * n_pos)


def tie_structure(scores, labels) -> TieStructure:
    """Tie groups over the pooled score vector plus per-class counts."""
    scores, labels = _check_scores_labels(scores, labels)
    _, counts = np.unique(scores, return_counts=True)
    groups = tuple(int(c) for c in counts if c >= 2)
    n_pos = int(np.sum(labels == 1))
    return TieStructure(n_neg=len(labels) - n_pos, n_pos=n_pos, tie_group_sizes=groups)


def _check_auc(value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise MetricError(f"AUC must lie in [0, 1], got {value}")
    return value


def u_statistic(auc: float, ties: TieStructure) -> float:
    """Mann-Whitney U implied by the AUC: n_neg * n_pos * (1 - AUC)."""
    return ties.n_neg * ties.n_pos * (1.0 - _check_auc(auc))


def auc_null_variance(ties: TieStructure) -> float:
    """Variance of the AUC under record-wise label exchange, tie-corrected.

    (n+1) / (12 n_neg n_pos)  -  sum_j t_j(t_j-1)(t_j+1) / (12 n_neg n_pos n (n-1))
    """
    n = ties.n
    if n < 2:
        raise MetricError("need at least 2 scores")
    correction = sum(t * (t - 1) * (t + 1) for t in ties.tie_group_sizes)
    return (n + 1) / (12.0 * ties.n_neg * ties.n_pos) - correction / (
        12.0 * ties.n_neg * ties.n_pos * n * (n - 1)
    )


def normal_upper_tail(z: float) -> float:
    """P(Z >= z) for standard normal Z, accurate to double precision."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def log10_normal_upper_tail(z: float) -> float:
    """log10 P(Z >= z), finite far past double-precision underflow.

    Below the underflow region the tail is evaluated directly; beyond it the
    standard asymptotic expansion of the Mills ratio takes over.
    """
    if z < 8.0:
        return math.log10(normal_upper_tail(z))
    # phi(z)/z * (1 - 1/z^2 + 3/z^4 - 15/z^6); relative error < 1e-9 for z >= 8
    z2 = z * z
    series = 1.0 - 1.0 / z2 + 3.0 / z2**2 - 15.0 / z2**3
    log_e = -0.5 * z2 - 0.5 * math.log(2.0 * math.pi) - math.log(z) + math.log(series)
    return log_e / math.log(10.0)


def _tail_pvalue(auc_like: float, ties: TieStructure) -> float:
    variance = auc_null_variance(ties)
    if variance <= 0.0:
        raise MetricError("degenerate null: zero AUC variance (all scores tied)")
    return normal_upper_tail((auc_like - 0.5) / math.sqrt(variance))


def auc_analytic_pvalue(observed_auc: float, ties: TieStructure) -> float:
    """Upper tail of the analytic AUC null at the observed AUC.

    Tests the joint null that the classifier performs neither label
    recognition nor subject identification (labels exchangeable
    record-wise).
    """
    return _tail_pvalue(_check_auc(observed_auc), ties)


def pseudo_pvalue(median_null_auc: float, ties: TieStructure) -> float:
    """Upper tail of the analytic AUC null at a disease-recognition null median.

    Not a proper test (it compares one statistic against another statistic's
    null) but a conservative screen: small values imply identity
    confounding; large values do not rule it out.
    """
    return _tail_pvalue(_check_auc(median_null_auc), ties)


def roc_points(scores, labels) -> np.ndarray:
    """ROC step curve as (FPR, TPR) rows from (0,0) to (1,1).

    One point per distinct score threshold (descending); tied scores
    advance both coordinates in a single step.
    """
    scores, labels = _check_scores_labels(scores, labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = len(labels) - n_pos
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    boundaries = np.nonzero(np.diff(sorted_scores))[0]
    cut_points = np.concatenate([boundaries + 1, [len(scores)]])
    tp = np.cumsum(sorted_labels)[cut_points - 1]
    fp = cut_points - tp
    points = np.empty((len(cut_points) + 1, 2), dtype=np.float64)
    points[0] = (0.0, 0.0)
    points[1:, 0] = fp / n_neg
    points[1:, 1] = tp / n_pos
    return points
