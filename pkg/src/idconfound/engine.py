"""Permutation-test engine for disease recognition and identity confounding.

Two nulls are generated against a fixed train/test split:

* disease-recognition null: labels are shuffled subject-wise (features
  intact), a classifier is trained per shuffle, and the test metric is
  recorded.  The observed metric is compared against these samples.  With a
  record-wise split this null sits away from chance exactly when the
  classifier can recognize subjects, so its location doubles as an informal
  confounding readout.

* identity-confounding null: the observed statistic is the median of a
  disease-recognition null; its null distribution is built by record-wise
  feature shuffles, each followed by an inner batch of subject-wise label
  shuffles whose metric median is recorded.  Both the observed median and
  every null median are computed with the same inner budget, which keeps the
  observed statistic exchangeable with the null samples.

Iterations are independent tasks: every shuffle and classifier fit draws
from a stream addressed by the iteration index, so results are identical for
any worker count and iterations can be computed in any order.  Degenerate
shuffles (a split side left single-class) are resampled with a bounded
attempt counter and reported, keeping the p-value denominator exact.
"""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import RecordDataset
from .forest import ForestParams, fit_forest, predict_proba
from .metrics import MetricError, TieStructure, pseudo_pvalue, roc_auc, tie_structure
from .rng import Seed
from .splits import (
    RECORD_WISE,
    SUBJECT_WISE,
    SplitIndexes,
    record_wise_split,
    shuffled_subject_labels,
    subject_wise_split,
)

LARGER_IS_BETTER = "larger_is_better"
SMALLER_IS_BETTER = "smaller_is_better"

DISEASE_RECOGNITION = "disease_recognition"
IDENTITY_CONFOUNDING = "identity_confounding"

# stream purposes under a run's master config seed
_P_OBSERVED_FIT = 0
_P_DR_ITER = 1
_P_IC_OUTER = 2
_P_IC_OBSERVED = 3
_P_SPLIT = 4
_P_HARNESS = 5
_P_RECOMMEND = 6


class EngineError(RuntimeError):
    """A permutation run could not be completed."""


class EngineCancelled(RuntimeError):
    """Run aborted through the cancellation token."""


@dataclass(frozen=True)
class PermConfig:
    """Budgets, metric, seed, and classifier settings for a test run.

    `n_label_perms` is the number of label shuffles for a
    disease-recognition null and the inner label budget of the
    identity-confounding test; `n_feature_perms` is the latter's outer
    feature-shuffle budget.
    """

    seed: Seed
    n_label_perms: int = 10_000
    n_feature_perms: int = 1_000
    metric: str = "auc"
    direction: str = LARGER_IS_BETTER
    forest: ForestParams = field(default_factory=ForestParams)
    n_workers: int = 0
    max_shuffle_retries: int = 100

    def __post_init__(self) -> None:
        if self.n_label_perms < 1 or self.n_feature_perms < 1:
            raise ValueError("permutation budgets must be >= 1")
        if self.metric != "auc":
            raise ValueError(f"unsupported metric {self.metric!r}")
        if self.direction not in (LARGER_IS_BETTER, SMALLER_IS_BETTER):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.n_workers < 0:
            raise ValueError("n_workers must be >= 0 (0 = auto)")


@dataclass(frozen=True, eq=False)
class NullDistribution:
    """Ordered null samples plus the observed statistic and its p-value."""

    samples: np.ndarray
    observed: float
    kind: str
    p_value: float
    p_value_smoothed: float
    median: float
    resample_count: int


@dataclass(frozen=True, eq=False)
class ObservedRun:
    """Classifier scores on the test rows under the original labels."""

    scores: np.ndarray
    auc: float
    ties: TieStructure


def permutation_pvalue(samples, observed: float, direction: str = LARGER_IS_BETTER) -> float:
    """Plug-in estimator: the fraction of null samples at least as good as
    the observed value (ties count as exceedances)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("samples must be non-empty")
    if direction == LARGER_IS_BETTER:
        exceed = int(np.count_nonzero(samples >= observed))
    elif direction == SMALLER_IS_BETTER:
        exceed = int(np.count_nonzero(samples <= observed))
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return exceed / samples.size


def smoothed_permutation_pvalue(
    samples, observed: float, direction: str = LARGER_IS_BETTER
) -> float:
    """Add-one variant (#exceedances + 1) / (p + 1), reported alongside."""
    samples = np.asarray(samples, dtype=np.float64)
    plug_in = permutation_pvalue(samples, observed, direction)
    return (plug_in * samples.size + 1.0) / (samples.size + 1.0)


def _resolve_workers(n_workers: int) -> int:
    if n_workers == 0:
        return max(1, os.cpu_count() or 1)
    return n_workers


def _run_indexed(
    n_tasks: int,
    task,
    n_workers: int,
    progress=None,
    cancel=None,
) -> tuple[np.ndarray, int]:
    """Evaluate task(i) -> (value, retries) for i in range(n_tasks).

    Values land in a result array indexed by i, so the output is identical
    for any worker count.  `progress(done, total)` fires as chunks finish;
    `cancel.is_set()` is honored between iterations.
    """
    values = np.empty(n_tasks, dtype=np.float64)
    retries = np.zeros(n_tasks, dtype=np.int64)
    workers = _resolve_workers(n_workers)
    done_lock = threading.Lock()
    done = 0

    def run_range(lo: int, hi: int) -> None:
        nonlocal done
        for i in range(lo, hi):
            if cancel is not None and cancel.is_set():
                raise EngineCancelled("cancelled between iterations")
            values[i], retries[i] = task(i)
        if progress is not None:
            with done_lock:
                done += hi - lo
                progress(done, n_tasks)

    if workers == 1 or n_tasks == 1:
        chunk = max(1, n_tasks // 50)
        for lo in range(0, n_tasks, chunk):
            run_range(lo, min(lo + chunk, n_tasks))
    else:
        chunk = max(1, n_tasks // (workers * 8))
        ranges = [(lo, min(lo + chunk, n_tasks)) for lo in range(0, n_tasks, chunk)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_range, lo, hi) for lo, hi in ranges]
            for future in as_completed(futures):
                future.result()
    return values, int(retries.sum())


def make_split(
    ds: RecordDataset, strategy: str, train_fraction: float, seed: Seed
) -> SplitIndexes:
    """Build a split of the requested strategy (subject-wise is stratified)."""
    if strategy == RECORD_WISE:
        return record_wise_split(ds, train_fraction, seed)
    if strategy == SUBJECT_WISE:
        return subject_wise_split(ds, train_fraction, seed, stratify_by_class=True)
    raise ValueError(f"unknown split strategy {strategy!r}")


def observed_run(ds: RecordDataset, split: SplitIndexes, cfg: PermConfig) -> ObservedRun:
    """Train on the original labels and score the test rows."""
    x_train = ds.features[split.train_rows]
    x_test = ds.features[split.test_rows]
    y_train = ds.labels[split.train_rows]
    y_test = ds.labels[split.test_rows]
    model = fit_forest(x_train, y_train, cfg.forest, cfg.seed.child(_P_OBSERVED_FIT))
    scores = predict_proba(model, x_test)
    return ObservedRun(
        scores=scores,
        auc=roc_auc(scores, y_test),
        ties=tie_structure(scores, y_test),
    )


def _shuffle_until_two_class(
    parent: Seed,
    subject_labels: np.ndarray,
    subject_index: np.ndarray,
    train_rows: np.ndarray,
    test_rows: np.ndarray,
    max_retries: int,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Subject-wise label shuffle, redrawn while either side is single-class."""
    for attempt in range(max_retries + 1):
        rng = parent.child(0, attempt).generator()
        y_star = shuffled_subject_labels(subject_labels, subject_index, rng)
        y_train = y_star[train_rows]
        y_test = y_star[test_rows]
        if 0 < y_train.sum() < len(y_train) and 0 < y_test.sum() < len(y_test):
            return y_train, y_test, attempt
    raise EngineError(
        f"label shuffle left a split side single-class in {max_retries + 1} attempts"
    )


def _label_null_task(
    parent: Seed,
    x_train: np.ndarray,
    x_test: np.ndarray,
    ds: RecordDataset,
    split: SplitIndexes,
    cfg: PermConfig,
):
    """One disease-recognition iteration under `parent`: shuffle, fit, score."""
    y_train, y_test, attempts = _shuffle_until_two_class(
        parent,
        ds.subject_labels,
        ds.subject_index,
        split.train_rows,
        split.test_rows,
        cfg.max_shuffle_retries,
    )
    model = fit_forest(x_train, y_train, cfg.forest, parent.child(1))
    scores = predict_proba(model, x_test)
    return roc_auc(scores, y_test), attempts


def disease_recognition_null(
    ds: RecordDataset,
    split: SplitIndexes,
    cfg: PermConfig,
    observed: ObservedRun | None = None,
    progress=None,
    cancel=None,
) -> NullDistribution:
    """Metric distribution under subject-wise label shuffles, features intact.

    The split is fixed; each of `cfg.n_label_perms` iterations shuffles the
    labels subject-wise, splits them by the same indexes, retrains the
    classifier, and scores the test side.
    """
    if observed is None:
        observed = observed_run(ds, split, cfg)
    x_train = ds.features[split.train_rows]
    x_test = ds.features[split.test_rows]

    def task(i: int):
        return _label_null_task(
            cfg.seed.child(_P_DR_ITER, i), x_train, x_test, ds, split, cfg
        )

    samples, resamples = _run_indexed(
        cfg.n_label_perms, task, cfg.n_workers, progress, cancel
    )
    samples.setflags(write=False)
    return NullDistribution(
        samples=samples,
        observed=observed.auc,
        kind=DISEASE_RECOGNITION,
        p_value=permutation_pvalue(samples, observed.auc, cfg.direction),
        p_value_smoothed=smoothed_permutation_pvalue(samples, observed.auc, cfg.direction),
        median=float(np.median(samples)),
        resample_count=resamples,
    )


def _median_of_label_null(
    parent: Seed,
    x_train: np.ndarray,
    x_test: np.ndarray,
    ds: RecordDataset,
    split: SplitIndexes,
    cfg: PermConfig,
) -> tuple[float, int]:
    """Median test metric over cfg.n_label_perms label shuffles (sequential)."""
    aucs = np.empty(cfg.n_label_perms, dtype=np.float64)
    attempts = 0
    for j in range(cfg.n_label_perms):
        aucs[j], extra = _label_null_task(
            parent.child(1, j), x_train, x_test, ds, split, cfg
        )
        attempts += extra
    return float(np.median(aucs)), attempts


def identity_confounding_null(
    ds: RecordDataset,
    strategy: str,
    train_fraction: float,
    cfg: PermConfig,
    split: SplitIndexes | None = None,
    progress=None,
    cancel=None,
) -> NullDistribution:
    """Null for the median-of-label-null statistic under feature shuffles.

    The observed statistic is the median of a disease-recognition null on
    the original features (inner budget `cfg.n_label_perms`).  Each of
    `cfg.n_feature_perms` outer iterations shuffles feature rows
    record-wise, reuses the same split indexes, and records the median of an
    identically-sized inner label null.
    """
    if split is None:
        split = make_split(ds, strategy, train_fraction, cfg.seed.child(_P_SPLIT))
    x_train = ds.features[split.train_rows]
    x_test = ds.features[split.test_rows]

    observed_parent = cfg.seed.child(_P_IC_OBSERVED)

    def observed_task(j: int):
        return _label_null_task(
            observed_parent.child(1, j), x_train, x_test, ds, split, cfg
        )

    observed_aucs, observed_retries = _run_indexed(
        cfg.n_label_perms, observed_task, cfg.n_workers, None, cancel
    )
    observed_median = float(np.median(observed_aucs))

    def outer_task(i: int):
        outer_seed = cfg.seed.child(_P_IC_OUTER, i)
        perm = outer_seed.child(0).generator().permutation(ds.n_records)
        shuffled = ds.features[perm]
        return _median_of_label_null(
            outer_seed,
            shuffled[split.train_rows],
            shuffled[split.test_rows],
            ds,
            split,
            cfg,
        )

    samples, resamples = _run_indexed(
        cfg.n_feature_perms, outer_task, cfg.n_workers, progress, cancel
    )
    samples.setflags(write=False)
    return NullDistribution(
        samples=samples,
        observed=observed_median,
        kind=IDENTITY_CONFOUNDING,
        p_value=permutation_pvalue(samples, observed_median, cfg.direction),
        p_value_smoothed=smoothed_permutation_pvalue(
            samples, observed_median, cfg.direction
        ),
        median=float(np.median(samples)),
        resample_count=resamples + observed_retries,
    )


@dataclass(frozen=True)
class SplitRun:
    """Per-split outcome of the multi-split robustness harness."""

    split_id: int
    strategy: str
    observed_auc: float | None
    p_value: float | None
    null_median: float | None
    null_quantiles: dict[str, float] | None
    resample_count: int
    error: str | None = None


def multi_split_harness(
    ds: RecordDataset,
    strategy: str,
    n_splits: int,
    cfg: PermConfig,
    train_fraction: float = 0.5,
    progress=None,
    cancel=None,
) -> list[SplitRun]:
    """Disease-recognition test repeated over independent splits.

    Each split gets an independent stream; failures are recorded per split
    and the run continues.
    """
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    results: list[SplitRun] = []
    for k in range(n_splits):
        split_seed = cfg.seed.child(_P_HARNESS, k)
        run_cfg = replace(cfg, seed=split_seed.child(1))
        try:
            split = make_split(ds, strategy, train_fraction, split_seed.child(0))
            obs = observed_run(ds, split, run_cfg)
            null = disease_recognition_null(ds, split, run_cfg, observed=obs, cancel=cancel)
        except EngineCancelled:
            raise
        except (ValueError, RuntimeError) as exc:
            results.append(
                SplitRun(
                    split_id=k,
                    strategy=strategy,
                    observed_auc=None,
                    p_value=None,
                    null_median=None,
                    null_quantiles=None,
                    resample_count=0,
                    error=str(exc),
                )
            )
            continue
        qs = np.quantile(null.samples, [0.05, 0.25, 0.5, 0.75, 0.95])
        results.append(
            SplitRun(
                split_id=k,
                strategy=strategy,
                observed_auc=obs.auc,
                p_value=null.p_value,
                null_median=null.median,
                null_quantiles={
                    "q05": float(qs[0]),
                    "q25": float(qs[1]),
                    "q50": float(qs[2]),
                    "q75": float(qs[3]),
                    "q95": float(qs[4]),
                },
                resample_count=null.resample_count,
            )
        )
        if progress is not None:
            progress(k + 1, n_splits)
    return results


@dataclass(frozen=True, eq=False)
class Recommendation:
    """Outcome of the split-recommendation ladder with every intermediate."""

    recommendation: str
    alpha: float
    record_observed_auc: float
    record_disease_recognition: NullDistribution
    pseudo_p_value: float | None
    identity_confounding: NullDistribution | None
    subject_observed_auc: float | None
    subject_disease_recognition: NullDistribution | None
    pseudo_detects_confounding: bool
    permutation_detects_confounding: bool | None
    pseudo_blind_spot: bool
    steps: tuple[str, ...]


def recommend_split(
    ds: RecordDataset,
    cfg: PermConfig,
    alpha: float = 0.05,
    train_fraction: float = 0.5,
    label_perms: int | None = None,
    progress=None,
    cancel=None,
) -> Recommendation:
    """Decision ladder for choosing a data-split strategy.

    1. record-wise disease-recognition test (informal confounding readout);
    2. pseudo p-value screen; significant -> recommend subject-wise;
    3. otherwise the identity-confounding permutation test; non-significant
       -> record-wise is acceptable;
    4. otherwise run the subject-wise disease-recognition test and recommend
       subject-wise.

    `label_perms` overrides the inner label budget of step 3 (defaults to
    cfg.n_label_perms, which the disease-recognition tests use in full).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    steps: list[str] = []
    root = cfg.seed.child(_P_RECOMMEND)

    record_split = make_split(ds, RECORD_WISE, train_fraction, root.child(0))
    dr_cfg = replace(cfg, seed=root.child(1))
    obs = observed_run(ds, record_split, dr_cfg)
    dr_record = disease_recognition_null(
        ds, record_split, dr_cfg, observed=obs, progress=progress, cancel=cancel
    )
    steps.append(
        f"record-wise disease recognition: observed AUC {obs.auc:.3f}, "
        f"null median {dr_record.median:.3f}, p {dr_record.p_value:.4g}"
    )

    pseudo: float | None
    try:
        pseudo = pseudo_pvalue(dr_record.median, obs.ties)
        steps.append(f"pseudo p-value {pseudo:.4g} at alpha {alpha}")
    except MetricError as exc:
        pseudo = None
        steps.append(f"pseudo p-value unavailable ({exc}); falling back to permutation test")

    if pseudo is not None and pseudo < alpha:
        steps.append("confounding detected by pseudo p-value: use subject-wise splits")
        return Recommendation(
            recommendation=SUBJECT_WISE,
            alpha=alpha,
            record_observed_auc=obs.auc,
            record_disease_recognition=dr_record,
            pseudo_p_value=pseudo,
            identity_confounding=None,
            subject_observed_auc=None,
            subject_disease_recognition=None,
            pseudo_detects_confounding=True,
            permutation_detects_confounding=None,
            pseudo_blind_spot=False,
            steps=tuple(steps),
        )

    ic_cfg = replace(
        cfg,
        seed=root.child(2),
        n_label_perms=label_perms if label_perms is not None else cfg.n_label_perms,
    )
    confounding = identity_confounding_null(
        ds, RECORD_WISE, train_fraction, ic_cfg, split=record_split,
        progress=progress, cancel=cancel,
    )
    steps.append(
        f"identity confounding permutation test: observed median "
        f"{confounding.observed:.3f}, p {confounding.p_value:.4g}"
    )

    if confounding.p_value >= alpha:
        steps.append("no confounding detected: record-wise splits are acceptable")
        return Recommendation(
            recommendation=RECORD_WISE,
            alpha=alpha,
            record_observed_auc=obs.auc,
            record_disease_recognition=dr_record,
            pseudo_p_value=pseudo,
            identity_confounding=confounding,
            subject_observed_auc=None,
            subject_disease_recognition=None,
            pseudo_detects_confounding=False,
            permutation_detects_confounding=False,
            pseudo_blind_spot=False,
            steps=tuple(steps),
        )

    blind_spot = pseudo is not None and pseudo >= alpha
    if blind_spot:
        steps.append(
            "warning: permutation test detects confounding the pseudo p-value missed"
        )
    subject_split = make_split(ds, SUBJECT_WISE, train_fraction, root.child(3))
    subj_cfg = replace(cfg, seed=root.child(4))
    subj_obs = observed_run(ds, subject_split, subj_cfg)
    dr_subject = disease_recognition_null(
        ds, subject_split, subj_cfg, observed=subj_obs, progress=progress, cancel=cancel
    )
    steps.append(
        f"subject-wise disease recognition: observed AUC {subj_obs.auc:.3f}, "
        f"p {dr_subject.p_value:.4g}; use subject-wise splits"
    )
    return Recommendation(
        recommendation=SUBJECT_WISE,
        alpha=alpha,
        record_observed_auc=obs.auc,
        record_disease_recognition=dr_record,
        pseudo_p_value=pseudo,
        identity_confounding=confounding,
        subject_observed_auc=subj_obs.auc,
        subject_disease_recognition=dr_subject,
        pseudo_detects_confounding=False,
        permutation_detects_confounding=True,
        pseudo_blind_spot=blind_spot,
        steps=tuple(steps),
    )
