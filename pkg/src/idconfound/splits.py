"""Train/test split strategies and the two permutation shuffles.

The two split strategies differ in what gets randomized: a record-wise split
assigns individual rows to train or test regardless of subject, while a
subject-wise split assigns whole subjects, so no subject's records ever
straddle the boundary.

The two shuffles are the primitives behind the permutation tests: a
subject-wise label shuffle permutes the subject-level label vector (breaking
the label signal while keeping each subject's records intact), and a
record-wise feature shuffle permutes whole feature rows (breaking the link
between features and both subjects and labels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import RecordDataset
from .rng import Seed

RECORD_WISE = "record_wise"
SUBJECT_WISE = "subject_wise"
STRATEGIES = (RECORD_WISE, SUBJECT_WISE)


class SplitError(ValueError):
    """A requested split cannot be constructed."""


@dataclass(frozen=True, eq=False)
class SplitIndexes:
    """Disjoint train/test row-index sets covering every record."""

    train_rows: np.ndarray
    test_rows: np.ndarray
    strategy: str


def _finalize_split(ds: RecordDataset, train_rows: np.ndarray, strategy: str) -> SplitIndexes:
    """Validate the split invariants and freeze the index arrays."""
    train_rows = np.sort(np.asarray(train_rows, dtype=np.int64))
    mask = np.zeros(ds.n_records, dtype=bool)
    mask[train_rows] = True
    test_rows = np.nonzero(~mask)[0].astype(np.int64)
    if len(train_rows) + len(test_rows) != ds.n_records or len(np.unique(train_rows)) != len(
        train_rows
    ):
        raise SplitError("train and test rows must be disjoint and cover all records")
    for name, rows in (("train", train_rows), ("test", test_rows)):
        if len(rows) == 0:
            raise SplitError(f"{name} set is empty")
        present = np.unique(ds.labels[rows])
        if len(present) < 2:
            raise SplitError(f"{name} set contains a single class")
    if strategy == SUBJECT_WISE:
        train_subjects = set(ds.subject_index[train_rows].tolist())
        test_subjects = set(ds.subject_index[test_rows].tolist())
        if train_subjects & test_subjects:
            raise SplitError("subject-wise split has subjects on both sides")
    train_rows.setflags(write=False)
    test_rows.setflags(write=False)
    return SplitIndexes(train_rows=train_rows, test_rows=test_rows, strategy=strategy)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def record_wise_split(
    ds: RecordDataset,
    train_fraction: float,
    seed: Seed,
    max_retries: int = 100,
) -> SplitIndexes:
    """Sample rows uniformly without replacement into the training set.

    Redraws (up to `max_retries` times) if a side ends up single-class, then
    raises.  No stratification: records are simply randomly selected.
    """
    if not 0.0 < train_fraction < 1.0:
        raise SplitError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = ds.n_records
    n_train = _round_half_up(train_fraction * n)
    if n_train == 0 or n_train == n:
        raise SplitError(
            f"train_fraction {train_fraction} leaves an empty side for {n} records"
        )
    rng = seed.generator()
    for _ in range(max_retries + 1):
        perm = rng.permutation(n)
        train_rows = perm[:n_train]
        try:
            return _finalize_split(ds, train_rows, RECORD_WISE)
        except SplitError:
            continue
    raise SplitError(
        f"could not draw a two-class record-wise split in {max_retries + 1} attempts"
    )


def _stratified_train_counts(ds: RecordDataset, train_fraction: float) -> dict[int, int]:
    """Per-class training subject counts by largest remainder.

    Targets round(train_fraction * n_subjects) total; remainder ties go to
    the larger class, then to the case class, so counts are deterministic.
    """
    total_target = _round_half_up(train_fraction * ds.n_subjects)
    class_sizes = {
        1: int(np.sum(ds.subject_labels == 1)),
        0: int(np.sum(ds.subject_labels == 0)),
    }
    counts = {label: int(np.floor(train_fraction * size)) for label, size in class_sizes.items()}
    remainders = {
        label: train_fraction * size - counts[label] for label, size in class_sizes.items()
    }
    leftover = total_target - sum(counts.values())
    order = sorted(
        class_sizes, key=lambda lab: (-remainders[lab], -class_sizes[lab], -lab)
    )
    for label in order:
        if leftover <= 0:
            break
        counts[label] += 1
        leftover -= 1
    for label, size in class_sizes.items():
        if counts[label] < 1 or size - counts[label] < 1:
            raise SplitError(
                f"cannot place class {label} on both sides: {size} subjects at "
                f"fraction {train_fraction}"
            )
    return counts


def subject_wise_split(
    ds: RecordDataset,
    train_fraction: float,
    seed: Seed,
    stratify_by_class: bool = True,
    max_retries: int = 100,
) -> SplitIndexes:
    """Assign whole subjects to train or test.

    When stratified, per-class subject proportions match `train_fraction` to
    within rounding; otherwise subjects are sampled uniformly and the draw is
    retried while a side lacks a class.
    """
    if not 0.0 < train_fraction < 1.0:
        raise SplitError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n_subjects = ds.n_subjects
    rng = seed.generator()

    if stratify_by_class:
        counts = _stratified_train_counts(ds, train_fraction)
        train_subjects: list[int] = []
        for label in (1, 0):
            members = np.nonzero(ds.subject_labels == label)[0]
            picked = rng.permutation(len(members))[: counts[label]]
            train_subjects.extend(members[picked].tolist())
        train_mask = np.zeros(n_subjects, dtype=bool)
        train_mask[train_subjects] = True
        train_rows = np.nonzero(train_mask[ds.subject_index])[0]
        return _finalize_split(ds, train_rows, SUBJECT_WISE)

    n_train = _round_half_up(train_fraction * n_subjects)
    if n_train == 0 or n_train == n_subjects:
        raise SplitError(
            f"train_fraction {train_fraction} leaves an empty side for {n_subjects} subjects"
        )
    for _ in range(max_retries + 1):
        perm = rng.permutation(n_subjects)
        train_mask = np.zeros(n_subjects, dtype=bool)
        train_mask[perm[:n_train]] = True
        train_rows = np.nonzero(train_mask[ds.subject_index])[0]
        try:
            return _finalize_split(ds, train_rows, SUBJECT_WISE)
        except SplitError:
            continue
    raise SplitError(
        f"could not draw a two-class subject-wise split in {max_retries + 1} attempts"
    )


def shuffled_subject_labels(
    subject_labels: np.ndarray, subject_index: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Permute the subject-level label vector and broadcast it to records.

    This is the hot-path form used inside the permutation engine; it keeps
    per-class subject counts exactly and assigns every record of a subject
    that subject's permuted label.
    """
    perm = rng.permutation(len(subject_labels))
    return subject_labels[perm][subject_index]


def subject_wise_label_shuffle(ds: RecordDataset, seed: Seed) -> np.ndarray:
    """Per-record labels after a uniform subject-wise permutation of labels."""
    return shuffled_subject_labels(ds.subject_labels, ds.subject_index, seed.generator())


def record_wise_feature_shuffle(ds: RecordDataset, seed: Seed) -> np.ndarray:
    """Feature matrix with rows permuted uniformly as whole units.

    Labels and subject identifiers are untouched by construction: the caller
    keeps using the dataset's own label and subject arrays against the
    returned matrix.
    """
    perm = seed.generator().permutation(ds.n_records)
    return ds.features[perm]
