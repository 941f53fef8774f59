"""Record-structured dataset container, validation, and CSV ingestion.

A dataset is a dense feature matrix whose rows are records, plus one binary
label and one subject identifier per record.  Labels are constant within a
subject (the class is a property of the subject, not of the record), and the
container is immutable after construction so it can be shared freely across
worker threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """A file or array set violates the dataset contract."""


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for the CSV layout.

    `case_value` names the label string mapped to class 1; any single other
    value found in the label column is mapped to class 0.  When
    `feature_columns` is None, every column that is neither the subject nor
    the label column is treated as a feature, in header order.
    """

    subject_column: str = "subject_id"
    label_column: str = "label"
    case_value: str = "case"
    feature_columns: tuple[str, ...] | None = None


@dataclass(frozen=True, eq=False)
class RecordDataset:
    """Validated, immutable record-structured dataset.

    `subject_order` lists subjects in order of first appearance;
    `subject_index` maps each row to its position in that order, and
    `subject_labels` holds the per-subject class.  These derived arrays are
    what the shuffling and splitting code operates on.
    """

    features: np.ndarray
    labels: np.ndarray
    subject_ids: tuple[str, ...]
    feature_names: tuple[str, ...]
    subject_order: tuple[str, ...]
    subject_index: np.ndarray
    subject_labels: np.ndarray

    @classmethod
    def from_arrays(
        cls,
        features: np.ndarray,
        labels: np.ndarray,
        subject_ids,
        feature_names: tuple[str, ...] | None = None,
    ) -> "RecordDataset":
        features = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
        if features.ndim != 2:
            raise DatasetError(f"features must be a 2-D matrix, got shape {features.shape}")
        n_records, n_features = features.shape
        if n_records == 0:
            raise DatasetError("dataset has no records")
        if n_features == 0:
            raise DatasetError("dataset has no feature columns")
        labels = np.asarray(labels)
        if labels.shape != (n_records,):
            raise DatasetError(
                f"labels length {labels.shape} does not match {n_records} feature rows"
            )
        if not np.isin(labels, (0, 1)).all():
            raise DatasetError("labels must be 0 (control) or 1 (case)")
        labels = labels.astype(np.int8)
        subject_ids = tuple(str(s) for s in subject_ids)
        if len(subject_ids) != n_records:
            raise DatasetError(
                f"subject_ids length {len(subject_ids)} does not match {n_records} feature rows"
            )
        if not np.isfinite(features).all():
            bad = np.argwhere(~np.isfinite(features))[0]
            raise DatasetError(f"non-finite feature value at row {bad[0]}, column {bad[1]}")

        order: list[str] = []
        position: dict[str, int] = {}
        index = np.empty(n_records, dtype=np.int32)
        for row, sid in enumerate(subject_ids):
            if sid not in position:
                position[sid] = len(order)
                order.append(sid)
            index[row] = position[sid]
        subject_labels = np.empty(len(order), dtype=np.int8)
        subject_labels.fill(-1)
        for row in range(n_records):
            s = index[row]
            if subject_labels[s] == -1:
                subject_labels[s] = labels[row]
            elif subject_labels[s] != labels[row]:
                raise DatasetError(
                    f"subject {order[s]!r} carries both labels; labels must be constant per subject"
                )
        n_case = int(np.sum(subject_labels == 1))
        n_control = int(np.sum(subject_labels == 0))
        if n_case == 0 or n_control == 0:
            raise DatasetError("both classes must be present at the subject level")

        if feature_names is None:
            feature_names = tuple(f"f{i + 1}" for i in range(n_features))
        else:
            feature_names = tuple(feature_names)
            if len(feature_names) != n_features:
                raise DatasetError(
                    f"{len(feature_names)} feature names for {n_features} feature columns"
                )

        for arr in (features, labels, index, subject_labels):
            arr.setflags(write=False)
        return cls(
            features=features,
            labels=labels,
            subject_ids=subject_ids,
            feature_names=feature_names,
            subject_order=tuple(order),
            subject_index=index,
            subject_labels=subject_labels,
        )

    @property
    def n_records(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_subjects(self) -> int:
        return len(self.subject_order)

    def rows_of_subject(self, subject: int) -> np.ndarray:
        """Row indexes belonging to the subject at ordinal `subject`."""
        return np.nonzero(self.subject_index == subject)[0]


@dataclass(frozen=True)
class DatasetSummary:
    n_subjects: int
    n_case_subjects: int
    n_control_subjects: int
    n_records: int
    records_per_subject_min: int
    records_per_subject_max: int
    n_features: int

    def to_dict(self) -> dict:
        return {
            "n_subjects": self.n_subjects,
            "n_case_subjects": self.n_case_subjects,
            "n_control_subjects": self.n_control_subjects,
            "n_records": self.n_records,
            "records_per_subject_min": self.records_per_subject_min,
            "records_per_subject_max": self.records_per_subject_max,
            "n_features": self.n_features,
        }


def summarize(ds: RecordDataset) -> DatasetSummary:
    """Count subjects, per-class subjects, record range, and features."""
    counts = np.bincount(ds.subject_index, minlength=ds.n_subjects)
    return DatasetSummary(
        n_subjects=ds.n_subjects,
        n_case_subjects=int(np.sum(ds.subject_labels == 1)),
        n_control_subjects=int(np.sum(ds.subject_labels == 0)),
        n_records=ds.n_records,
        records_per_subject_min=int(counts.min()),
        records_per_subject_max=int(counts.max()),
        n_features=ds.n_features,
    )


def load_dataset(path, schema: CsvSchema | None = None) -> RecordDataset:
    """Load and validate a dataset from the CSV layout described by `schema`.

    The file must be UTF-8, comma-separated, with a header row; one record
    per line; `.` as the decimal point.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for required in (schema.subject_column, schema.label_column):
            if required not in header:
                raise DatasetError(f"{path}: missing required column {required!r}")
        subject_pos = header.index(schema.subject_column)
        label_pos = header.index(schema.label_column)
        if schema.feature_columns is None:
            feature_names = tuple(
                name for i, name in enumerate(header) if i not in (subject_pos, label_pos)
            )
        else:
            feature_names = tuple(schema.feature_columns)
            missing = [name for name in feature_names if name not in header]
            if missing:
                raise DatasetError(f"{path}: missing feature columns {missing}")
        if not feature_names:
            raise DatasetError(f"{path}: schema selects no feature columns")
        feature_pos = [header.index(name) for name in feature_names]

        subjects: list[str] = []
        raw_labels: list[str] = []
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"{path}:{line_no}: expected {len(header)} columns, found {len(row)}"
                )
            subjects.append(row[subject_pos].strip())
            raw_labels.append(row[label_pos].strip())
            values = []
            for pos in feature_pos:
                cell = row[pos].strip()
                try:
                    value = float(cell)
                except ValueError:
                    raise DatasetError(
                        f"{path}:{line_no}: non-numeric value {cell!r} in column {header[pos]!r}"
                    ) from None
                if not math.isfinite(value):
                    raise DatasetError(
                        f"{path}:{line_no}: non-finite value {cell!r} in column {header[pos]!r}"
                    )
                values.append(value)
            rows.append(values)

    if not rows:
        raise DatasetError(f"{path}: no data rows")
    distinct = sorted(set(raw_labels))
    if len(distinct) > 2:
        raise DatasetError(f"{path}: more than two label values: {distinct}")
    if schema.case_value not in distinct:
        raise DatasetError(
            f"{path}: case label {schema.case_value!r} not found (labels present: {distinct})"
        )
    if len(distinct) == 1:
        raise DatasetError(f"{path}: only one class present ({distinct[0]!r})")
    labels = np.fromiter(
        (1 if lab == schema.case_value else 0 for lab in raw_labels), dtype=np.int8
    )
    features = np.array(rows, dtype=np.float64)
    return RecordDataset.from_arrays(features, labels, subjects, feature_names)


def save_dataset(
    ds: RecordDataset,
    path,
    case_value: str = "case",
    control_value: str = "control",
) -> None:
    """Write the dataset in the CSV layout (17 significant digits per value)."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "label"] + list(ds.feature_names))
        for row in range(ds.n_records):
            label = case_value if ds.labels[row] == 1 else control_value
            writer.writerow(
                [ds.subject_ids[row], label]
                + [format(value, ".17g") for value in ds.features[row]]
            )
