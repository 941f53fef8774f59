import numpy as np
import pytest

from idconfound import RecordDataset, Seed


def build_dataset(
    n_case_subjects=4,
    n_control_subjects=4,
    records_per_subject=2,
    n_features=3,
    seed=0,
    interleave=False,
):
    """Small synthetic dataset with predictable shape for unit tests."""
    rng = np.random.default_rng(seed)
    n_subjects = n_case_subjects + n_control_subjects
    if isinstance(records_per_subject, int):
        counts = [records_per_subject] * n_subjects
    else:
        counts = list(records_per_subject)
    labels = []
    subject_ids = []
    for s, count in enumerate(counts):
        label = 1 if s < n_case_subjects else 0
        labels.extend([label] * count)
        subject_ids.extend([f"s{s + 1}"] * count)
    features = rng.standard_normal((len(labels), n_features))
    if interleave:
        order = rng.permutation(len(labels))
        features = features[order]
        labels = [labels[i] for i in order]
        subject_ids = [subject_ids[i] for i in order]
    return RecordDataset.from_arrays(features, np.array(labels), subject_ids)


@pytest.fixture
def small_ds():
    return build_dataset()


@pytest.fixture
def seed():
    return Seed(12345)
