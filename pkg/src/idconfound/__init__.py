"""Permutation tests for identity confounding in record-structured datasets.

A classifier evaluated on a record-wise train/test split can score far above
chance by recognizing *which subject* produced a record rather than the
subject's class.  This package detects that failure mode: a
disease-recognition permutation test (subject-wise label shuffles), an
identity-confounding permutation test (record-wise feature shuffles around a
median statistic), an analytic AUC shortcut with tie correction, and a
matrix-normal simulator for validating the whole battery.
"""

__version__ = "0.1.0"

from .dataset import (
    CsvSchema,
    DatasetError,
    DatasetSummary,
    RecordDataset,
    load_dataset,
    save_dataset,
    summarize,
)
from .engine import (
    DISEASE_RECOGNITION,
    IDENTITY_CONFOUNDING,
    LARGER_IS_BETTER,
    SMALLER_IS_BETTER,
    EngineCancelled,
    EngineError,
    NullDistribution,
    ObservedRun,
    PermConfig,
    Recommendation,
    SplitRun,
    disease_recognition_null,
    identity_confounding_null,
    make_split,
    multi_split_harness,
    observed_run,
    permutation_pvalue,
    recommend_split,
    smoothed_permutation_pvalue,
)
from .forest import (
    ForestError,
    ForestModel,
    ForestParams,
    fit_forest,
    load_model,
    predict_proba,
    save_model,
)
from .metrics import (
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
from .rng import Seed
from .simulate import (
    PRESETS,
    CalibrationResult,
    CalibrationRow,
    CovSpec,
    SimSpec,
    SimulationError,
    build_cov,
    latin_hypercube,
    matnorm_sample,
    null_study,
    simulate_dataset,
    simulate_subject,
)
from .splits import (
    RECORD_WISE,
    SUBJECT_WISE,
    SplitError,
    SplitIndexes,
    record_wise_split,
    record_wise_feature_shuffle,
    subject_wise_label_shuffle,
    subject_wise_split,
)

__all__ = [name for name in dir() if not name.startswith("_")]
