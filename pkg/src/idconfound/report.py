"""Machine-readable run reports.

Reports are UTF-8 JSON validating against the schema shipped in
`schemas/report-v1.json`.  They are self-describing: the config block
records the seed, budgets, split strategy, and classifier settings needed to
reproduce the run exactly.  Null distributions are embedded in full up to
10,000 samples; larger nulls are summarized as a 1,000-bin histogram plus
quantiles, which together with the observed value and the pseudo-null
density parameters is everything needed to redraw the usual figure panels.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from importlib import resources

import numpy as np

from . import __version__
from .dataset import DatasetSummary
from .engine import NullDistribution, ObservedRun, Recommendation
from .metrics import (
    MetricError,
    TieStructure,
    auc_analytic_pvalue,
    auc_null_variance,
    log10_normal_upper_tail,
    roc_points,
)
from .splits import SplitIndexes

SCHEMA_VERSION = 1
MAX_EMBEDDED_SAMPLES = 10_000
HISTOGRAM_BINS = 1_000

_QUANTILES = (0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99)


def load_report_schema() -> dict:
    """The published JSON schema for analyze reports."""
    text = resources.files("idconfound.schemas").joinpath("report-v1.json").read_text()
    return json.loads(text)


def summarize_samples(samples: np.ndarray) -> dict:
    """Embed small nulls verbatim; summarize large ones as histogram + quantiles."""
    samples = np.asarray(samples, dtype=np.float64)
    qs = np.quantile(samples, _QUANTILES)
    block: dict = {
        "n_samples": int(samples.size),
        "min": float(samples.min()),
        "max": float(samples.max()),
        "quantiles": {f"q{int(q * 100):02d}": float(v) for q, v in zip(_QUANTILES, qs)},
    }
    if samples.size <= MAX_EMBEDDED_SAMPLES:
        block["values"] = [float(v) for v in samples]
        block["histogram"] = None
    else:
        counts, edges = np.histogram(samples, bins=HISTOGRAM_BINS)
        block["values"] = None
        block["histogram"] = {
            "bin_edges": [float(e) for e in edges],
            "counts": [int(c) for c in counts],
        }
    return block


def null_block(null: NullDistribution) -> dict:
    return {
        "kind": null.kind,
        "observed": float(null.observed),
        "median": float(null.median),
        "p_value": float(null.p_value),
        "p_value_smoothed": float(null.p_value_smoothed),
        "resample_count": int(null.resample_count),
        "samples": summarize_samples(null.samples),
    }


def tie_block(ties: TieStructure) -> dict:
    return {
        "n_neg": ties.n_neg,
        "n_pos": ties.n_pos,
        "tie_group_sizes": list(ties.tie_group_sizes),
    }


def analytic_block(observed_auc: float, ties: TieStructure) -> dict | None:
    """Analytic AUC-null test plus log-space tail for extreme observations."""
    try:
        variance = auc_null_variance(ties)
        p_value = auc_analytic_pvalue(observed_auc, ties)
    except MetricError:
        return None
    z = (observed_auc - 0.5) / math.sqrt(variance)
    return {
        "p_value": float(p_value),
        "z": float(z),
        "log10_p_value": float(log10_normal_upper_tail(z)),
        "auc_null_variance": float(variance),
    }


def pseudo_block(pseudo_p: float | None, ties: TieStructure, median_auc: float) -> dict | None:
    if pseudo_p is None:
        return None
    variance = auc_null_variance(ties)
    z = (median_auc - 0.5) / math.sqrt(variance)
    return {
        "p_value": float(pseudo_p),
        "z": float(z),
        "log10_p_value": float(log10_normal_upper_tail(z)),
        "null_density": {"mean": 0.5, "variance": float(variance)},
    }


def split_block(split: SplitIndexes, train_fraction: float, ds) -> dict:
    train_subjects = len(set(ds.subject_index[split.train_rows].tolist()))
    test_subjects = len(set(ds.subject_index[split.test_rows].tolist()))
    return {
        "strategy": split.strategy,
        "train_fraction": float(train_fraction),
        "n_train_rows": int(len(split.train_rows)),
        "n_test_rows": int(len(split.test_rows)),
        "n_train_subjects": train_subjects,
        "n_test_subjects": test_subjects,
    }


def observed_block(observed: ObservedRun, labels_test: np.ndarray) -> dict:
    points = roc_points(observed.scores, labels_test)
    return {
        "auc": float(observed.auc),
        "tie_structure": tie_block(observed.ties),
        "roc_points": [[float(x), float(y)] for x, y in points],
    }


def recommendation_block(rec: Recommendation) -> dict:
    return {
        "recommendation": rec.recommendation,
        "alpha": rec.alpha,
        "record_observed_auc": float(rec.record_observed_auc),
        "record_disease_recognition": null_block(rec.record_disease_recognition),
        "pseudo_p_value": None if rec.pseudo_p_value is None else float(rec.pseudo_p_value),
        "identity_confounding": (
            None if rec.identity_confounding is None else null_block(rec.identity_confounding)
        ),
        "subject_observed_auc": (
            None if rec.subject_observed_auc is None else float(rec.subject_observed_auc)
        ),
        "subject_disease_recognition": (
            None
            if rec.subject_disease_recognition is None
            else null_block(rec.subject_disease_recognition)
        ),
        "pseudo_detects_confounding": rec.pseudo_detects_confounding,
        "permutation_detects_confounding": rec.permutation_detects_confounding,
        "pseudo_blind_spot": rec.pseudo_blind_spot,
        "steps": list(rec.steps),
    }


def build_report(
    config: dict,
    summary: DatasetSummary,
    split: SplitIndexes | None = None,
    ds=None,
    observed: ObservedRun | None = None,
    disease_recognition: NullDistribution | None = None,
    identity_confounding: NullDistribution | None = None,
    pseudo_p: float | None = None,
    pseudo_reference_median: float | None = None,
    recommendation: Recommendation | None = None,
    warnings: list[str] | None = None,
) -> dict:
    report: dict = {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "idconfound", "version": __version__},
        "config": config,
        "dataset_summary": summary.to_dict(),
        "warnings": warnings or [],
        "split": None,
        "observed": None,
        "disease_recognition": None,
        "identity_confounding": None,
        "pseudo": None,
        "analytic_auc_null": None,
        "recommendation": None,
    }
    if split is not None and ds is not None:
        report["split"] = split_block(split, config.get("train_fraction", 0.5), ds)
        if observed is not None:
            labels_test = ds.labels[split.test_rows]
            report["observed"] = observed_block(observed, labels_test)
            report["analytic_auc_null"] = analytic_block(observed.auc, observed.ties)
    if disease_recognition is not None:
        report["disease_recognition"] = null_block(disease_recognition)
    if identity_confounding is not None:
        report["identity_confounding"] = null_block(identity_confounding)
    if pseudo_p is not None and observed is not None and pseudo_reference_median is not None:
        report["pseudo"] = pseudo_block(pseudo_p, observed.ties, pseudo_reference_median)
    if recommendation is not None:
        report["recommendation"] = recommendation_block(recommendation)
    return report


def write_json(report: dict, path: str) -> None:
    text = json.dumps(report, indent=2, allow_nan=False)
    if path == "-":
        sys.stdout.write(text + "\n")
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _flatten(prefix: str, value, rows: list[tuple[str, str]]) -> None:
    if isinstance(value, dict):
        for key, sub in value.items():
            _flatten(f"{prefix}.{key}" if prefix else str(key), sub, rows)
    elif isinstance(value, list):
        if all(not isinstance(v, (dict, list)) for v in value):
            rows.append((prefix, ";".join(repr(v) if v is None else str(v) for v in value)))
        else:
            for i, sub in enumerate(value):
                _flatten(f"{prefix}[{i}]", sub, rows)
    else:
        rows.append((prefix, "" if value is None else str(value)))


def write_csv(report: dict, path: str) -> None:
    """Key,value long format for spreadsheet consumption."""
    rows: list[tuple[str, str]] = []
    _flatten("", report, rows)
    out = sys.stdout if path == "-" else open(path, "w", newline="", encoding="utf-8")
    try:
        writer = csv.writer(out)
        writer.writerow(["key", "value"])
        writer.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
