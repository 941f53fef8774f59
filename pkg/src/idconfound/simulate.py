"""Matrix-normal synthetic data for validating the permutation tests.

Each subject's feature block is an independent draw from

    X_s = mu_s * 1 + a * y_s * 1 + b * U_s + c * sigma_s * V_s + d * E_s

where y_s is the subject's class encoded as -1 (control) / +1 (case),
U_s has an AR(1) covariance across records (serial dependence within a
subject), V_s is white noise, and E_s has compound-symmetric covariance
across features.  Choosing the coefficients reproduces the canonical
confounding mechanisms: serial dependence, subject-specific means or
variances, and pure label shifts; the all-noise setting is the joint null.

`null_study` runs the full battery over many datasets drawn from a Latin
hypercube of null-model parameters, which is the type-I-error calibration
harness for both permutation tests, the pseudo p-value, and the analytic
AUC null.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .dataset import RecordDataset
from .engine import (
    PermConfig,
    disease_recognition_null,
    identity_confounding_null,
    make_split,
    observed_run,
)
from .forest import ForestParams
from .metrics import MetricError, auc_analytic_pvalue, pseudo_pvalue
from .rng import Seed
from .splits import RECORD_WISE, SUBJECT_WISE

IDENTITY = "identity"
AR1 = "ar1"
COMPOUND_SYMMETRIC = "compound_symmetric"


class SimulationError(ValueError):
    """Invalid generative specification."""


@dataclass(frozen=True)
class CovSpec:
    """Covariance structure: identity, AR(1) rho^|i-j|, or compound symmetric."""

    kind: str
    dim: int
    rho: float = 0.0

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise SimulationError("covariance dimension must be >= 1")
        if self.kind == AR1:
            if not abs(self.rho) < 1.0:
                raise SimulationError(f"AR(1) requires |rho| < 1, got {self.rho}")
        elif self.kind == COMPOUND_SYMMETRIC:
            lower = -1.0 / (self.dim - 1) if self.dim > 1 else -1.0
            if not lower < self.rho < 1.0:
                raise SimulationError(
                    f"compound symmetry requires rho in ({lower:.4g}, 1) "
                    f"for dimension {self.dim}, got {self.rho}"
                )
        elif self.kind != IDENTITY:
            raise SimulationError(f"unknown covariance kind {self.kind!r}")


def build_cov(spec: CovSpec) -> np.ndarray:
    """Materialize the covariance matrix for `spec`."""
    if spec.kind == IDENTITY:
        return np.eye(spec.dim)
    if spec.kind == AR1:
        lags = np.abs(np.subtract.outer(np.arange(spec.dim), np.arange(spec.dim)))
        return spec.rho ** lags
    cov = np.full((spec.dim, spec.dim), spec.rho, dtype=np.float64)
    np.fill_diagonal(cov, 1.0)
    return cov


@lru_cache(maxsize=256)
def _cholesky_of(kind: str, dim: int, rho: float) -> np.ndarray:
    factor = np.linalg.cholesky(build_cov(CovSpec(kind, dim, rho)))
    factor.setflags(write=False)
    return factor


def _as_generator(seed) -> np.random.Generator:
    return seed.generator() if isinstance(seed, Seed) else seed


def matnorm_sample(mean, row_cov, col_cov, seed) -> np.ndarray:
    """One matrix-normal draw: mean + L_row @ Z @ L_col.T.

    vec of the result has covariance col_cov (x) row_cov.  `seed` may be a
    Seed or an already-open generator.
    """
    mean = np.asarray(mean, dtype=np.float64)
    if mean.ndim != 2:
        raise SimulationError(f"mean must be a matrix, got shape {mean.shape}")
    rows, cols = mean.shape
    row_cov = np.asarray(row_cov, dtype=np.float64)
    col_cov = np.asarray(col_cov, dtype=np.float64)
    if row_cov.shape != (rows, rows) or col_cov.shape != (cols, cols):
        raise SimulationError("covariance shapes must match the mean matrix")
    try:
        l_row = np.linalg.cholesky(row_cov)
        l_col = np.linalg.cholesky(col_cov)
    except np.linalg.LinAlgError as exc:
        raise SimulationError(f"covariance not positive definite: {exc}") from None
    z = _as_generator(seed).standard_normal((rows, cols))
    return mean + l_row @ z @ l_col.T


@dataclass(frozen=True)
class SimSpec:
    """Generative parameters for one synthetic cohort.

    `mu` is either a constant or ("normal", scale) for a per-subject draw
    scale*N(0,1); `sigma` is either a constant or
    ("uniform_variance", lo, hi) drawing sigma_s^2 ~ U(lo, hi) per subject.
    """

    n_cases: int = 13
    n_controls: int = 7
    records_per_subject: tuple[int, int] = (10, 20)
    n_features: int = 10
    a: float = 0.0
    b: float = 0.0
    c: float = 1.0
    d: float = 0.0
    mu: float | tuple = 0.0
    sigma: float | tuple = 1.0
    rho_r: float = 0.95
    rho_f: float = 0.5

    def __post_init__(self) -> None:
        if self.n_cases < 1 or self.n_controls < 1:
            raise SimulationError("need at least one case and one control subject")
        lo, hi = self.records_per_subject
        if lo < 1 or hi < lo:
            raise SimulationError(f"bad records_per_subject range {self.records_per_subject}")
        if self.n_features < 1:
            raise SimulationError("need at least one feature")
        CovSpec(AR1, max(2, lo), self.rho_r)
        CovSpec(COMPOUND_SYMMETRIC, self.n_features, self.rho_f)
        for name in ("mu", "sigma"):
            value = getattr(self, name)
            if isinstance(value, tuple):
                if name == "mu" and not (len(value) == 2 and value[0] == "normal"):
                    raise SimulationError(f"unknown mu rule {value!r}")
                if name == "sigma":
                    if not (len(value) == 3 and value[0] == "uniform_variance"):
                        raise SimulationError(f"unknown sigma rule {value!r}")
                    _, lo_v, hi_v = value
                    if not 0 < lo_v <= hi_v:
                        raise SimulationError(f"bad variance range in {value!r}")


def _draw_mu(spec: SimSpec, rng: np.random.Generator) -> float:
    if isinstance(spec.mu, tuple):
        return float(spec.mu[1] * rng.standard_normal())
    return float(spec.mu)


def _draw_sigma(spec: SimSpec, rng: np.random.Generator) -> float:
    if isinstance(spec.sigma, tuple):
        _, lo, hi = spec.sigma
        return float(np.sqrt(rng.uniform(lo, hi)))
    return float(spec.sigma)


def simulate_subject(spec: SimSpec, y_sign: int, n_records: int, seed) -> np.ndarray:
    """One subject's feature block for class `y_sign` in {-1, +1}.

    Draw order under the stream is fixed: mu, sigma, then the three noise
    matrices, so blocks are reproducible per subject stream.
    """
    if y_sign not in (-1, 1):
        raise SimulationError(f"y_sign must be -1 or +1, got {y_sign}")
    rng = _as_generator(seed)
    mu_s = _draw_mu(spec, rng)
    sigma_s = _draw_sigma(spec, rng)
    block = np.full((n_records, spec.n_features), mu_s + spec.a * y_sign)
    if spec.b != 0.0:
        l_row = _cholesky_of(AR1, n_records, spec.rho_r)
        block += spec.b * (l_row @ rng.standard_normal((n_records, spec.n_features)))
    if spec.c != 0.0:
        block += (spec.c * sigma_s) * rng.standard_normal((n_records, spec.n_features))
    if spec.d != 0.0:
        l_col = _cholesky_of(COMPOUND_SYMMETRIC, spec.n_features, spec.rho_f)
        block += spec.d * (rng.standard_normal((n_records, spec.n_features)) @ l_col.T)
    return block


PRESETS: dict[str, SimSpec] = {
    # serial dependence only: confounded, no label signal
    "example1": SimSpec(a=0.0, b=2.0, c=1.0, d=0.5),
    # serial dependence plus a label shift: confounded and recognizable
    "example2": SimSpec(a=1.0, b=2.0, c=1.0, d=0.5),
    # subject-specific means, independent records
    "example3": SimSpec(a=0.0, b=0.0, c=1.0, d=0.0, mu=("normal", 2.0)),
    # label shift only; the shift itself induces mild confounding
    "example4": SimSpec(a=1.0, b=0.0, c=1.0, d=0.0),
    # subject-specific variances, independent records
    "example5": SimSpec(a=0.0, b=0.0, c=1.0, d=0.0, sigma=("uniform_variance", 1.0, 10.0)),
    # fully i.i.d. noise: the joint null
    "example6": SimSpec(a=0.0, b=0.0, c=1.0, d=0.0),
}


def simulate_dataset(spec, seed: Seed) -> RecordDataset:
    """Simulate a cohort: a preset name or a SimSpec.

    Subjects are generated on independent child streams (cases first); each
    subject's record count is drawn uniformly on the configured range.
    """
    if isinstance(spec, str):
        try:
            spec = PRESETS[spec]
        except KeyError:
            raise SimulationError(
                f"unknown preset {spec!r}; known: {sorted(PRESETS)}"
            ) from None
    if not isinstance(spec, SimSpec):
        raise SimulationError(f"spec must be a preset name or SimSpec, got {type(spec)}")

    n_subjects = spec.n_cases + spec.n_controls
    width = len(str(n_subjects))
    blocks: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    subject_ids: list[str] = []
    lo, hi = spec.records_per_subject
    for s in range(n_subjects):
        label = 1 if s < spec.n_cases else 0
        rng = seed.child(7, s).generator()
        n_records = int(rng.integers(lo, hi + 1))
        block = simulate_subject(spec, 1 if label else -1, n_records, rng)
        blocks.append(block)
        labels.append(np.full(n_records, label, dtype=np.int8))
        subject_ids.extend([f"s{s + 1:0{width}d}"] * n_records)
    return RecordDataset.from_arrays(
        np.vstack(blocks), np.concatenate(labels), subject_ids
    )


def latin_hypercube(n_points: int, n_dims: int, rng: np.random.Generator) -> np.ndarray:
    """n_points samples in [0,1)^n_dims with one point per axis bin."""
    if n_points < 1 or n_dims < 1:
        raise SimulationError("latin hypercube needs n_points >= 1 and n_dims >= 1")
    coords = np.empty((n_points, n_dims), dtype=np.float64)
    for dim in range(n_dims):
        coords[:, dim] = (rng.permutation(n_points) + rng.random(n_points)) / n_points
    return coords


@dataclass(frozen=True)
class CalibrationRow:
    """All p-values for one null dataset under one split strategy."""

    dataset_id: int
    strategy: str
    c: float
    d: float
    n_cases: int
    n_controls: int
    records_per_subject: int
    observed_auc: float | None
    disease_recognition_p: float | None
    identity_confounding_p: float | None
    pseudo_p: float | None
    analytic_p: float | None
    error: str | None = None


@dataclass(frozen=True)
class CalibrationResult:
    rows: tuple[CalibrationRow, ...]
    n_datasets: int
    perms: int
    label_perms: int

    def fractions_below(self, level: float) -> dict[str, dict[str, float]]:
        """Fraction of each p-value kind below `level`, per split strategy."""
        out: dict[str, dict[str, float]] = {}
        kinds = {
            "disease_recognition_p": lambda r: r.disease_recognition_p,
            "identity_confounding_p": lambda r: r.identity_confounding_p,
            "pseudo_p": lambda r: r.pseudo_p,
            "analytic_p": lambda r: r.analytic_p,
        }
        for strategy in (RECORD_WISE, SUBJECT_WISE):
            rows = [r for r in self.rows if r.strategy == strategy and r.error is None]
            out[strategy] = {}
            for name, get in kinds.items():
                values = [get(r) for r in rows if get(r) is not None]
                out[strategy][name] = (
                    float(np.mean([v < level for v in values])) if values else float("nan")
                )
        return out

    def median_pseudo_p(self, strategy: str) -> float:
        values = [
            r.pseudo_p for r in self.rows if r.strategy == strategy and r.pseudo_p is not None
        ]
        return float(np.median(values)) if values else float("nan")


# null-model parameter box for the calibration study
_NULL_BOX = {
    "c": (0.1, 2.0),
    "d": (0.1, 2.0),
    "n_cases": (5, 10),
    "n_controls": (5, 10),
    "records_per_subject": (10, 20),
}


def _scale_int(unit: float, lo: int, hi: int) -> int:
    return int(lo + np.floor(unit * (hi - lo + 1)))


def null_study(
    n_datasets: int,
    perms: int,
    seed: Seed,
    label_perms: int = 25,
    train_fraction: float = 0.5,
    forest: ForestParams | None = None,
    n_workers: int = 0,
    progress=None,
) -> CalibrationResult:
    """Type-I calibration: the full battery on datasets with no signal.

    Each dataset draws (c, d, case count, control count, records per
    subject) from a Latin hypercube over the null box and is tested under
    both split strategies.  Per-dataset failures are recorded and the study
    continues.
    """
    if n_datasets < 1:
        raise SimulationError("n_datasets must be >= 1")
    if perms < 1 or label_perms < 1:
        raise SimulationError("permutation budgets must be >= 1")
    forest = forest or ForestParams()
    coords = latin_hypercube(n_datasets, len(_NULL_BOX), seed.child(8).generator())
    rows: list[CalibrationRow] = []
    for k in range(n_datasets):
        c = _NULL_BOX["c"][0] + coords[k, 0] * (_NULL_BOX["c"][1] - _NULL_BOX["c"][0])
        d = _NULL_BOX["d"][0] + coords[k, 1] * (_NULL_BOX["d"][1] - _NULL_BOX["d"][0])
        n_cases = _scale_int(coords[k, 2], *_NULL_BOX["n_cases"])
        n_controls = _scale_int(coords[k, 3], *_NULL_BOX["n_controls"])
        n_records = _scale_int(coords[k, 4], *_NULL_BOX["records_per_subject"])
        spec = SimSpec(
            n_cases=n_cases,
            n_controls=n_controls,
            records_per_subject=(n_records, n_records),
            a=0.0,
            b=0.0,
            c=c,
            d=d,
        )
        base = dict(
            c=c, d=d, n_cases=n_cases, n_controls=n_controls, records_per_subject=n_records
        )
        try:
            ds = simulate_dataset(spec, seed.child(9, k))
        except (SimulationError, ValueError) as exc:
            for strategy in (RECORD_WISE, SUBJECT_WISE):
                rows.append(
                    CalibrationRow(
                        dataset_id=k, strategy=strategy, observed_auc=None,
                        disease_recognition_p=None, identity_confounding_p=None,
                        pseudo_p=None, analytic_p=None, error=str(exc), **base,
                    )
                )
            continue
        for strategy_code, strategy in enumerate((RECORD_WISE, SUBJECT_WISE)):
            run_seed = seed.child(10, k, strategy_code)
            dr_cfg = PermConfig(
                seed=run_seed.child(0),
                n_label_perms=perms,
                n_feature_perms=perms,
                forest=forest,
                n_workers=n_workers,
            )
            ic_cfg = replace(dr_cfg, seed=run_seed.child(1), n_label_perms=label_perms)
            try:
                split = make_split(ds, strategy, train_fraction, run_seed.child(2))
                obs = observed_run(ds, split, dr_cfg)
                dr = disease_recognition_null(ds, split, dr_cfg, observed=obs)
                ic = identity_confounding_null(
                    ds, strategy, train_fraction, ic_cfg, split=split
                )
                try:
                    pseudo = pseudo_pvalue(dr.median, obs.ties)
                    analytic = auc_analytic_pvalue(obs.auc, obs.ties)
                except MetricError:
                    pseudo = None
                    analytic = None
                rows.append(
                    CalibrationRow(
                        dataset_id=k, strategy=strategy, observed_auc=obs.auc,
                        disease_recognition_p=dr.p_value,
                        identity_confounding_p=ic.p_value,
                        pseudo_p=pseudo, analytic_p=analytic, **base,
                    )
                )
            except (ValueError, RuntimeError) as exc:
                rows.append(
                    CalibrationRow(
                        dataset_id=k, strategy=strategy, observed_auc=None,
                        disease_recognition_p=None, identity_confounding_p=None,
                        pseudo_p=None, analytic_p=None, error=str(exc), **base,
                    )
                )
        if progress is not None:
            progress(k + 1, n_datasets)
    return CalibrationResult(
        rows=tuple(rows), n_datasets=n_datasets, perms=perms, label_perms=label_perms
    )
