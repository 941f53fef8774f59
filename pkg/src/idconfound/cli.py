"""Command-line front end: analyze | simulate | calibrate.

Exit codes: 0 success, 2 usage error, 3 data error, 4 runtime error.
Options resolve as flags > config file (flat `key = value` lines) > defaults.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path
from types import SimpleNamespace

from .dataset import CsvSchema, DatasetError, load_dataset, save_dataset, summarize
from .engine import (
    EngineError,
    PermConfig,
    disease_recognition_null,
    identity_confounding_null,
    make_split,
    observed_run,
    recommend_split,
)
from .forest import ForestError, ForestParams, fit_forest, predict_proba
from .metrics import MetricError, pseudo_pvalue
from .report import build_report, write_csv, write_json
from .rng import Seed
from .simulate import (
    PRESETS,
    SimSpec,
    SimulationError,
    null_study,
    simulate_dataset,
)
from .splits import RECORD_WISE, SUBJECT_WISE, SplitError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

_STRATEGY = {"record": RECORD_WISE, "subject": SUBJECT_WISE}

_SHARED_DEFAULTS = {
    "seed": 0,
    "threads": 0,
    "train_fraction": 0.5,
    "split": "record",
    "alpha": 0.05,
    "format": "json",
    "progress": False,
}

_ANALYZE_DEFAULTS = {
    **_SHARED_DEFAULTS,
    "perms": 10_000,
    "label_perms": 300,
    "feature_perms": 1_000,
    "trees": 500,
    "test": "both",
    "recommend": False,
    "out": "-",
}

_SIMULATE_DEFAULTS = {
    **_SHARED_DEFAULTS,
    "perms": 10_000,
    "label_perms": 300,
    "feature_perms": 1_000,
    "trees": 500,
    "test": "both",
    "recommend": False,
    "analyze": False,
    "report": "-",
}

_CALIBRATE_DEFAULTS = {
    **_SHARED_DEFAULTS,
    "datasets": 100,
    "perms": 100,
    "label_perms": 25,
    "trees": 50,
    "time_cap_minutes": 60.0,
    "force": False,
    "out": "-",
}


class UsageError(Exception):
    """Semantically invalid flags or config values."""


def _add_shared(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    parser.add_argument(
        "--threads", type=int, default=None, help="worker threads, 0 = auto (default 0)"
    )
    parser.add_argument(
        "--train-fraction", type=float, default=None, dest="train_fraction",
        help="fraction of rows/subjects assigned to training (default 0.5)",
    )
    parser.add_argument(
        "--split", choices=("record", "subject"), default=None,
        help="split strategy (default record)",
    )
    parser.add_argument("--alpha", type=float, default=None, help="significance level (default 0.05)")
    parser.add_argument(
        "--format", choices=("json", "csv"), default=None, help="report format (default json)"
    )
    parser.add_argument(
        "--progress", action="store_true", default=None,
        help="print a line-based completion counter to stderr",
    )
    parser.add_argument("--config", default=None, help="flat key=value config file")


def _add_test_budgets(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--perms", type=int, default=None,
        help="label permutations for the disease-recognition null (default 10000)",
    )
    parser.add_argument(
        "--label-perms", type=int, default=None, dest="label_perms",
        help="inner label permutations per feature permutation (default 300)",
    )
    parser.add_argument(
        "--feature-perms", type=int, default=None, dest="feature_perms",
        help="feature permutations for the identity-confounding null (default 1000)",
    )
    parser.add_argument(
        "--trees", type=int, default=None, help="random-forest tree count (default 500)"
    )
    parser.add_argument(
        "--test", choices=("disease-recognition", "identity-confounding", "both"),
        default=None, help="which permutation tests to run (default both)",
    )
    parser.add_argument(
        "--recommend", action="store_true", default=None,
        help="run the split-recommendation ladder instead of individual tests",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="idconfound",
        description="Detect identity confounding in record-structured classification data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="run permutation tests on a CSV dataset")
    analyze.add_argument("--input", required=True, help="input CSV dataset")
    analyze.add_argument("--out", default=None, help="report path (default stdout)")
    analyze.add_argument("--subject-column", default="subject_id", dest="subject_column")
    analyze.add_argument("--label-column", default="label", dest="label_column")
    analyze.add_argument(
        "--case-value", default="case", dest="case_value",
        help="label value mapped to class 1 (default 'case')",
    )
    _add_test_budgets(analyze)
    _add_shared(analyze)

    simulate = sub.add_parser("simulate", help="generate a synthetic dataset")
    simulate.add_argument("--preset", choices=sorted(PRESETS), default=None)
    simulate.add_argument(
        "--custom", default=None,
        help="comma list of generative coefficients, e.g. "
        "'a=1,b=2,c=1,d=0.5,mu=normal:2,sigma=uniformvar:1:10'",
    )
    simulate.add_argument("--out", required=True, help="output CSV path")
    simulate.add_argument("--cases", type=int, default=None, help="case subjects")
    simulate.add_argument("--controls", type=int, default=None, help="control subjects")
    simulate.add_argument("--records-min", type=int, default=None, dest="records_min")
    simulate.add_argument("--records-max", type=int, default=None, dest="records_max")
    simulate.add_argument("--features", type=int, default=None)
    simulate.add_argument("--rho-r", type=float, default=None, dest="rho_r",
                          help="AR(1) correlation across a subject's records")
    simulate.add_argument("--rho-f", type=float, default=None, dest="rho_f",
                          help="compound-symmetric correlation across features")
    simulate.add_argument(
        "--analyze", action="store_true", default=None,
        help="immediately analyze the simulated dataset",
    )
    simulate.add_argument("--report", default=None, help="report path when --analyze (default stdout)")
    _add_test_budgets(simulate)
    _add_shared(simulate)

    calibrate = sub.add_parser(
        "calibrate", help="type-I calibration study on null datasets"
    )
    calibrate.add_argument("--datasets", type=int, default=None, help="number of null datasets")
    calibrate.add_argument("--perms", type=int, default=None,
                           help="permutations per test (default 100)")
    calibrate.add_argument("--label-perms", type=int, default=None, dest="label_perms",
                           help="inner label permutations (default 25)")
    calibrate.add_argument("--trees", type=int, default=None,
                           help="random-forest tree count (default 50)")
    calibrate.add_argument("--out", default=None, help="long-format CSV path (default stdout)")
    calibrate.add_argument(
        "--time-cap-minutes", type=float, default=None, dest="time_cap_minutes",
        help="refuse to start if the estimated runtime exceeds this cap (default 60)",
    )
    calibrate.add_argument("--force", action="store_true", default=None,
                           help="run even past the time cap")
    _add_shared(calibrate)
    return parser


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    config_path = Path(path)
    if not config_path.exists():
        raise UsageError(f"config file not found: {path}")
    for line_no, raw in enumerate(config_path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(text: str, default) -> object:
    if isinstance(default, bool):
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _resolve(args: argparse.Namespace, defaults: dict) -> SimpleNamespace:
    config_values = _read_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for key, default in defaults.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in config_values:
            try:
                resolved[key] = _coerce(config_values[key], default)
            except ValueError:
                raise UsageError(
                    f"config value {config_values[key]!r} invalid for {key}"
                ) from None
        else:
            resolved[key] = default
    return SimpleNamespace(**resolved)


def _validate_common(opts: SimpleNamespace) -> None:
    if opts.seed < 0:
        raise UsageError("--seed must be >= 0")
    if opts.threads < 0:
        raise UsageError("--threads must be >= 0")
    if not 0.0 < opts.train_fraction < 1.0:
        raise UsageError("--train-fraction must be in (0, 1)")
    if not 0.0 < opts.alpha < 1.0:
        raise UsageError("--alpha must be in (0, 1)")
    for name in ("perms", "label_perms", "feature_perms"):
        if hasattr(opts, name) and getattr(opts, name) < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 1")
    if hasattr(opts, "trees") and opts.trees < 1:
        raise UsageError("--trees must be >= 1")


def _progress_printer(label: str):
    state = {"last": -1}

    def callback(done: int, total: int) -> None:
        percent = int(100 * done / total)
        if percent != state["last"]:
            state["last"] = percent
            print(f"{label}: {done}/{total}", file=sys.stderr, flush=True)

    return callback


def _emit(report: dict, path: str, fmt: str) -> None:
    if fmt == "json":
        write_json(report, path)
    else:
        write_csv(report, path)


def _run_analysis(ds, opts: SimpleNamespace, out_path: str, input_name: str) -> None:
    strategy = _STRATEGY[opts.split]
    seed = Seed(opts.seed)
    forest = ForestParams(tree_count=opts.trees)
    warnings: list[str] = []
    config = {
        "command": "analyze",
        "input": input_name,
        "seed": opts.seed,
        "split": strategy,
        "train_fraction": opts.train_fraction,
        "test": opts.test,
        "recommend": bool(opts.recommend),
        "perms": opts.perms,
        "label_perms": opts.label_perms,
        "feature_perms": opts.feature_perms,
        "alpha": opts.alpha,
        "trees": opts.trees,
        "threads": opts.threads,
        "metric": "auc",
        "direction": "larger_is_better",
    }
    summary = summarize(ds)

    if opts.recommend:
        cfg = PermConfig(
            seed=seed,
            n_label_perms=opts.perms,
            n_feature_perms=opts.feature_perms,
            forest=forest,
            n_workers=opts.threads,
        )
        progress = _progress_printer("recommend") if opts.progress else None
        rec = recommend_split(
            ds, cfg, alpha=opts.alpha, train_fraction=opts.train_fraction,
            label_perms=opts.label_perms, progress=progress,
        )
        report = build_report(config, summary, recommendation=rec, warnings=warnings)
        _emit(report, out_path, opts.format)
        return

    if strategy == SUBJECT_WISE and opts.test in ("identity-confounding", "both"):
        warnings.append(
            "subject-wise splits neutralize identity confounding by construction; "
            "the identity-confounding test is informative mainly for record-wise splits"
        )
        print(f"warning: {warnings[-1]}", file=sys.stderr)

    split = make_split(ds, strategy, opts.train_fraction, seed.child(0))
    dr_cfg = PermConfig(
        seed=seed.child(1),
        n_label_perms=opts.perms,
        n_feature_perms=opts.feature_perms,
        forest=forest,
        n_workers=opts.threads,
    )
    ic_cfg = PermConfig(
        seed=seed.child(2),
        n_label_perms=opts.label_perms,
        n_feature_perms=opts.feature_perms,
        forest=forest,
        n_workers=opts.threads,
    )
    obs = observed_run(ds, split, dr_cfg)

    dr_null = None
    ic_null = None
    if opts.test in ("disease-recognition", "both"):
        progress = _progress_printer("disease-recognition") if opts.progress else None
        dr_null = disease_recognition_null(
            ds, split, dr_cfg, observed=obs, progress=progress
        )
    if opts.test in ("identity-confounding", "both"):
        progress = _progress_printer("identity-confounding") if opts.progress else None
        ic_null = identity_confounding_null(
            ds, strategy, opts.train_fraction, ic_cfg, split=split, progress=progress
        )

    pseudo_reference = None
    pseudo_p = None
    if dr_null is not None:
        pseudo_reference = dr_null.median
    elif ic_null is not None:
        pseudo_reference = ic_null.observed
    if pseudo_reference is not None:
        try:
            pseudo_p = pseudo_pvalue(pseudo_reference, obs.ties)
        except MetricError as exc:
            warnings.append(f"pseudo p-value unavailable: {exc}")

    report = build_report(
        config,
        summary,
        split=split,
        ds=ds,
        observed=obs,
        disease_recognition=dr_null,
        identity_confounding=ic_null,
        pseudo_p=pseudo_p,
        pseudo_reference_median=pseudo_reference,
        warnings=warnings,
    )
    _emit(report, out_path, opts.format)


def _cmd_analyze(args: argparse.Namespace) -> int:
    opts = _resolve(args, _ANALYZE_DEFAULTS)
    _validate_common(opts)
    schema = CsvSchema(
        subject_column=args.subject_column,
        label_column=args.label_column,
        case_value=args.case_value,
    )
    ds = load_dataset(args.input, schema)
    _run_analysis(ds, opts, opts.out, str(args.input))
    return EXIT_OK


def _parse_custom(custom: str) -> dict:
    fields: dict = {}
    for item in custom.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise UsageError(f"--custom entries must look like key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key in ("a", "b", "c", "d"):
            try:
                fields[key] = float(value)
            except ValueError:
                raise UsageError(f"--custom {key} must be a number, got {value!r}") from None
        elif key == "mu":
            if value.startswith("normal:"):
                fields["mu"] = ("normal", float(value.split(":", 1)[1]))
            else:
                fields["mu"] = float(value)
        elif key == "sigma":
            if value.startswith("uniformvar:"):
                parts = value.split(":")
                if len(parts) != 3:
                    raise UsageError("sigma=uniformvar:LO:HI expects two bounds")
                fields["sigma"] = ("uniform_variance", float(parts[1]), float(parts[2]))
            else:
                fields["sigma"] = float(value)
        else:
            raise UsageError(f"unknown --custom key {key!r}")
    return fields


def _cmd_simulate(args: argparse.Namespace) -> int:
    opts = _resolve(args, _SIMULATE_DEFAULTS)
    _validate_common(opts)
    if args.preset is None and args.custom is None:
        raise UsageError("simulate requires --preset or --custom")
    if args.preset is not None and args.custom is not None:
        raise UsageError("--preset and --custom are mutually exclusive")

    if args.preset is not None:
        spec = PRESETS[args.preset]
    else:
        spec = SimSpec(**_parse_custom(args.custom))

    overrides = {}
    if args.cases is not None:
        overrides["n_cases"] = args.cases
    if args.controls is not None:
        overrides["n_controls"] = args.controls
    if args.records_min is not None or args.records_max is not None:
        lo = args.records_min if args.records_min is not None else spec.records_per_subject[0]
        hi = args.records_max if args.records_max is not None else spec.records_per_subject[1]
        overrides["records_per_subject"] = (lo, hi)
    if args.features is not None:
        overrides["n_features"] = args.features
    if args.rho_r is not None:
        overrides["rho_r"] = args.rho_r
    if args.rho_f is not None:
        overrides["rho_f"] = args.rho_f
    if overrides:
        spec = replace(spec, **overrides)

    seed = Seed(opts.seed)
    ds = simulate_dataset(spec, seed)
    save_dataset(ds, args.out)
    print(
        f"wrote {ds.n_records} records, {ds.n_subjects} subjects, "
        f"{ds.n_features} features to {args.out}",
        file=sys.stderr,
    )
    if opts.analyze:
        _run_analysis(ds, opts, opts.report, str(args.out))
    return EXIT_OK


def _estimate_calibration_seconds(opts: SimpleNamespace) -> float:
    """Probe one classifier fit and scale by the study's total fit count."""
    probe_spec = SimSpec(
        n_cases=8, n_controls=8, records_per_subject=(15, 15), a=0.0, b=0.0, c=1.0, d=1.0
    )
    ds = simulate_dataset(probe_spec, Seed(0).child(99))
    forest = ForestParams(tree_count=opts.trees)
    start = time.perf_counter()
    probes = 3
    for i in range(probes):
        model = fit_forest(ds.features[::2], ds.labels[::2], forest, Seed(0).child(98, i))
        predict_proba(model, ds.features[1::2])
    per_fit = (time.perf_counter() - start) / probes
    fits_per_dataset = 2 * (1 + opts.perms + opts.label_perms * (opts.perms + 1))
    workers = opts.threads if opts.threads else 2
    return per_fit * fits_per_dataset * opts.datasets / max(1, workers)


def _cmd_calibrate(args: argparse.Namespace) -> int:
    opts = _resolve(args, _CALIBRATE_DEFAULTS)
    _validate_common(opts)
    if opts.datasets < 1:
        raise UsageError("--datasets must be >= 1")
    if not opts.force:
        estimate = _estimate_calibration_seconds(opts)
        if estimate > opts.time_cap_minutes * 60.0:
            raise UsageError(
                f"estimated runtime {estimate / 60.0:.1f} min exceeds the "
                f"{opts.time_cap_minutes:.0f} min cap; rerun with --force or smaller budgets"
            )
    progress = _progress_printer("calibrate") if opts.progress else None
    result = null_study(
        n_datasets=opts.datasets,
        perms=opts.perms,
        seed=Seed(opts.seed),
        label_perms=opts.label_perms,
        train_fraction=opts.train_fraction,
        forest=ForestParams(tree_count=opts.trees),
        n_workers=opts.threads,
        progress=progress,
    )

    out = sys.stdout if opts.out == "-" else open(opts.out, "w", newline="", encoding="utf-8")
    try:
        writer = csv.writer(out)
        writer.writerow(
            [
                "dataset_id", "strategy", "c", "d", "n_cases", "n_controls",
                "records_per_subject", "observed_auc", "disease_recognition_p",
                "identity_confounding_p", "pseudo_p", "analytic_p", "error",
            ]
        )
        for row in result.rows:
            writer.writerow(
                [
                    row.dataset_id, row.strategy, f"{row.c:.6g}", f"{row.d:.6g}",
                    row.n_cases, row.n_controls, row.records_per_subject,
                    "" if row.observed_auc is None else f"{row.observed_auc:.6g}",
                    "" if row.disease_recognition_p is None else f"{row.disease_recognition_p:.6g}",
                    "" if row.identity_confounding_p is None else f"{row.identity_confounding_p:.6g}",
                    "" if row.pseudo_p is None else f"{row.pseudo_p:.6g}",
                    "" if row.analytic_p is None else f"{row.analytic_p:.6g}",
                    row.error or "",
                ]
            )
    finally:
        if out is not sys.stdout:
            out.close()

    for level in (0.01, 0.05, 0.1):
        fractions = result.fractions_below(level)
        for strategy, by_test in fractions.items():
            parts = ", ".join(f"{name}={value:.3f}" for name, value in by_test.items())
            print(f"fraction below {level} [{strategy}]: {parts}", file=sys.stderr)
    for strategy in (RECORD_WISE, SUBJECT_WISE):
        print(
            f"median pseudo p [{strategy}]: {result.median_pseudo_p(strategy):.3f}",
            file=sys.stderr,
        )
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        return _cmd_calibrate(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, SplitError, SimulationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EngineError, ForestError, MetricError, ValueError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
