import csv
import json

import numpy as np
import pytest

from idconfound.cli import main
from idconfound.report import load_report_schema


def run_cli(*args):
    return main(list(args))


def analyze_args(input_path, out_path, **overrides):
    defaults = {
        "seed": "3",
        "perms": "40",
        "label-perms": "6",
        "feature-perms": "10",
        "trees": "10",
        "threads": "2",
    }
    defaults.update(overrides)
    argv = ["analyze", "--input", str(input_path), "--out", str(out_path)]
    for key, value in defaults.items():
        argv += [f"--{key}", value]
    return argv


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "example1.csv"
    code = run_cli(
        "simulate", "--preset", "example1", "--seed", "7", "--out", str(path)
    )
    assert code == 0
    return path


class TestSimulateCommand:
    def test_deterministic_output_bytes(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert run_cli("simulate", "--preset", "example2", "--seed", "9", "--out", str(a)) == 0
        assert run_cli("simulate", "--preset", "example2", "--seed", "9", "--out", str(b)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_custom_model(self, tmp_path):
        out = tmp_path / "c.csv"
        code = run_cli(
            "simulate", "--custom", "a=1,b=2,c=1,d=0.5", "--cases", "4",
            "--controls", "4", "--records-min", "3", "--records-max", "5",
            "--features", "4", "--seed", "1", "--out", str(out),
        )
        assert code == 0
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["subject_id", "label", "f1", "f2", "f3", "f4"]
        assert 1 + 8 * 3 <= len(rows) <= 1 + 8 * 5

    def test_custom_rules(self, tmp_path):
        out = tmp_path / "r.csv"
        code = run_cli(
            "simulate", "--custom", "c=1,mu=normal:2,sigma=uniformvar:1:10",
            "--seed", "2", "--out", str(out),
        )
        assert code == 0

    def test_requires_preset_or_custom(self, tmp_path):
        assert run_cli("simulate", "--out", str(tmp_path / "x.csv")) == 2

    def test_unknown_preset_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run_cli("simulate", "--preset", "example9", "--out", str(tmp_path / "x.csv"))
        assert exc.value.code == 2

    def test_chained_analysis(self, tmp_path):
        report_path = tmp_path / "rep.json"
        code = run_cli(
            "simulate", "--preset", "example6", "--seed", "5",
            "--out", str(tmp_path / "d.csv"), "--analyze",
            "--report", str(report_path), "--perms", "30", "--label-perms", "5",
            "--feature-perms", "8", "--trees", "8", "--threads", "2",
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["disease_recognition"]["p_value"] >= 0.0
        assert report["identity_confounding"]["p_value"] >= 0.0


class TestAnalyzeCommand:
    def test_report_matches_schema(self, sim_csv, tmp_path):
        jsonschema = pytest.importorskip("jsonschema")
        out = tmp_path / "report.json"
        assert run_cli(*analyze_args(sim_csv, out)) == 0
        report = json.loads(out.read_text())
        jsonschema.validate(report, load_report_schema())
        assert report["tool"]["name"] == "idconfound"
        assert report["disease_recognition"]["samples"]["n_samples"] == 40
        assert report["disease_recognition"]["samples"]["values"] is not None
        assert report["identity_confounding"]["samples"]["n_samples"] == 10
        assert report["pseudo"] is not None
        assert report["analytic_auc_null"] is not None

    def test_rerun_reproduces_report_exactly(self, sim_csv, tmp_path):
        first = tmp_path / "r1.json"
        second = tmp_path / "r2.json"
        assert run_cli(*analyze_args(sim_csv, first)) == 0
        assert run_cli(*analyze_args(sim_csv, second)) == 0
        a = json.loads(first.read_text())
        b = json.loads(second.read_text())
        assert a["disease_recognition"]["samples"]["values"] == (
            b["disease_recognition"]["samples"]["values"]
        )
        assert a["disease_recognition"]["p_value"] == b["disease_recognition"]["p_value"]
        assert a["identity_confounding"]["p_value"] == b["identity_confounding"]["p_value"]
        assert a["observed"] == b["observed"]

    def test_thread_count_does_not_change_report(self, sim_csv, tmp_path):
        one = tmp_path / "t1.json"
        four = tmp_path / "t4.json"
        assert run_cli(*analyze_args(sim_csv, one, threads="1")) == 0
        assert run_cli(*analyze_args(sim_csv, four, threads="4")) == 0
        a = json.loads(one.read_text())
        b = json.loads(four.read_text())
        assert a["disease_recognition"] == b["disease_recognition"]
        assert a["identity_confounding"] == b["identity_confounding"]

    def test_single_test_selection(self, sim_csv, tmp_path):
        out = tmp_path / "dr.json"
        assert run_cli(*analyze_args(sim_csv, out, test="disease-recognition")) == 0
        report = json.loads(out.read_text())
        assert report["disease_recognition"] is not None
        assert report["identity_confounding"] is None

    def test_subject_split_confounding_warning(self, sim_csv, tmp_path, capsys):
        out = tmp_path / "warn.json"
        code = run_cli(
            *analyze_args(sim_csv, out, split="subject", test="identity-confounding")
        )
        assert code == 0
        report = json.loads(out.read_text())
        assert any("neutralize" in w for w in report["warnings"])
        assert report["identity_confounding"] is not None  # test still ran
        assert "neutralize" in capsys.readouterr().err

    def test_recommend_mode(self, sim_csv, tmp_path):
        jsonschema = pytest.importorskip("jsonschema")
        out = tmp_path / "rec.json"
        argv = analyze_args(sim_csv, out, perms="30", **{"label-perms": "5"})
        argv.append("--recommend")
        assert run_cli(*argv) == 0
        report = json.loads(out.read_text())
        jsonschema.validate(report, load_report_schema())
        assert report["recommendation"]["recommendation"] in ("record_wise", "subject_wise")
        assert report["recommendation"]["steps"]

    def test_csv_format(self, sim_csv, tmp_path):
        out = tmp_path / "report.csv"
        assert run_cli(*analyze_args(sim_csv, out, format="csv")) == 0
        with open(out) as fh:
            rows = {row[0]: row[1] for row in csv.reader(fh) if row}
        assert rows["disease_recognition.p_value"]
        assert float(rows["observed.auc"]) > 0

    def test_missing_input_is_data_error(self, tmp_path):
        assert run_cli(*analyze_args(tmp_path / "nope.csv", tmp_path / "o.json")) == 3

    def test_malformed_input_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("subject_id,label,f1\na,case,xyz\nb,control,1\n")
        assert run_cli(*analyze_args(bad, tmp_path / "o.json")) == 3

    def test_bad_fraction_is_usage_error(self, sim_csv, tmp_path):
        code = run_cli(
            *analyze_args(sim_csv, tmp_path / "o.json", **{"train-fraction": "1.5"})
        )
        assert code == 2

    def test_config_file_precedence(self, sim_csv, tmp_path):
        config = tmp_path / "run.conf"
        config.write_text("perms = 12\ntrees = 6\nlabel-perms = 4\nfeature-perms = 5\n")
        out = tmp_path / "cfg.json"
        code = run_cli(
            "analyze", "--input", str(sim_csv), "--out", str(out),
            "--config", str(config), "--perms", "9", "--threads", "2", "--seed", "3",
        )
        assert code == 0
        report = json.loads(out.read_text())
        # flag beats config; config beats default
        assert report["config"]["perms"] == 9
        assert report["config"]["trees"] == 6
        assert report["config"]["label_perms"] == 4

    def test_roc_points_monotone(self, sim_csv, tmp_path):
        out = tmp_path / "roc.json"
        assert run_cli(*analyze_args(sim_csv, out)) == 0
        points = np.array(json.loads(out.read_text())["observed"]["roc_points"])
        assert points[0].tolist() == [0.0, 0.0]
        assert points[-1].tolist() == [1.0, 1.0]
        assert np.all(np.diff(points[:, 0]) >= 0)
        assert np.all(np.diff(points[:, 1]) >= 0)


class TestCalibrateCommand:
    def test_smoke_run(self, tmp_path, capsys):
        out = tmp_path / "cal.csv"
        code = run_cli(
            "calibrate", "--datasets", "2", "--perms", "5", "--label-perms", "3",
            "--trees", "6", "--seed", "11", "--threads", "2", "--out", str(out),
            "--force",
        )
        assert code == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        for row in rows:
            assert row["strategy"] in ("record_wise", "subject_wise")
            assert 0.0 <= float(row["disease_recognition_p"]) <= 1.0
        err = capsys.readouterr().err
        assert "fraction below 0.1" in err
        assert "median pseudo p" in err

    def test_zero_datasets_is_usage_error(self, tmp_path):
        code = run_cli("calibrate", "--datasets", "0", "--out", str(tmp_path / "c.csv"))
        assert code == 2

    def test_time_cap_refuses_oversized_run(self, tmp_path):
        code = run_cli(
            "calibrate", "--datasets", "500", "--perms", "100", "--label-perms", "300",
            "--trees", "500", "--time-cap-minutes", "0.01", "--out", str(tmp_path / "c.csv"),
        )
        assert code == 2
