"""End-to-end CLI tests run in-process via main(argv).

A module-scoped miniature pipeline (2 synthetic patients, 1-epoch
training, coarse evaluation stride) keeps the full experiment path
under test without the cost of a real run.
"""

import json
from pathlib import Path

import pytest

from glucast.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, EXIT_VERIFICATION, main

MINI_CONFIG = {
    "seed": 0,
    "train_days": [7],
    "eval_step": 48,
    "arima_p": 2,
    "arima_d": 1,
    "arima_q": 2,
    "train": {"max_epochs": 1, "window_step": 48, "seeds": [0]},
    "net": {"n_layers": 1, "hidden": 8, "mlp_hidden": 8, "window": 8, "dropout": 0.0},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Cohort CSV + config file shared by the pipeline tests."""
    root = tmp_path_factory.mktemp("cli")
    cohort = root / "cohort.csv"
    assert (
        main(["synth", "--patients", "3", "--days", "14", "--seed", "0",
              "--out", str(cohort)])
        == EXIT_OK
    )
    config = root / "config.json"
    config.write_text(json.dumps(MINI_CONFIG))
    return root


@pytest.fixture(scope="module")
def experiment_dir(workdir):
    out = workdir / "report"
    code = main([
        "experiment", "--data", str(workdir / "cohort.csv"),
        "--config", str(workdir / "config.json"),
        "--skip-pretrained", "--out", str(out),
    ])
    assert code == EXIT_OK
    return out


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def test_synth_deterministic_and_manifest(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["synth", "--patients", "2", "--days", "2", "--seed", "5", "--out", str(a)]) == EXIT_OK
    assert main(["synth", "--patients", "2", "--days", "2", "--seed", "5", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    manifest = json.loads((tmp_path / "a.csv.manifest.json").read_text())
    assert manifest["n_patients"] == 2 and manifest["seed"] == 5
    c = tmp_path / "c.csv"
    assert main(["synth", "--patients", "2", "--days", "2", "--seed", "6", "--out", str(c)]) == EXIT_OK
    assert c.read_bytes() != a.read_bytes()


def test_synth_default_filename(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["synth", "--patients", "1", "--days", "1", "--seed", "3"]) == EXIT_OK
    assert (tmp_path / "cohort_p1_d1_s3.csv").exists()


def test_synth_rejects_zero_patients():
    assert main(["synth", "--patients", "0"]) == EXIT_USAGE
    assert main(["synth", "--patients", "1", "--days", "0"]) == EXIT_USAGE


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------


def test_ingest_summary(workdir, tmp_path):
    out = tmp_path / "ingest"
    code = main(["ingest", "--data", str(workdir / "cohort.csv"), "--out", str(out)])
    assert code == EXIT_OK
    summary = json.loads((out / "ingest_summary.json").read_text())
    assert summary["patients_in_file"] == 3
    assert summary["patients_included"] == 3
    assert (out / "rejections.txt").exists()


def test_ingest_requires_data():
    assert main(["ingest"]) == EXIT_USAGE
    assert main(["ingest", "--data", "/nonexistent/file.csv"]) == EXIT_USAGE


def test_ingest_malformed_csv_is_data_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("patient_id,timestamp,glucose_mmol_l\np001,not-a-time,5.0\n")
    assert main(["ingest", "--data", str(bad)]) == EXIT_DATA


def test_unknown_config_key_rejected(workdir, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"seed": 0, "learning_rate": 1.0}))
    code = main(["ingest", "--data", str(workdir / "cohort.csv"), "--config", str(cfg)])
    assert code == EXIT_USAGE
    cfg2 = tmp_path / "bad2.json"
    cfg2.write_text(json.dumps({"train": {"lr_schedule": "cosine"}}))
    assert main(["ingest", "--data", str(workdir / "cohort.csv"), "--config", str(cfg2)]) == EXIT_USAGE
    assert main(["ingest", "--config", str(tmp_path / "missing.json")]) == EXIT_USAGE


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--seeds", "2"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS" in out


def test_gradcheck_detects_corruption(capsys):
    assert main(["gradcheck", "--seeds", "1", "--corrupt"]) == EXIT_VERIFICATION
    assert "FAIL" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# per-patient commands
# ---------------------------------------------------------------------------


def test_fit_arima_writes_model(workdir, tmp_path):
    out = tmp_path / "arima.json"
    code = main([
        "fit-arima", "--data", str(workdir / "cohort.csv"),
        "--config", str(workdir / "config.json"),
        "--patient", "p001", "--train-days", "7", "--out", str(out),
    ])
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    assert {"order", "c", "phi", "theta", "sigma2", "aic"} <= set(doc)
    assert doc["order"]["p"] <= 2 and doc["order"]["q"] <= 2


def test_fit_arima_unknown_patient(workdir):
    code = main([
        "fit-arima", "--data", str(workdir / "cohort.csv"),
        "--config", str(workdir / "config.json"), "--patient", "nobody",
    ])
    assert code == EXIT_DATA


def test_train_patient_stores_models(workdir, tmp_path):
    out = tmp_path / "scratch"
    code = main([
        "train-patient", "--data", str(workdir / "cohort.csv"),
        "--config", str(workdir / "config.json"),
        "--patient", "p001", "--train-days", "1", "--out", str(out),
    ])
    assert code == EXIT_OK
    assert (out / "scratch_p001_td1_seed0.model").exists()
    meta = json.loads((out / "scratch_p001_td1_seed0.json").read_text())
    assert meta["regime"] == "scratch" and meta["epochs_run"] >= 1


def test_finetune_requires_pretrained(workdir):
    code = main([
        "finetune", "--data", str(workdir / "cohort.csv"), "--patient", "p001",
    ])
    assert code == EXIT_USAGE


def test_pretrain_then_finetune(workdir, tmp_path):
    store = tmp_path / "pop"
    code = main([
        "pretrain", "--data", str(workdir / "cohort.csv"),
        "--config", str(workdir / "config.json"), "--out", str(store),
    ])
    assert code == EXIT_OK
    assert (store / "population_seed0.model").exists()
    assert (store / "manifest.json").exists()
    tuned = tmp_path / "tuned"
    code = main([
        "finetune", "--data", str(workdir / "cohort.csv"),
        "--config", str(workdir / "config.json"),
        "--pretrained", str(store), "--patient", "p001",
        "--train-days", "7", "--out", str(tuned),
    ])
    assert code == EXIT_OK
    meta = json.loads((tuned / "finetuned_p001_td7_seed0.json").read_text())
    assert meta["regime"] == "finetuned"


# ---------------------------------------------------------------------------
# experiment + report
# ---------------------------------------------------------------------------


def test_experiment_report_files(experiment_dir):
    names = {p.name for p in experiment_dir.iterdir()}
    assert {
        "population_td7.csv", "patients_td7.csv", "boxplot.csv",
        "report.json", "manifest.json", "rejections.txt",
    } <= names
    pop = (experiment_dir / "population_td7.csv").read_text().splitlines()
    assert pop[0] == "model,horizon_min,mean_mae,sem_mae,mean_rmse,sem_rmse"
    models = {line.split(",")[0] for line in pop[1:]}
    assert models == {"locf", "arima", "lstm_scratch"}  # --skip-pretrained
    manifest = json.loads((experiment_dir / "manifest.json").read_text())
    assert manifest["families"] == ["locf", "arima", "lstm_scratch"]
    assert "timestamp" not in json.dumps(manifest).lower()


def test_experiment_requires_pretrained_or_skip(workdir):
    code = main([
        "experiment", "--data", str(workdir / "cohort.csv"),
        "--config", str(workdir / "config.json"),
    ])
    assert code == EXIT_USAGE


def test_experiment_bad_train_days(workdir):
    code = main([
        "experiment", "--data", str(workdir / "cohort.csv"),
        "--skip-pretrained", "--train-days", "7,banana",
    ])
    assert code == EXIT_USAGE
    code = main([
        "experiment", "--data", str(workdir / "cohort.csv"),
        "--skip-pretrained", "--train-days", "2",
    ])
    assert code == EXIT_USAGE


def test_report_round_trip(experiment_dir, tmp_path):
    out = tmp_path / "re-export"
    code = main([
        "report", "--report-json", str(experiment_dir / "report.json"),
        "--out", str(out),
    ])
    assert code == EXIT_OK
    for name in ("population_td7.csv", "patients_td7.csv", "boxplot.csv"):
        assert (out / name).read_bytes() == (experiment_dir / name).read_bytes()


def test_report_missing_and_malformed(tmp_path):
    assert main(["report"]) == EXIT_USAGE
    assert main(["report", "--report-json", str(tmp_path / "nope.json")]) == EXIT_USAGE
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps({"patient_metrics": [{"model": "locf"}]}))
    assert main(["report", "--report-json", str(broken)]) == EXIT_DATA


def test_argparse_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["unknown-command"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit):
        main([])
