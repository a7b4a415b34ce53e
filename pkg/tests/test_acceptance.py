"""Release acceptance suite: ten gates, one pass/fail line each.

Criteria 1-4, 8, and 9 are self-contained numerical checks against
independent oracles.  Criteria 5-7 read the report of one full
pipeline run (synthetic cohort -> population pretraining -> five-model
experiment) executed through the command-line interface as a session
fixture.  Criterion 10 repeats a small experiment end to end and
byte-compares every report file.

Run with `pytest tests/test_acceptance.py -v -s` to see the checklist
lines as they complete.  The pipeline fixture takes roughly 25 minutes
on one core; everything else finishes in a few minutes.
"""

import csv
import json
import math
import time
from collections import defaultdict
from datetime import datetime, timezone

import numpy as np
import pytest

from glucast.arima import (
    ArimaOrder,
    auto_arima,
    difference,
    exhaustive_search,
    fit_arima,
    integrate,
)
from glucast.cgm import GlucoseSeries, extract_windows
from glucast.cli import main
from glucast.evaluation import (
    HORIZON_STEPS,
    ForecastSet,
    PatientMetric,
    aggregate_population,
    mae_per_horizon,
    rmse_per_horizon,
)
from glucast.lstm import gradient_check
from glucast.synth import generate_arma

T0 = datetime(2026, 1, 1, tzinfo=timezone.utc)
REPORTED_HORIZONS = (15, 30, 45, 60, 90)


def _verdict(num: int, ok: bool, detail: str) -> None:
    line = f"criterion {num:02d}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# Criterion 1: analytic network gradients vs central finite differences
# ---------------------------------------------------------------------------


def test_criterion_01_gradient_check():
    t0 = time.monotonic()
    report = gradient_check(n_seeds=20, epsilon=1e-5, tolerance=1e-4)
    elapsed = time.monotonic() - t0
    ok = report.passed and report.max_rel_err < 1e-4 and elapsed < 60.0
    _verdict(
        1,
        ok,
        f"max rel err {report.max_rel_err:.3e} over {report.n_seeds} seeds "
        f"in {elapsed:.1f}s (limits 1e-4, 60s)",
    )


# ---------------------------------------------------------------------------
# Criterion 2: AR(1) coefficient recovery against a least-squares oracle
# ---------------------------------------------------------------------------


def _ols_ar1(x):
    """Least-squares oracle: regress x_t on (1, x_{t-1})."""
    ylag, y = x[:-1], x[1:]
    A = np.column_stack([np.ones_like(ylag), ylag])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    sigma2 = resid @ resid / (len(y) - 2)
    cov = sigma2 * np.linalg.inv(A.T @ A)
    return coef[1], math.sqrt(cov[1, 1])


def test_criterion_02_ar1_recovery():
    t0 = time.monotonic()
    hits = 0
    for seed in range(40):
        x = generate_arma(phi=[0.7], theta=[], c=0.0, sigma=1.0, n=2000, seed=seed)
        model, _ = fit_arima(x, ArimaOrder(1, 0, 0))
        _, se = _ols_ar1(x)
        if abs(model.phi[0] - 0.7) <= 3 * se:
            hits += 1
    elapsed = time.monotonic() - t0
    ok = hits >= 38 and elapsed < 120.0
    _verdict(
        2, ok, f"{hits}/40 replications within 3 OLS standard errors "
        f"in {elapsed:.1f}s (limits 38, 120s)"
    )


# ---------------------------------------------------------------------------
# Criterion 3: stepwise order search vs exhaustive search
# ---------------------------------------------------------------------------


def test_criterion_03_stepwise_matches_exhaustive():
    worst = 0.0
    for kind in ("ar1", "ma1"):
        for seed in range(10):
            if kind == "ar1":
                x = generate_arma(phi=[0.7], theta=[], c=0.0, sigma=1.0, n=2000, seed=seed)
            else:
                x = generate_arma(phi=[], theta=[0.6], c=0.0, sigma=1.0, n=2000, seed=seed)
            model, _ = auto_arima(x, bounds=ArimaOrder(3, 0, 3))
            best, _ = exhaustive_search(x, max_p=3, max_q=3, d=0)
            worst = max(worst, model.aic - best.aic)
    ok = worst <= 2.0
    _verdict(
        3, ok, f"worst AIC excess over exhaustive search {worst:.3f} "
        "across 10 AR(1) + 10 MA(1) signals (limit 2.0)"
    )


# ---------------------------------------------------------------------------
# Criterion 4: differencing round trip
# ---------------------------------------------------------------------------


def test_criterion_04_difference_integrate_round_trip():
    rng = np.random.default_rng(0)
    worst = 0.0
    for d in (1, 2, 3, 4):
        for _ in range(100):
            x = rng.normal(size=rng.integers(d + 2, 80)) * rng.uniform(0.1, 50)
            back = integrate(difference(x, d), x[:d].tolist(), d)
            scale = max(np.max(np.abs(x)), 1.0)
            worst = max(worst, np.max(np.abs(back - x)) / scale)
    ok = worst <= 1e-9
    _verdict(
        4, ok, f"worst relative reconstruction error {worst:.2e} "
        "over 100 sequences x d in 1..4 (limit 1e-9)"
    )


# ---------------------------------------------------------------------------
# Criteria 5-7: the full pipeline through the command-line interface
# ---------------------------------------------------------------------------

ACCEPT_NET = {
    "n_layers": 1,
    "hidden": 32,
    "mlp_hidden": 32,
    "window": 12,
    "dropout": 0.0,
}
PRETRAIN_CONFIG = {
    "seed": 0,
    "train": {"max_epochs": 20, "window_step": 12, "seeds": [0, 1, 2]},
    "net": ACCEPT_NET,
}
EXPERIMENT_CONFIG = {
    "seed": 0,
    "train_days": [1, 7],
    "eval_step": 2,
    "train": {"max_epochs": 10, "window_step": 12, "seeds": [0, 1, 2]},
    "net": ACCEPT_NET,
}


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    """Cohort synthesis, population pretraining, and the experiment."""
    root = tmp_path_factory.mktemp("pipeline")
    cohort = root / "cohort.csv"
    pre_cfg = root / "pretrain.json"
    exp_cfg = root / "experiment.json"
    pre_cfg.write_text(json.dumps(PRETRAIN_CONFIG))
    exp_cfg.write_text(json.dumps(EXPERIMENT_CONFIG))
    store = root / "population"
    report = root / "report"
    t0 = time.monotonic()
    assert main(["synth", "--patients", "50", "--days", "14", "--seed", "0",
                 "--out", str(cohort)]) == 0
    assert main(["pretrain", "--data", str(cohort), "--config", str(pre_cfg),
                 "--out", str(store)]) == 0
    assert main(["experiment", "--data", str(cohort), "--config", str(exp_cfg),
                 "--pretrained", str(store), "--out", str(report)]) == 0
    return {"report": report, "elapsed": time.monotonic() - t0}


def _population_mae(report_dir, td):
    with open(report_dir / f"population_td{td}.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    out: dict[str, dict[int, float]] = defaultdict(dict)
    for r in rows:
        out[r["model"]][int(r["horizon_min"])] = float(r["mean_mae"])
    return out


def test_criterion_05_population_and_arima_beat_locf(pipeline):
    margin = math.inf
    for td in (1, 7):
        mae = _population_mae(pipeline["report"], td)
        for family in ("lstm_population", "arima"):
            for h in REPORTED_HORIZONS:
                margin = min(margin, mae["locf"][h] - mae[family][h])
    minutes = pipeline["elapsed"] / 60.0
    ok = margin > 0.0 and pipeline["elapsed"] < 1800.0
    _verdict(
        5, ok, f"thinnest LOCF margin {margin:.4f} mmol/L across both "
        f"train-day conditions; pipeline took {minutes:.1f} min (limit 30)"
    )


def test_criterion_06_error_grows_with_horizon(pipeline):
    violations = []
    for td in (1, 7):
        for model, by_h in _population_mae(pipeline["report"], td).items():
            vals = [by_h[h] for h in REPORTED_HORIZONS]
            if not all(a <= b for a, b in zip(vals, vals[1:])):
                violations.append(f"{model}/td{td}")
    _verdict(
        6,
        not violations,
        "mean MAE nondecreasing in horizon for all 10 model/train-day "
        "pairs" if not violations else f"violations: {violations}",
    )


def _pooled_scratch_mae(report_dir, td):
    """Per-patient MAE pooled over every horizon, weighted by pair count."""
    sums: dict[str, list[float]] = defaultdict(lambda: [0.0, 0.0])
    with open(report_dir / f"patients_td{td}.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            if r["model"] != "lstm_scratch":
                continue
            n = int(r["n"])
            sums[r["patient_id"]][0] += float(r["mae"]) * n
            sums[r["patient_id"]][1] += n
    return {pid: s / c for pid, (s, c) in sums.items()}


def test_criterion_07_scratch_improves_with_week_of_data(pipeline):
    day1 = _pooled_scratch_mae(pipeline["report"], 1)
    day7 = _pooled_scratch_mae(pipeline["report"], 7)
    assert set(day1) == set(day7)
    wins = sum(1 for pid in day7 if day7[pid] <= day1[pid])
    ok = wins / len(day7) >= 0.7
    _verdict(
        7, ok, f"scratch networks: 7-day training beats 1-day for "
        f"{wins}/{len(day7)} patients (need >= 70%)",
    )


# ---------------------------------------------------------------------------
# Criterion 8: window validity truth table
# ---------------------------------------------------------------------------


def test_criterion_08_window_truth_table():
    """Six crafted windows covering both validity conditions.

      case  gaps                                   train  test
      A     none                                   keep   keep
      B     one interior gap                       drop   keep
      C     most recent slot missing               drop   drop
      D     5 missing among last 12, recent ok     drop   drop
      E     exactly 4 missing among last 12        drop   keep
      F     6 missing, all before the last hour    drop   keep
    """
    k = 24
    vals = np.linspace(5.0, 9.0, 6 * k + 1)
    gaps = {
        1: [5],                                   # B
        2: [k - 1],                               # C
        3: [k - 2, k - 4, k - 6, k - 8, k - 10],  # D
        4: [k - 2, k - 4, k - 6, k - 8],          # E
        5: [0, 1, 2, 3, 4, 5],                    # F
    }
    for case, offs in gaps.items():
        for off in offs:
            vals[case * k + off] = np.nan
    series = GlucoseSeries("p001", T0, vals, standardized=True)
    got_train = {w.origin_index // k - 1 for w in extract_windows(series, k, k, "train")}
    got_test = {w.origin_index // k - 1 for w in extract_windows(series, k, k, "test")}
    ok = got_train == {0} and got_test == {0, 1, 4, 5}
    _verdict(
        8, ok, f"train kept {sorted(got_train)} (want [0]), "
        f"test kept {sorted(got_test)} (want [0, 1, 4, 5])"
    )


# ---------------------------------------------------------------------------
# Criterion 9: metric identities
# ---------------------------------------------------------------------------


def test_criterion_09_metric_identities():
    rng = np.random.default_rng(3)
    n = 400
    vals = rng.uniform(3.0, 15.0, size=n)
    truth = GlucoseSeries("p001", T0, vals)
    origins = list(range(0, n - HORIZON_STEPS - 1, 7))
    forecasts = {o: rng.uniform(3.0, 15.0, size=HORIZON_STEPS) for o in origins}
    model = ForecastSet("locf", "p001", forecasts)

    worst = 0.0
    for j in (1, 5, 18):
        abs_sum = sq_sum = 0.0
        for o in origins:
            err = forecasts[o][j - 1] - vals[o + j]
            abs_sum += abs(err)
            sq_sum += err * err
        want_mae = abs_sum / len(origins)
        want_rmse = math.sqrt(sq_sum / len(origins))
        got_mae = mae_per_horizon(model, truth, j, origins)
        got_rmse = rmse_per_horizon(model, truth, j, origins)
        worst = max(worst, abs(got_mae - want_mae) / max(1.0, want_mae))
        worst = max(worst, abs(got_rmse - want_rmse) / max(1.0, want_rmse))

    dominated = 0
    for _ in range(1000):
        subset = list(rng.choice(origins, size=rng.integers(1, 30)))
        if rmse_per_horizon(model, truth, 3, subset) >= mae_per_horizon(
            model, truth, 3, subset
        ) - 1e-15:
            dominated += 1

    rows = [PatientMetric("locf", 7, pid, 3, 10, mae, mae)
            for pid, mae in (("a", 1.0), ("b", 2.0), ("c", 3.0))]
    sem = aggregate_population(rows)[0].sem_mae

    ok = worst <= 1e-12 and dominated == 1000 and abs(sem - 0.57735) < 1e-5
    _verdict(
        9, ok, f"naive-loop deviation {worst:.2e} (limit 1e-12); RMSE>=MAE on "
        f"{dominated}/1000 origin sets; SEM(1,2,3) = {sem:.5f} (want 0.57735)"
    )


# ---------------------------------------------------------------------------
# Criterion 10: repeated runs produce byte-identical reports
# ---------------------------------------------------------------------------

REPEAT_CONFIG = {
    "seed": 0,
    "train_days": [7],
    "eval_step": 24,
    "arima_p": 2,
    "arima_d": 1,
    "arima_q": 2,
    "train": {"max_epochs": 1, "window_step": 48, "seeds": [0]},
    "net": {"n_layers": 1, "hidden": 8, "mlp_hidden": 8, "window": 8, "dropout": 0.0},
}


def test_criterion_10_repeated_runs_identical(tmp_path):
    cohort = tmp_path / "cohort.csv"
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(REPEAT_CONFIG))
    store = tmp_path / "population"
    assert main(["synth", "--patients", "4", "--days", "14", "--seed", "0",
                 "--out", str(cohort)]) == 0
    assert main(["pretrain", "--data", str(cohort), "--config", str(cfg),
                 "--out", str(store)]) == 0
    outs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert main(["experiment", "--data", str(cohort), "--config", str(cfg),
                     "--pretrained", str(store), "--out", str(out)]) == 0
        outs.append(out)
    first = {p.name: p.read_bytes() for p in sorted(outs[0].iterdir())}
    second = {p.name: p.read_bytes() for p in sorted(outs[1].iterdir())}
    same_names = set(first) == set(second)
    differing = [n for n in first if same_names and first[n] != second[n]]
    ok = same_names and not differing
    _verdict(
        10, ok, f"{len(first)} report files byte-identical across repeated runs"
        if ok else f"mismatch: names equal={same_names}, differing={differing}",
    )
