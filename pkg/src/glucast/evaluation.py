"""Forecast scoring: LOCF baseline, origin alignment, MAE/RMSE per horizon.

Every model emits 18-step forecasts (5-minute grid, 90 minutes ahead)
from origins inside a patient's test span.  Fair comparison requires
that all models are scored on the identical (origin, horizon) pairs, so
alignment intersects the origin sets and then drops, per horizon
independently, pairs whose ground truth is missing.

Metrics are computed in mmol/L on destandardized values.  Population
rows average the per-patient metrics and attach the standard error of
the mean (unbiased n-1 standard deviation over patients, divided by
sqrt(n)); the tables report horizons {15, 30, 45, 60, 90} minutes,
i.e. steps j in {3, 6, 9, 12, 18}.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cgm import GlucoseSeries

HORIZON_STEPS = 18
REPORTED_J = (3, 6, 9, 12, 18)
MINUTES_PER_STEP = 5

MODEL_ORDER = ("locf", "arima", "lstm_population", "lstm_finetuned", "lstm_scratch")


class EvalError(Exception):
    """Raised when forecasts cannot be aligned or scored."""


def _model_rank(model: str) -> tuple[int, str]:
    try:
        return (MODEL_ORDER.index(model), model)
    except ValueError:
        return (len(MODEL_ORDER), model)


# ---------------------------------------------------------------------------
# Forecasts and alignment
# ---------------------------------------------------------------------------


@dataclass
class ForecastSet:
    """One model's 18-step forecasts for one patient, keyed by origin slot."""

    model: str
    patient_id: str
    forecasts: dict[int, np.ndarray]

    def __post_init__(self) -> None:
        for origin, preds in self.forecasts.items():
            preds = np.asarray(preds, dtype=np.float64)
            if preds.shape != (HORIZON_STEPS,):
                raise ValueError(
                    f"{self.model}/{self.patient_id}: origin {origin} has "
                    f"{preds.shape} predictions, want ({HORIZON_STEPS},)"
                )
            self.forecasts[origin] = preds


def locf_forecast(window_values: np.ndarray, steps: int = HORIZON_STEPS) -> np.ndarray:
    """Repeat the window's most recent observation for every future step."""
    window_values = np.asarray(window_values, dtype=np.float64)
    return np.full(steps, window_values[-1])


def align_origins(
    forecast_sets: list[ForecastSet], truth: GlucoseSeries
) -> dict[int, np.ndarray]:
    """Origins common to all models, filtered per horizon by truth presence.

    Returns {j: sorted origin array} for j in 1..18.  An origin survives
    at horizon j iff every model forecast from it and the ground truth
    at origin + j is present; a missing truth value removes only that
    (origin, j) pair.
    """
    if not forecast_sets:
        raise EvalError("alignment needs at least one forecast set")
    common = set(forecast_sets[0].forecasts)
    for fs in forecast_sets[1:]:
        common &= set(fs.forecasts)
    if not common:
        counts = ", ".join(
            f"{fs.model}={len(fs.forecasts)}" for fs in forecast_sets
        )
        raise EvalError(f"no common forecast origins across models ({counts})")
    base = np.array(sorted(common), dtype=np.int64)
    mask = truth.mask
    n = len(truth.values)
    per_j = {}
    for j in range(1, HORIZON_STEPS + 1):
        target = base + j
        ok = (target < n) & mask[np.minimum(target, n - 1)]
        per_j[j] = base[ok]
    return per_j


def _gather(fs: ForecastSet, truth: GlucoseSeries, j: int, origins) -> tuple[np.ndarray, np.ndarray]:
    origins = np.asarray(list(origins), dtype=np.int64)
    if origins.size == 0:
        raise EvalError(f"{fs.model}/{fs.patient_id}: no aligned pairs at horizon j={j}")
    preds = np.array([fs.forecasts[o][j - 1] for o in origins])
    truths = truth.values[origins + j]
    return preds, truths


def mae_per_horizon(fs: ForecastSet, truth: GlucoseSeries, j: int, origins) -> float:
    """Mean absolute error over the aligned pairs at horizon j."""
    preds, truths = _gather(fs, truth, j, origins)
    return float(np.mean(np.abs(preds - truths)))


def rmse_per_horizon(fs: ForecastSet, truth: GlucoseSeries, j: int, origins) -> float:
    """Root mean squared error over the aligned pairs at horizon j."""
    preds, truths = _gather(fs, truth, j, origins)
    return float(np.sqrt(np.mean((preds - truths) ** 2)))


# ---------------------------------------------------------------------------
# Report rows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PatientMetric:
    model: str
    train_days: int
    patient_id: str
    j: int
    n: int
    mae: float
    rmse: float

    @property
    def horizon_min(self) -> int:
        return self.j * MINUTES_PER_STEP


@dataclass(frozen=True)
class PopulationMetric:
    model: str
    train_days: int
    j: int
    mean_mae: float
    sem_mae: float | None
    mean_rmse: float
    sem_rmse: float | None

    @property
    def horizon_min(self) -> int:
        return self.j * MINUTES_PER_STEP


@dataclass
class EvalReport:
    """All per-patient and population metric rows of one experiment."""

    patient_metrics: list[PatientMetric] = field(default_factory=list)
    population_metrics: list[PopulationMetric] = field(default_factory=list)

    def train_days_values(self) -> list[int]:
        return sorted({m.train_days for m in self.patient_metrics})

    def models(self) -> list[str]:
        return sorted({m.model for m in self.patient_metrics}, key=_model_rank)


def evaluate_patient(
    forecast_sets: list[ForecastSet],
    truth: GlucoseSeries,
    train_days: int,
) -> list[PatientMetric]:
    """Score every model on the shared aligned pairs for one patient.

    All models are guaranteed the identical (origin, j) multiset; the
    resulting n is therefore equal across models for fixed (patient, j).
    """
    per_j = align_origins(forecast_sets, truth)
    rows = []
    for fs in sorted(forecast_sets, key=lambda f: _model_rank(f.model)):
        for j in range(1, HORIZON_STEPS + 1):
            origins = per_j[j]
            rows.append(
                PatientMetric(
                    model=fs.model,
                    train_days=train_days,
                    patient_id=fs.patient_id,
                    j=j,
                    n=len(origins),
                    mae=mae_per_horizon(fs, truth, j, origins),
                    rmse=rmse_per_horizon(fs, truth, j, origins),
                )
            )
    return rows


def aggregate_population(patient_metrics: list[PatientMetric]) -> list[PopulationMetric]:
    """Mean over patients per (model, train_days, j), with SEM when n >= 2.

    SEM is the unbiased (n-1) sample standard deviation over patients
    divided by sqrt(n); with fewer than 2 patients it is undefined and
    reported as None.
    """
    groups: dict[tuple[str, int, int], list[PatientMetric]] = {}
    for m in patient_metrics:
        groups.setdefault((m.model, m.train_days, m.j), []).append(m)
    rows = []
    for (model, td, j) in sorted(groups, key=lambda k: (k[1], _model_rank(k[0]), k[2])):
        members = groups[(model, td, j)]
        maes = np.array([m.mae for m in members])
        rmses = np.array([m.rmse for m in members])
        if len(members) >= 2:
            sem_mae = float(np.std(maes, ddof=1) / math.sqrt(len(maes)))
            sem_rmse = float(np.std(rmses, ddof=1) / math.sqrt(len(rmses)))
        else:
            sem_mae = sem_rmse = None
        rows.append(
            PopulationMetric(
                model=model,
                train_days=td,
                j=j,
                mean_mae=float(maes.mean()),
                sem_mae=sem_mae,
                mean_rmse=float(rmses.mean()),
                sem_rmse=sem_rmse,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def export_patient_csv(report: EvalReport, train_days: int) -> bytes:
    """Per-patient metrics at one train_days setting, all 18 horizons."""
    out = io.StringIO()
    out.write("model,patient_id,horizon_min,j,n,mae,rmse\n")
    rows = [m for m in report.patient_metrics if m.train_days == train_days]
    rows.sort(key=lambda m: (_model_rank(m.model), m.patient_id, m.j))
    for m in rows:
        out.write(
            f"{m.model},{m.patient_id},{m.horizon_min},{m.j},{m.n},"
            f"{_fmt(m.mae)},{_fmt(m.rmse)}\n"
        )
    return out.getvalue().encode("utf-8")


def export_population_csv(report: EvalReport, train_days: int) -> bytes:
    """Population table at one train_days setting, reported horizons only."""
    out = io.StringIO()
    out.write("model,horizon_min,mean_mae,sem_mae,mean_rmse,sem_rmse\n")
    rows = [
        m
        for m in report.population_metrics
        if m.train_days == train_days and m.j in REPORTED_J
    ]
    rows.sort(key=lambda m: (_model_rank(m.model), m.j))
    for m in rows:
        out.write(
            f"{m.model},{m.horizon_min},{_fmt(m.mean_mae)},{_fmt(m.sem_mae)},"
            f"{_fmt(m.mean_rmse)},{_fmt(m.sem_rmse)}\n"
        )
    return out.getvalue().encode("utf-8")


def export_boxplot_csv(report: EvalReport) -> bytes:
    """Raw per-patient MAE rows across train_days, reported horizons.

    Quartiles are deliberately left to downstream plotting; every raw
    value is listed.
    """
    out = io.StringIO()
    out.write("model,train_days,horizon_min,patient_id,mae\n")
    rows = [m for m in report.patient_metrics if m.j in REPORTED_J]
    rows.sort(key=lambda m: (_model_rank(m.model), m.train_days, m.j, m.patient_id))
    for m in rows:
        out.write(
            f"{m.model},{m.train_days},{m.horizon_min},{m.patient_id},{_fmt(m.mae)}\n"
        )
    return out.getvalue().encode("utf-8")


def export_report(report: EvalReport, format: str = "csv", train_days: int = 7) -> bytes:
    """Single-stream export: csv yields the population table, json everything."""
    if format == "csv":
        return export_population_csv(report, train_days)
    if format == "json":
        payload = {
            "patient_metrics": [
                {
                    "model": m.model,
                    "train_days": m.train_days,
                    "patient_id": m.patient_id,
                    "horizon_min": m.horizon_min,
                    "j": m.j,
                    "n": m.n,
                    "mae": m.mae,
                    "rmse": m.rmse,
                }
                for m in sorted(
                    report.patient_metrics,
                    key=lambda m: (m.train_days, _model_rank(m.model), m.patient_id, m.j),
                )
            ],
            "population_metrics": [
                {
                    "model": m.model,
                    "train_days": m.train_days,
                    "horizon_min": m.horizon_min,
                    "j": m.j,
                    "mean_mae": m.mean_mae,
                    "sem_mae": m.sem_mae,
                    "mean_rmse": m.mean_rmse,
                    "sem_rmse": m.sem_rmse,
                }
                for m in sorted(
                    report.population_metrics,
                    key=lambda m: (m.train_days, _model_rank(m.model), m.j),
                )
            ],
        }
        return (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8")
    raise ValueError(f"unknown export format {format!r}")
