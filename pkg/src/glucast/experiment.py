"""End-to-end experiment: cohort in, per-horizon error tables out.

The flow mirrors the comparison this package exists for.  Included
patients are partitioned into a population-training set and a held-out
evaluation set.  Three population networks (seeds 0..2) are pretrained
on the training patients.  Then, for every held-out patient and every
training-slice length in {1, 3, 7} days, the pipeline finetunes the
pretrained networks, trains the same architecture from scratch, and
fits an ARIMA model, and all five forecasters (those three, the
population ensemble, and LOCF) emit 18-step forecasts from every
test-valid origin in the patient's final 7 days.  Alignment guarantees
each model is scored on identical (origin, horizon) pairs.

Each (patient, train_days) cell is independent and seeded, so cells can
run in parallel with identical results regardless of worker count.  A
cell in which any model family fails is dropped whole (keeping the
fairness invariant) and recorded; a family failing in every cell aborts
the experiment.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .arima import ArimaError, ArimaOrder, auto_arima, forecast as arima_forecast
from .cgm import (
    GlucoseSeries,
    apply_inclusion,
    extract_windows,
    interpolate_gaps,
    partition_population,
    split_patient_period,
)
from .evaluation import (
    HORIZON_STEPS,
    EvalReport,
    ForecastSet,
    aggregate_population,
    evaluate_patient,
    export_boxplot_csv,
    export_patient_csv,
    export_population_csv,
    export_report,
    locf_forecast,
)
from .lstm import NetworkConfig, rollout
from .training import (
    TrainConfig,
    TrainedModel,
    TrainingError,
    ensemble_predict,
    finetune_patient,
    train_patient_scratch,
    train_population,
)

TRAIN_DAYS_CHOICES = (1, 3, 7)


class ExperimentError(Exception):
    """Raised when the experiment cannot produce a complete report."""


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Everything a run needs; serializable to/from a JSON config file."""

    data: str | None = None
    store: str = "runs"
    report: str = "report"
    seed: int = 0
    train_days: tuple[int, ...] = TRAIN_DAYS_CHOICES
    eval_step: int = 1
    jobs: int = 1
    synth_patients: int = 50
    synth_days: int = 14
    train: TrainConfig = field(default_factory=TrainConfig)
    net: NetworkConfig = field(default_factory=NetworkConfig)
    arima_p: int = 24
    arima_d: int = 4
    arima_q: int = 24

    def __post_init__(self) -> None:
        self.train_days = tuple(self.train_days)
        for td in self.train_days:
            if td not in TRAIN_DAYS_CHOICES:
                raise ValueError(f"train_days must be within {TRAIN_DAYS_CHOICES}, got {td}")
        if not self.train_days:
            raise ValueError("train_days must not be empty")
        if self.eval_step < 1:
            raise ValueError("eval_step must be positive")
        if self.jobs < 1:
            raise ValueError("jobs must be positive")
        if self.synth_patients < 1:
            raise ValueError("synth_patients must be positive")

    def arima_bounds(self) -> ArimaOrder:
        return ArimaOrder(self.arima_p, self.arima_d, self.arima_q)


_CONFIG_SECTIONS = {"train": TrainConfig, "net": NetworkConfig}


def run_config_to_dict(config: RunConfig) -> dict:
    d = asdict(config)
    d["train_days"] = list(config.train_days)
    d["train"]["seeds"] = list(config.train.seeds)
    return d


def _apply_section(cls, defaults, raw: dict, path: str):
    known = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys under {path}: {sorted(unknown)}")
    merged = asdict(defaults)
    merged.update(raw)
    if "seeds" in merged:
        merged["seeds"] = tuple(merged["seeds"])
    return cls(**merged)


def run_config_from_dict(raw: dict) -> RunConfig:
    """Build a RunConfig from parsed JSON, rejecting unknown keys."""
    if not isinstance(raw, dict):
        raise ValueError("config root must be a JSON object")
    known = {f.name for f in RunConfig.__dataclass_fields__.values()}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        if key in _CONFIG_SECTIONS:
            if not isinstance(value, dict):
                raise ValueError(f"config key {key!r} must be an object")
            kwargs[key] = _apply_section(_CONFIG_SECTIONS[key], _CONFIG_SECTIONS[key](), value, key)
        elif key == "train_days":
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


def load_run_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    try:
        return run_config_from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: {exc}") from exc


def config_digest(config: RunConfig, command: str) -> str:
    """Deterministic run id: same command + config always maps to it."""
    canon = json.dumps(
        {"command": command, "config": run_config_to_dict(config)},
        sort_keys=True,
        separators=(",", ":"),
    )
    return "run-" + hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Cohort preparation
# ---------------------------------------------------------------------------


def prepare_cohort(patients: list[GlucoseSeries]) -> tuple[list[GlucoseSeries], list[str]]:
    """Apply the availability rules to every patient; collect rejections."""
    included = []
    rejections: list[str] = []
    for series in patients:
        kept, lines = apply_inclusion(series)
        rejections.extend(lines)
        if kept is not None:
            included.append(kept)
    return included, rejections


def pretrain_population(
    cohort: list[GlucoseSeries], config: RunConfig
) -> tuple[list[TrainedModel], list[str]]:
    """Pretrain the population networks on the partition's training side.

    Uses the same inclusion rules and partition seed as run_experiment,
    so the held-out patients evaluated later never contribute gradients
    or standardization statistics here.
    """
    included, rejections = prepare_cohort(cohort)
    if len(included) < 2:
        raise ExperimentError(
            f"need at least 2 included patients, have {len(included)}"
        )
    partition = partition_population([s.patient_id for s in included], config.seed)
    by_id = {s.patient_id: s for s in included}
    train_set = [by_id[pid] for pid in partition.population_train]
    models = train_population(train_set, config.train, config.net)
    return models, rejections


# ---------------------------------------------------------------------------
# Per-cell forecasting
# ---------------------------------------------------------------------------


@dataclass
class CellResult:
    patient_id: str
    train_days: int
    forecast_sets: list[ForecastSet] | None
    failed_family: str | None = None
    error: str | None = None
    arima_order: tuple[int, int, int] | None = None
    finetune_fallback: bool = False


def _test_origins(series: GlucoseSeries, test_start: int, k: int, step: int):
    """(origin, interpolated raw window) pairs over the test span.

    The origin is the grid index of the window's last observed slot;
    windows near the span start reach back into the training days, as
    they would in deployment.
    """
    out = []
    for w in extract_windows(series, k=k, step=step, mode="test"):
        origin = w.origin_index - 1
        if origin >= test_start:
            out.append((origin, interpolate_gaps(w.values)))
    return out


def _lstm_forecast_set(
    model_name: str,
    models: list[TrainedModel],
    origins: list,
    patient_id: str,
) -> ForecastSet:
    std = models[0].standardizer
    window_arr = np.stack([w for _, w in origins])
    window_std = (window_arr - std.mean) / std.std
    member_preds = []
    for m in models:
        member_preds.append(rollout(m.params, window_std, HORIZON_STEPS))
    preds_std = np.mean(member_preds, axis=0)
    preds = std.mean + std.std * preds_std
    return ForecastSet(
        model=model_name,
        patient_id=patient_id,
        forecasts={o: preds[i] for i, (o, _) in enumerate(origins)},
    )


def run_cell(
    series: GlucoseSeries,
    train_days: int,
    config: RunConfig,
    pretrained: list[TrainedModel] | None,
) -> CellResult:
    """All five model families for one (patient, train_days) cell."""
    pid = series.patient_id
    try:
        train_slice, test_slice = split_patient_period(series, train_days)
    except ValueError as exc:
        return CellResult(pid, train_days, None, failed_family="split", error=str(exc))
    test_start = len(series.values) - len(test_slice.values)
    k = config.net.window
    origins = _test_origins(series, test_start, k, config.eval_step)
    if not origins:
        return CellResult(
            pid, train_days, None, failed_family="windows", error="no test-valid windows"
        )

    fsets: list[ForecastSet] = []
    fsets.append(
        ForecastSet(
            model="locf",
            patient_id=pid,
            forecasts={o: locf_forecast(w) for o, w in origins},
        )
    )

    arima_order = None
    try:
        train_interp = interpolate_gaps(train_slice.values)
        model, _ = auto_arima(train_interp, bounds=config.arima_bounds())
        arima_order = (model.order.p, model.order.d, model.order.q)
        full_interp = interpolate_gaps(series.values)
        fsets.append(
            ForecastSet(
                model="arima",
                patient_id=pid,
                forecasts={
                    o: arima_forecast(model, full_interp[: o + 1], HORIZON_STEPS)
                    for o, _ in origins
                },
            )
        )
    except (ArimaError, ValueError) as exc:
        return CellResult(pid, train_days, None, failed_family="arima", error=str(exc))

    finetune_fallback = False
    if pretrained is not None:
        fsets.append(_lstm_forecast_set("lstm_population", pretrained, origins, pid))
        try:
            tuned = [finetune_patient(m, train_slice, config.train) for m in pretrained]
            finetune_fallback = any(m.fallback for m in tuned)
            fsets.append(_lstm_forecast_set("lstm_finetuned", tuned, origins, pid))
        except TrainingError as exc:
            return CellResult(pid, train_days, None, failed_family="lstm_finetuned", error=str(exc))

    try:
        scratch = [
            train_patient_scratch(train_slice, config.train, config.net, seed=s)
            for s in config.train.seeds
        ]
        fsets.append(_lstm_forecast_set("lstm_scratch", scratch, origins, pid))
    except (TrainingError, ValueError) as exc:
        return CellResult(pid, train_days, None, failed_family="lstm_scratch", error=str(exc))

    return CellResult(
        pid,
        train_days,
        fsets,
        arima_order=arima_order,
        finetune_fallback=finetune_fallback,
    )


def _run_cell_star(args):
    return run_cell(*args)


# ---------------------------------------------------------------------------
# Full experiment
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    report: EvalReport
    manifest: dict
    rejections: list[str]


def run_experiment(
    cohort: list[GlucoseSeries],
    config: RunConfig,
    pretrained: list[TrainedModel] | None = None,
    skip_pretrained: bool = False,
) -> ExperimentResult:
    """Pretrained models in, full evaluation report out.

    With skip_pretrained the population and finetuned families are
    dropped and only LOCF, ARIMA, and scratch networks compete.
    """
    if pretrained is None and not skip_pretrained:
        raise ExperimentError("population models required unless skip_pretrained is set")
    included, rejections = prepare_cohort(cohort)
    if len(included) < 2:
        raise ExperimentError(
            f"need at least 2 included patients, have {len(included)}"
        )
    partition = partition_population([s.patient_id for s in included], config.seed)
    by_id = {s.patient_id: s for s in included}

    cells = [
        (by_id[pid], td, config, pretrained)
        for pid in partition.heldout
        for td in config.train_days
    ]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_cell_star, cells))
    else:
        results = [run_cell(*cell) for cell in cells]

    families = ["locf", "arima", "lstm_scratch"]
    if not skip_pretrained:
        families = ["locf", "arima", "lstm_population", "lstm_finetuned", "lstm_scratch"]

    skipped = [r for r in results if r.forecast_sets is None]
    completed = [r for r in results if r.forecast_sets is not None]
    if not completed:
        summary = "; ".join(
            f"{r.patient_id}/td{r.train_days}: {r.failed_family}: {r.error}" for r in skipped
        )
        raise ExperimentError(f"every cell failed: {summary}")
    fail_counts: dict[str, int] = {}
    for r in skipped:
        fail_counts[r.failed_family] = fail_counts.get(r.failed_family, 0) + 1
    for family, count in fail_counts.items():
        if count == len(results):
            raise ExperimentError(f"model family {family!r} failed in every cell")

    patient_metrics = []
    for r in completed:
        truth = by_id[r.patient_id]
        patient_metrics.extend(evaluate_patient(r.forecast_sets, truth, r.train_days))
    report = EvalReport(
        patient_metrics=patient_metrics,
        population_metrics=aggregate_population(patient_metrics),
    )

    manifest = {
        "config": run_config_to_dict(config),
        "families": families,
        "n_patients_input": len(cohort),
        "n_patients_included": len(included),
        "population_patients": partition.population_train,
        "heldout_patients": partition.heldout,
        "train_days": list(config.train_days),
        "arima_fits": sum(1 for r in completed if r.arima_order is not None),
        "arima_orders": {
            f"{r.patient_id}/td{r.train_days}": list(r.arima_order)
            for r in sorted(completed, key=lambda r: (r.patient_id, r.train_days))
            if r.arima_order is not None
        },
        "finetune_fallbacks": sorted(
            f"{r.patient_id}/td{r.train_days}" for r in completed if r.finetune_fallback
        ),
        "skipped_cells": [
            {
                "patient_id": r.patient_id,
                "train_days": r.train_days,
                "family": r.failed_family,
                "error": r.error,
            }
            for r in sorted(skipped, key=lambda r: (r.patient_id, r.train_days))
        ],
        "n_rejections": len(rejections),
    }
    return ExperimentResult(report=report, manifest=manifest, rejections=rejections)


def write_report_files(result: ExperimentResult, out_dir: str) -> list[str]:
    """Write every report artifact; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def emit(name: str, payload: bytes) -> None:
        path = os.path.join(out_dir, name)
        with open(path, "wb") as fh:
            fh.write(payload)
        written.append(path)

    for td in sorted({m.train_days for m in result.report.patient_metrics}):
        emit(f"population_td{td}.csv", export_population_csv(result.report, td))
        emit(f"patients_td{td}.csv", export_patient_csv(result.report, td))
    emit("boxplot.csv", export_boxplot_csv(result.report))
    emit("report.json", export_report(result.report, format="json"))
    emit(
        "manifest.json",
        (json.dumps(result.manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"),
    )
    emit("rejections.txt", ("".join(line + "\n" for line in result.rejections)).encode("utf-8"))
    return written


# ---------------------------------------------------------------------------
# Model store
# ---------------------------------------------------------------------------


def store_population_models(models: list[TrainedModel], run_dir: str) -> list[str]:
    """Persist pretrained models + provenance + epoch logs under one run."""
    from .lstm import save_params

    os.makedirs(run_dir, exist_ok=True)
    written = []
    for m in models:
        stem = os.path.join(run_dir, f"population_seed{m.seed}")
        save_params(m.params, stem + ".model")
        prov = {
            "regime": m.regime,
            "seed": m.seed,
            "epochs_run": m.epochs_run,
            "best_val_loss": m.best_val_loss,
            "fallback": m.fallback,
            "standardizer": {"mean": m.standardizer.mean, "std": m.standardizer.std},
        }
        with open(stem + ".json", "w", encoding="utf-8") as fh:
            json.dump(prov, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(stem + ".log.jsonl", "w", encoding="utf-8") as fh:
            for line in m.epoch_log:
                fh.write(json.dumps(line, sort_keys=True) + "\n")
        written.extend([stem + ".model", stem + ".json", stem + ".log.jsonl"])
    return written


def load_population_models(run_dir: str) -> list[TrainedModel]:
    """Load every population model stored by store_population_models."""
    from .cgm import StandardizationParams
    from .lstm import load_params

    models = []
    stems = sorted(
        f[: -len(".model")]
        for f in os.listdir(run_dir)
        if f.startswith("population_seed") and f.endswith(".model")
    )
    if not stems:
        raise FileNotFoundError(f"no population models under {run_dir}")
    for stem in stems:
        params = load_params(os.path.join(run_dir, stem + ".model"))
        with open(os.path.join(run_dir, stem + ".json"), "r", encoding="utf-8") as fh:
            prov = json.load(fh)
        models.append(
            TrainedModel(
                params=params,
                regime=prov["regime"],
                seed=prov["seed"],
                epochs_run=prov["epochs_run"],
                best_val_loss=prov["best_val_loss"],
                standardizer=StandardizationParams(**prov["standardizer"]),
                fallback=prov.get("fallback", False),
            )
        )
    return models
