"""Command-line entry point for the glucose forecasting pipeline.

Subcommands cover every pipeline stage: `synth` (seeded cohort
generation), `ingest` (CSV validation and inclusion report),
`pretrain` (population networks), `finetune` / `train-patient` /
`fit-arima` (per-patient models), `experiment` (the full five-model
comparison), `gradcheck` (finite-difference verification of the
network gradients), and `report` (re-export CSV tables from a saved
report).

Configuration comes from an optional JSON file (--config) whose schema
matches RunConfig; unknown keys are rejected before any work starts,
and command-line flags win over file values.  Every command is
deterministic given identical inputs and seeds.

Exit codes: 0 success, 1 verification failure, 2 usage or config
error, 3 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .arima import ArimaError, auto_arima, model_to_json
from .cgm import IngestError, ingest_csv, interpolate_gaps, split_patient_period, write_cohort_csv
from .experiment import (
    ExperimentError,
    RunConfig,
    config_digest,
    load_population_models,
    load_run_config,
    pretrain_population,
    prepare_cohort,
    run_config_to_dict,
    run_experiment,
    store_population_models,
    write_report_files,
)
from .lstm import gradient_check
from .synth import SynthProfile, make_cohort
from .training import TrainingError, finetune_patient, hyper_search, train_patient_scratch

EXIT_OK = 0
EXIT_VERIFICATION = 1
EXIT_USAGE = 2
EXIT_DATA = 3


class UsageError(Exception):
    """Command-line or configuration problem (exit 2)."""


class DataError(Exception):
    """Input data cannot be processed (exit 3)."""


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration file")
    common.add_argument("--seed", type=int, help="partition / generation seed")
    common.add_argument("--jobs", type=int, help="parallel workers for experiment cells")
    common.add_argument("--out", help="output file or directory")

    parser = argparse.ArgumentParser(
        prog="glucast", description="Short-term glucose forecasting toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort CSV")
    p.add_argument("--patients", type=int, help="number of patients")
    p.add_argument("--days", type=int, help="days per patient")

    p = sub.add_parser("ingest", parents=[common], help="validate a cohort CSV")
    p.add_argument("--data", help="cohort CSV path")

    p = sub.add_parser("pretrain", parents=[common], help="pretrain population networks")
    p.add_argument("--data", help="cohort CSV path")
    p.add_argument("--budget", type=int, default=0, help="architecture search trials (0 = default)")

    p = sub.add_parser("finetune", parents=[common], help="finetune pretrained networks on one patient")
    p.add_argument("--data", help="cohort CSV path")
    p.add_argument("--pretrained", help="population model run directory")
    p.add_argument("--patient", help="patient id")
    p.add_argument("--train-days", type=int, default=7, choices=(1, 3, 7))

    p = sub.add_parser("train-patient", parents=[common], help="train a per-patient network from scratch")
    p.add_argument("--data", help="cohort CSV path")
    p.add_argument("--patient", help="patient id")
    p.add_argument("--train-days", type=int, default=7, choices=(1, 3, 7))

    p = sub.add_parser("fit-arima", parents=[common], help="fit an ARIMA model for one patient")
    p.add_argument("--data", help="cohort CSV path")
    p.add_argument("--patient", help="patient id")
    p.add_argument("--train-days", type=int, default=7, choices=(1, 3, 7))

    p = sub.add_parser("experiment", parents=[common], help="run the full five-model comparison")
    p.add_argument("--data", help="cohort CSV path")
    p.add_argument("--pretrained", help="population model run directory")
    p.add_argument("--skip-pretrained", action="store_true", help="evaluate only LOCF, ARIMA, scratch")
    p.add_argument("--train-days", help="comma-separated subset of 1,3,7")
    p.add_argument("--eval-step", type=int, help="forecast origin stride in slots")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient verification")
    p.add_argument("--seeds", type=int, default=20, help="number of random trials")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("report", parents=[common], help="re-export CSV tables from a report.json")
    p.add_argument("--report-json", help="path to a saved report.json")

    return parser


def _merged_config(args) -> RunConfig:
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise UsageError(f"config file not found: {args.config}")
        config = load_run_config(args.config)
    else:
        config = RunConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = args.jobs
    if getattr(args, "data", None):
        overrides["data"] = args.data
    if getattr(args, "eval_step", None) is not None:
        overrides["eval_step"] = args.eval_step
    if getattr(args, "train_days", None) is not None and args.command == "experiment":
        try:
            overrides["train_days"] = tuple(
                int(part) for part in str(args.train_days).split(",") if part
            )
        except ValueError as exc:
            raise UsageError(f"bad --train-days value: {args.train_days!r}") from exc
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def _load_cohort(config: RunConfig):
    if not config.data:
        raise UsageError("a cohort CSV is required (--data or config 'data')")
    if not os.path.exists(config.data):
        raise UsageError(f"data path not found: {config.data}")
    return ingest_csv(config.data)


def _included_patient(config: RunConfig, patient_id: str | None):
    if not patient_id:
        raise UsageError("--patient is required")
    included, _ = prepare_cohort(_load_cohort(config))
    for series in included:
        if series.patient_id == patient_id:
            return series
    raise DataError(f"patient {patient_id!r} not found among included patients")


def _run_dir(config: RunConfig, command: str, extra: dict | None = None) -> str:
    name = command if extra is None else f"{command}:{json.dumps(extra, sort_keys=True)}"
    return os.path.join(config.store, config_digest(config, name))


def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args, config: RunConfig) -> int:
    patients = args.patients if args.patients is not None else config.synth_patients
    days = args.days if args.days is not None else config.synth_days
    if patients < 1:
        raise UsageError("--patients must be at least 1")
    if days < 1:
        raise UsageError("--days must be at least 1")
    out = args.out or f"cohort_p{patients}_d{days}_s{config.seed}.csv"
    template = SynthProfile(days=days, seed=config.seed)
    cohort = make_cohort(n_patients=patients, template=template, seed=config.seed)
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    write_cohort_csv(cohort, out)
    _write_json(
        out + ".manifest.json",
        {
            "n_patients": patients,
            "days": days,
            "seed": config.seed,
            "template": dataclasses.asdict(template),
        },
    )
    print(f"wrote {out} ({patients} patients x {days} days, seed {config.seed})")
    return EXIT_OK


def cmd_ingest(args, config: RunConfig) -> int:
    cohort = _load_cohort(config)
    included, rejections = prepare_cohort(cohort)
    summary = {
        "patients_in_file": len(cohort),
        "patients_included": len(included),
        "rejection_lines": len(rejections),
        "patients": {
            s.patient_id: {"days": s.n_days, "availability": round(float(s.mask.mean()), 4)}
            for s in included
        },
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "ingest_summary.json"), summary)
        with open(os.path.join(args.out, "rejections.txt"), "w", encoding="utf-8") as fh:
            fh.writelines(line + "\n" for line in rejections)
    print(f"{len(included)}/{len(cohort)} patients included, {len(rejections)} rejection lines")
    for line in rejections:
        print(f"  {line}")
    return EXIT_OK


def cmd_pretrain(args, config: RunConfig) -> int:
    cohort = _load_cohort(config)
    if args.budget:
        included, _ = prepare_cohort(cohort)
        from .cgm import partition_population

        partition = partition_population([s.patient_id for s in included], config.seed)
        train_set = [s for s in included if s.patient_id in set(partition.population_train)]
        search = hyper_search(train_set, config.train, budget=args.budget, seed=config.seed)
        config = dataclasses.replace(config, net=search.net)
        print(f"architecture search ({args.budget} trials) chose {search.net}")
    models, rejections = pretrain_population(cohort, config)
    run_dir = args.out or _run_dir(config, "pretrain")
    store_population_models(models, run_dir)
    _write_json(
        os.path.join(run_dir, "manifest.json"),
        {
            "command": "pretrain",
            "config": run_config_to_dict(config),
            "n_rejections": len(rejections),
            "seeds": [m.seed for m in models],
            "best_val_loss": {str(m.seed): m.best_val_loss for m in models},
        },
    )
    for m in models:
        print(
            f"seed {m.seed}: best val RMSE {m.best_val_loss:.6f} "
            f"after {m.epochs_run} epochs"
        )
    print(f"stored population models in {run_dir}")
    return EXIT_OK


def cmd_finetune(args, config: RunConfig) -> int:
    if not args.pretrained:
        raise UsageError("--pretrained run directory is required")
    if not os.path.isdir(args.pretrained):
        raise UsageError(f"pretrained run directory not found: {args.pretrained}")
    series = _included_patient(config, args.patient)
    train_slice, _ = split_patient_period(series, args.train_days)
    pretrained = load_population_models(args.pretrained)
    tuned = [finetune_patient(m, train_slice, config.train) for m in pretrained]
    run_dir = args.out or _run_dir(
        config, "finetune", {"patient": args.patient, "train_days": args.train_days}
    )
    os.makedirs(run_dir, exist_ok=True)
    from .lstm import save_params

    for m in tuned:
        stem = os.path.join(run_dir, f"finetuned_{args.patient}_td{args.train_days}_seed{m.seed}")
        save_params(m.params, stem + ".model")
        _write_json(
            stem + ".json",
            {
                "regime": m.regime,
                "seed": m.seed,
                "epochs_run": m.epochs_run,
                "best_val_loss": m.best_val_loss,
                "fallback": m.fallback,
                "standardizer": {"mean": m.standardizer.mean, "std": m.standardizer.std},
            },
        )
        note = " (fallback to pretrained)" if m.fallback else ""
        print(f"seed {m.seed}: {m.epochs_run} epochs{note}")
    print(f"stored finetuned models in {run_dir}")
    return EXIT_OK


def cmd_train_patient(args, config: RunConfig) -> int:
    series = _included_patient(config, args.patient)
    train_slice, _ = split_patient_period(series, args.train_days)
    models = [
        train_patient_scratch(train_slice, config.train, config.net, seed=s)
        for s in config.train.seeds
    ]
    run_dir = args.out or _run_dir(
        config, "train-patient", {"patient": args.patient, "train_days": args.train_days}
    )
    os.makedirs(run_dir, exist_ok=True)
    from .lstm import save_params

    for m in models:
        stem = os.path.join(run_dir, f"scratch_{args.patient}_td{args.train_days}_seed{m.seed}")
        save_params(m.params, stem + ".model")
        _write_json(
            stem + ".json",
            {
                "regime": m.regime,
                "seed": m.seed,
                "epochs_run": m.epochs_run,
                "best_val_loss": m.best_val_loss,
                "standardizer": {"mean": m.standardizer.mean, "std": m.standardizer.std},
            },
        )
        print(f"seed {m.seed}: best val RMSE {m.best_val_loss:.6f} after {m.epochs_run} epochs")
    print(f"stored scratch models in {run_dir}")
    return EXIT_OK


def cmd_fit_arima(args, config: RunConfig) -> int:
    series = _included_patient(config, args.patient)
    train_slice, _ = split_patient_period(series, args.train_days)
    values = interpolate_gaps(train_slice.values)
    model, diag = auto_arima(values, bounds=config.arima_bounds())
    out = args.out or os.path.join(
        config.store, f"arima_{args.patient}_td{args.train_days}.json"
    )
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(model_to_json(model))
        fh.write("\n")
    print(
        f"patient {args.patient}: ARIMA({model.order.p},{model.order.d},{model.order.q}) "
        f"AIC {model.aic:.2f} (converged={diag.converged})"
    )
    print(f"wrote {out}")
    return EXIT_OK


def cmd_experiment(args, config: RunConfig) -> int:
    cohort = _load_cohort(config)
    pretrained = None
    if not args.skip_pretrained:
        if not args.pretrained:
            raise UsageError("--pretrained run directory required (or --skip-pretrained)")
        if not os.path.isdir(args.pretrained):
            raise UsageError(f"pretrained run directory not found: {args.pretrained}")
        pretrained = load_population_models(args.pretrained)
    result = run_experiment(
        cohort, config, pretrained=pretrained, skip_pretrained=args.skip_pretrained
    )
    out_dir = args.out or config.report
    paths = write_report_files(result, out_dir)
    for cell in result.manifest["skipped_cells"]:
        print(
            f"skipped {cell['patient_id']}/td{cell['train_days']}: "
            f"{cell['family']}: {cell['error']}"
        )
    print(f"evaluated {len(result.manifest['heldout_patients'])} heldout patients, "
          f"{result.manifest['arima_fits']} ARIMA fits")
    print(f"wrote {len(paths)} report files to {out_dir}")
    return EXIT_OK


def cmd_gradcheck(args, config: RunConfig) -> int:
    tamper = None
    if args.corrupt:

        def tamper(grads):
            tensor = next(iter(grads.tensors()))
            tensor += 1e-2

    report = gradient_check(n_seeds=args.seeds, tamper=tamper)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_VERIFICATION


def cmd_report(args, config: RunConfig) -> int:
    from .evaluation import EvalReport, PatientMetric, PopulationMetric

    path = args.report_json
    if not path:
        raise UsageError("--report-json is required")
    if not os.path.exists(path):
        raise UsageError(f"report file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        report = EvalReport(
            patient_metrics=[
                PatientMetric(
                    model=m["model"],
                    train_days=m["train_days"],
                    patient_id=m["patient_id"],
                    j=m["j"],
                    n=m["n"],
                    mae=m["mae"],
                    rmse=m["rmse"],
                )
                for m in payload["patient_metrics"]
            ],
            population_metrics=[
                PopulationMetric(
                    model=m["model"],
                    train_days=m["train_days"],
                    j=m["j"],
                    mean_mae=m["mean_mae"],
                    sem_mae=m["sem_mae"],
                    mean_rmse=m["mean_rmse"],
                    sem_rmse=m["sem_rmse"],
                )
                for m in payload["population_metrics"]
            ],
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed report ({exc})") from exc
    from .evaluation import export_boxplot_csv, export_patient_csv, export_population_csv

    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for td in sorted({m.train_days for m in report.patient_metrics}):
        for name, payload_bytes in (
            (f"population_td{td}.csv", export_population_csv(report, td)),
            (f"patients_td{td}.csv", export_patient_csv(report, td)),
        ):
            with open(os.path.join(out_dir, name), "wb") as fh:
                fh.write(payload_bytes)
            written.append(name)
    with open(os.path.join(out_dir, "boxplot.csv"), "wb") as fh:
        fh.write(export_boxplot_csv(report))
    written.append("boxplot.csv")
    print(f"wrote {', '.join(written)} to {out_dir}")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "train-patient": cmd_train_patient,
    "fit-arima": cmd_fit_arima,
    "experiment": cmd_experiment,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _merged_config(args)
        return _COMMANDS[args.command](args, config)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, IngestError, ExperimentError, TrainingError, ArimaError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
