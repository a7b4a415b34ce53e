"""Short-term blood-glucose forecasting from CGM time series.

The package compares recurrent forecasters against classical baselines
on 5-minute continuous glucose monitoring data: bidirectional LSTMs
trained on a population and adapted per patient, per-patient ARIMA
models selected by stepwise AIC search, and a last-observation-
carried-forward reference.  All models produce multi-step forecasts by
autoregressive rollout and are scored with MAE/RMSE per horizon.
"""

__version__ = "0.1.0"

from .arima import ArimaError, ArimaModel, ArimaOrder, auto_arima, fit_arima
from .arima import forecast as arima_forecast
from .cgm import GlucoseSeries, IngestError, ingest_csv
from .evaluation import EvalError, EvalReport, ForecastSet, locf_forecast
from .experiment import (
    ExperimentError,
    RunConfig,
    load_run_config,
    run_experiment,
    write_report_files,
)
from .lstm import NetworkConfig, gradient_check, rollout
from .synth import SynthProfile, generate_patient, make_cohort
from .training import (
    TrainConfig,
    TrainedModel,
    TrainingError,
    finetune_patient,
    train_patient_scratch,
    train_population,
)

__all__ = [
    "__version__",
    "ArimaError",
    "ArimaModel",
    "ArimaOrder",
    "auto_arima",
    "fit_arima",
    "arima_forecast",
    "GlucoseSeries",
    "IngestError",
    "ingest_csv",
    "EvalError",
    "EvalReport",
    "ForecastSet",
    "locf_forecast",
    "ExperimentError",
    "RunConfig",
    "load_run_config",
    "run_experiment",
    "write_report_files",
    "NetworkConfig",
    "gradient_check",
    "rollout",
    "SynthProfile",
    "generate_patient",
    "make_cohort",
    "TrainConfig",
    "TrainedModel",
    "TrainingError",
    "finetune_patient",
    "train_patient_scratch",
    "train_population",
]
