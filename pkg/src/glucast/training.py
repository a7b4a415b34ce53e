"""Training regimes for the glucose LSTM.

Three regimes share one loop: population pretraining (RAdam over many
patients' windows, validated on held-out patients), per-patient
finetuning of a pretrained network (SGD with momentum at a small
learning rate, which avoids clobbering the transferred weights), and
per-patient training from random init (RAdam again).

The loop trains teacher-forced on every window prefix: the batch loss
is the RMSE over all (window, prefix) positions with a present target.
Each epoch ends with a validation RMSE that drives a reduce-on-plateau
schedule (divide the learning rate by 10 after 10 epochs without
improvement) and early stopping (stop after 20 such epochs); both run
off the same improvement signal but count independently.  The model
returned is the best-validation snapshot, never the last iterate.

Ensembling averages the rollouts of 3 seeds elementwise, after each
model's own autoregression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cgm import (
    GlucoseSeries,
    StandardizationParams,
    extract_windows,
    fit_standardizer,
    standardize,
)
from .lstm import NetworkConfig, NetworkParams, backward_prefix, forward_prefix, init_params, rollout


class TrainingError(Exception):
    """Raised when a training run cannot produce a model."""


@dataclass
class TrainConfig:
    """Knobs shared by all regimes; regimes override optimizer and step."""

    batch_size: int = 64
    optimizer: str = "radam"  # "radam" | "sgd"
    lr: float = 1e-3
    momentum: float = 0.9
    plateau_patience: int = 10
    plateau_factor: float = 10.0
    stop_patience: int = 20
    max_epochs: int = 500
    seeds: tuple[int, ...] = (0, 1, 2)
    window_step: int = 4
    val_fraction: float = 0.1
    chunk_size: int = 16
    finetune_lr: float = 1e-4

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.plateau_patience < 1 or self.stop_patience < 1:
            raise ValueError("patience values must be positive")
        if self.optimizer not in ("radam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.window_step < 1 or self.chunk_size < 1:
            raise ValueError("window_step and chunk_size must be positive")


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


@dataclass
class RAdamState:
    """First/second moments plus step count for rectified Adam."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: NetworkParams, lr: float = 1e-3) -> "RAdamState":
        return cls(
            m=[np.zeros_like(p) for p in params.tensors()],
            v=[np.zeros_like(p) for p in params.tensors()],
            t=0,
            lr=lr,
        )


@dataclass
class MomentumState:
    v: list[np.ndarray]
    t: int
    lr: float
    momentum: float = 0.9

    @classmethod
    def init(cls, params: NetworkParams, lr: float = 1e-4, momentum: float = 0.9) -> "MomentumState":
        return cls(v=[np.zeros_like(p) for p in params.tensors()], t=0, lr=lr, momentum=momentum)


def _check_finite(grads: NetworkParams) -> None:
    for name, g in zip(grads.tensor_names(), grads.tensors()):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")


def radam_step(params: NetworkParams, grads: NetworkParams, state: RAdamState):
    """One rectified-Adam update (defaults lr 1e-3, betas 0.9/0.999, eps 1e-8).

    While the rectification term is undefined (small t), the update
    degrades to un-adapted momentum, per the published algorithm.
    """
    _check_finite(grads)
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    rho_inf = 2.0 / (1.0 - b2) - 1.0
    b2t = b2**t
    rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t)
    bias1 = 1.0 - b1**t
    rectified = rho_t > 4.0
    if rectified:
        r_t = math.sqrt(
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
        )
        bias2_sqrt = math.sqrt(1.0 - b2t)
    for m, v, p, g in zip(state.m, state.v, params.tensors(), grads.tensors()):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if rectified:
            p -= state.lr * r_t * bias2_sqrt / bias1 * m / (np.sqrt(v) + state.eps)
        else:
            p -= state.lr / bias1 * m
    return params, state


def sgd_momentum_step(params: NetworkParams, grads: NetworkParams, state: MomentumState):
    """Classic momentum: v <- mu v + g; w <- w - lr v."""
    _check_finite(grads)
    state.t += 1
    for v, p, g in zip(state.v, params.tensors(), grads.tensors()):
        v *= state.momentum
        v += g
        p -= state.lr * v
    return params, state


# ---------------------------------------------------------------------------
# Schedule and early stopping
# ---------------------------------------------------------------------------


@dataclass
class ScheduleState:
    """Shared improvement tracker with independent patience counters.

    `best` is committed by early_stop (the canonical per-epoch order is
    plateau_schedule first, early_stop second, both with the same loss).
    """

    lr: float
    plateau_patience: int = 10
    plateau_factor: float = 10.0
    stop_patience: int = 20
    best: float = math.inf
    bad_lr: int = 0
    bad_stop: int = 0


def plateau_schedule(state: ScheduleState, val_loss: float) -> float:
    """Divide lr by the factor after `plateau_patience` epochs without strict improvement."""
    if val_loss < state.best:
        state.bad_lr = 0
    else:
        state.bad_lr += 1
        if state.bad_lr >= state.plateau_patience:
            state.lr /= state.plateau_factor
            state.bad_lr = 0
    return state.lr


def early_stop(state: ScheduleState, val_loss: float) -> bool:
    """True once `stop_patience` epochs pass without strict improvement.

    Also commits val_loss into the shared best tracker; lr reductions
    never reset this counter.
    """
    if val_loss < state.best:
        state.best = val_loss
        state.bad_stop = 0
        return False
    state.bad_stop += 1
    return state.bad_stop >= state.stop_patience


# ---------------------------------------------------------------------------
# Window batches
# ---------------------------------------------------------------------------


@dataclass
class WindowBatch:
    """Dense window matrices: inputs, next-step targets, target presence."""

    values: np.ndarray  # (B, k)
    targets: np.ndarray  # (B, k), NaN where absent
    target_mask: np.ndarray  # (B, k) bool

    def __len__(self) -> int:
        return len(self.values)

    def take(self, idx) -> "WindowBatch":
        return WindowBatch(self.values[idx], self.targets[idx], self.target_mask[idx])

    @staticmethod
    def concatenate(batches: list["WindowBatch"]) -> "WindowBatch":
        return WindowBatch(
            np.concatenate([b.values for b in batches]),
            np.concatenate([b.targets for b in batches]),
            np.concatenate([b.target_mask for b in batches]),
        )


def build_window_batch(series_std: GlucoseSeries, k: int, step: int) -> WindowBatch:
    """Training windows of a standardized series as dense matrices.

    The target at prefix position t is the series value one slot past
    that prefix; the final position's target is the origin slot, which
    may be missing and is then masked out of the loss.
    """
    windows = extract_windows(series_std, k=k, step=step, mode="train")
    if not windows:
        return WindowBatch(
            np.empty((0, k)), np.empty((0, k)), np.empty((0, k), dtype=bool)
        )
    values = np.stack([w.values for w in windows])
    starts = np.array([w.origin_index - k for w in windows])
    target_idx = starts[:, None] + np.arange(1, k + 1)[None, :]
    targets = series_std.values[target_idx]
    mask = np.isfinite(targets)
    return WindowBatch(values=values, targets=np.where(mask, targets, 0.0), target_mask=mask)


# ---------------------------------------------------------------------------
# Core loop
# ---------------------------------------------------------------------------


@dataclass
class TrainedModel:
    params: NetworkParams
    regime: str
    seed: int
    epochs_run: int
    best_val_loss: float
    standardizer: StandardizationParams
    fallback: bool = False
    epoch_log: list[dict] = field(default_factory=list)


def _eval_rmse(params: NetworkParams, batch: WindowBatch, chunk: int) -> float:
    sse = 0.0
    count = 0
    for lo in range(0, len(batch), chunk):
        part = batch.take(slice(lo, lo + chunk))
        preds, _ = forward_prefix(params, part.values)
        err = np.where(part.target_mask, preds - part.targets, 0.0)
        sse += float(np.sum(err * err))
        count += int(part.target_mask.sum())
    if count == 0:
        raise TrainingError("validation set has no present targets")
    return math.sqrt(sse / count)


def _make_optimizer(params: NetworkParams, config: TrainConfig):
    if config.optimizer == "radam":
        return RAdamState.init(params, lr=config.lr), radam_step
    return MomentumState.init(params, lr=config.lr, momentum=config.momentum), sgd_momentum_step


def _train_loop(
    params: NetworkParams,
    train: WindowBatch,
    val: WindowBatch,
    config: TrainConfig,
    rng: np.random.Generator,
) -> tuple[NetworkParams, int, float, list[dict]]:
    """Shared epoch loop; returns (best params, epochs run, best val, log)."""
    opt_state, opt_step = _make_optimizer(params, config)
    sched = ScheduleState(
        lr=config.lr,
        plateau_patience=config.plateau_patience,
        plateau_factor=config.plateau_factor,
        stop_patience=config.stop_patience,
    )
    dropout = params.config.dropout
    chunk = config.chunk_size
    log: list[dict] = []

    # Epoch 0 is the untrained baseline: it seeds the snapshot so a run
    # that only hurts validation still returns the starting weights.
    val_loss = _eval_rmse(params, val, chunk)
    best_params = params.copy()
    best_val = val_loss
    sched_lr = plateau_schedule(sched, val_loss)
    early_stop(sched, val_loss)
    log.append(
        {
            "epoch": 0,
            "train_loss": None,
            "val_loss": val_loss,
            "lr": sched_lr,
            "bad_lr": sched.bad_lr,
            "bad_stop": sched.bad_stop,
        }
    )

    epochs_run = 0
    for epoch in range(1, config.max_epochs + 1):
        epochs_run = epoch
        order = rng.permutation(len(train))
        epoch_sse = 0.0
        epoch_count = 0
        for lo in range(0, len(order), config.batch_size):
            batch = train.take(order[lo : lo + config.batch_size])
            grads_sum = params.zeros_like()
            sse = 0.0
            count = 0
            for clo in range(0, len(batch), chunk):
                part = batch.take(slice(clo, clo + chunk))
                mask = None
                if dropout > 0.0:
                    keep = rng.random((len(part), part.values.shape[1], params.config.mlp_hidden))
                    mask = (keep >= dropout) / (1.0 - dropout)
                preds, cache = forward_prefix(params, part.values, dropout_mask=mask, keep_cache=True)
                err = np.where(part.target_mask, preds - part.targets, 0.0)
                sse += float(np.sum(err * err))
                count += int(part.target_mask.sum())
                # Backprop raw errors now, rescale once the batch RMSE is
                # known: grad RMSE = sum(err * dpred/dw) / (n * rmse).
                grads = backward_prefix(params, cache, err)
                for acc, g in zip(grads_sum.tensors(), grads.tensors()):
                    acc += g
            if count == 0:
                continue
            rmse = math.sqrt(sse / count)
            epoch_sse += sse
            epoch_count += count
            if rmse == 0.0:
                continue  # perfect batch: RMSE gradient is undefined at 0
            scale = 1.0 / (count * rmse)
            for g in grads_sum.tensors():
                g *= scale
            opt_state.lr = sched.lr
            opt_step(params, grads_sum, opt_state)
        train_loss = math.sqrt(epoch_sse / epoch_count) if epoch_count else None
        val_loss = _eval_rmse(params, val, chunk)
        improved = val_loss < sched.best
        lr_now = plateau_schedule(sched, val_loss)
        if improved:
            best_params = params.copy()
            best_val = val_loss
        stop = early_stop(sched, val_loss)
        log.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "lr": lr_now,
                "bad_lr": sched.bad_lr,
                "bad_stop": sched.bad_stop,
            }
        )
        if stop:
            break
    return best_params, epochs_run, best_val, log


def _loop_rng(seed: int) -> np.random.Generator:
    # Distinct from the init_params stream: same seed, different branch.
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))


# ---------------------------------------------------------------------------
# Regimes
# ---------------------------------------------------------------------------


def split_validation_patients(patient_ids: list[str]) -> tuple[list[str], list[str]]:
    """Deterministic 30:5-ratio split of the population training patients.

    The validation share is the 5/35 fraction rounded to nearest, at
    least 1; the last ids in sorted order validate.
    """
    ids = sorted(patient_ids)
    if len(ids) < 2:
        raise TrainingError("population training needs at least 2 patients")
    n_val = int(np.floor(len(ids) * 5.0 / 35.0 + 0.5))
    n_val = min(max(n_val, 1), len(ids) - 1)
    return ids[: len(ids) - n_val], ids[len(ids) - n_val :]


def train_population(
    patients: list[GlucoseSeries],
    config: TrainConfig,
    net: NetworkConfig | None = None,
) -> list[TrainedModel]:
    """Pretrain one model per seed on the pooled population windows.

    Standardization statistics come from every population training
    patient; validation patients are held out of gradient updates but
    share the standardizer.
    """
    net = net or NetworkConfig()
    by_id = {s.patient_id: s for s in patients}
    if len(by_id) != len(patients):
        raise TrainingError("duplicate patient ids in population training set")
    grad_ids, val_ids = split_validation_patients(list(by_id))
    standardizer = fit_standardizer(patients)
    std_series = {pid: standardize(by_id[pid], standardizer) for pid in by_id}

    def pooled(ids: list[str]) -> WindowBatch:
        return WindowBatch.concatenate(
            [build_window_batch(std_series[pid], net.window, config.window_step) for pid in ids]
        )

    train_batch = pooled(grad_ids)
    val_batch = pooled(val_ids)
    if len(train_batch) == 0:
        raise TrainingError("no valid training windows in the population set")
    if len(val_batch) == 0:
        raise TrainingError("no valid validation windows in the population set")

    models = []
    for seed in config.seeds:
        params = init_params(seed, net)
        best, epochs, best_val, log = _train_loop(
            params, train_batch, val_batch, config, _loop_rng(seed)
        )
        models.append(
            TrainedModel(
                params=best,
                regime="population",
                seed=seed,
                epochs_run=epochs,
                best_val_loss=best_val,
                standardizer=standardizer,
                epoch_log=log,
            )
        )
    return models


def _chronological_split(batch: WindowBatch, val_fraction: float) -> tuple[WindowBatch, WindowBatch]:
    """Last val_fraction of windows (by origin order) become validation.

    Degenerate slices (one window) reuse it for both sides so the loop
    still has a validation signal.
    """
    n = len(batch)
    n_val = max(1, int(round(n * val_fraction)))
    n_train = n - n_val
    if n_train == 0:
        return batch, batch
    return batch.take(slice(0, n_train)), batch.take(slice(n_train, n))


def _train_single_patient(
    params: NetworkParams,
    series_std: GlucoseSeries,
    config: TrainConfig,
    seed: int,
) -> tuple[NetworkParams, int, float, list[dict]] | None:
    batch = build_window_batch(series_std, params.config.window, config.window_step)
    if len(batch) == 0:
        return None
    train_batch, val_batch = _chronological_split(batch, config.val_fraction)
    return _train_loop(params, train_batch, val_batch, config, _loop_rng(seed))


def finetune_patient(
    pretrained: TrainedModel,
    patient_train: GlucoseSeries,
    config: TrainConfig,
) -> TrainedModel:
    """Adapt a pretrained model to one patient's training slice.

    Uses SGD with momentum at a small learning rate and the population
    standardizer.  A slice with zero valid windows returns the
    pretrained weights unchanged, flagged as a fallback.
    """
    config = replace(config, optimizer="sgd", lr=config.finetune_lr, window_step=1)
    series_std = standardize(patient_train, pretrained.standardizer)
    params = pretrained.params.copy()
    result = _train_single_patient(params, series_std, config, pretrained.seed)
    if result is None:
        return TrainedModel(
            params=pretrained.params.copy(),
            regime="finetuned",
            seed=pretrained.seed,
            epochs_run=0,
            best_val_loss=math.nan,
            standardizer=pretrained.standardizer,
            fallback=True,
        )
    best, epochs, best_val, log = result
    return TrainedModel(
        params=best,
        regime="finetuned",
        seed=pretrained.seed,
        epochs_run=epochs,
        best_val_loss=best_val,
        standardizer=pretrained.standardizer,
        epoch_log=log,
    )


def train_patient_scratch(
    patient_train: GlucoseSeries,
    config: TrainConfig,
    net: NetworkConfig | None = None,
    seed: int = 0,
) -> TrainedModel:
    """Train a fresh network on one patient's slice alone.

    Standardization statistics come from that slice, so the model never
    sees population-level information.
    """
    config = replace(config, optimizer="radam", window_step=1)
    net = net or NetworkConfig()
    standardizer = fit_standardizer([patient_train])
    series_std = standardize(patient_train, standardizer)
    params = init_params(seed, net)
    result = _train_single_patient(params, series_std, config, seed)
    if result is None:
        raise TrainingError(
            f"patient {patient_train.patient_id}: no valid training windows"
        )
    best, epochs, best_val, log = result
    return TrainedModel(
        params=best,
        regime="scratch",
        seed=seed,
        epochs_run=epochs,
        best_val_loss=best_val,
        standardizer=standardizer,
        epoch_log=log,
    )


def ensemble_predict(models: list[TrainedModel], window_values: np.ndarray, steps: int = 18) -> np.ndarray:
    """Elementwise mean of each model's own autoregressive rollout.

    Averaging happens per emitted step, after each model rolled out its
    own predictions; it is not a rollout of averaged parameters.
    """
    if not models:
        raise ValueError("ensemble needs at least one model")
    ref = models[0]
    for m in models[1:]:
        if (m.standardizer.mean, m.standardizer.std) != (ref.standardizer.mean, ref.standardizer.std):
            raise ValueError("ensemble models use different standardizers")
        if m.params.config != ref.params.config:
            raise ValueError("ensemble models use different architectures")
    window = np.asarray(window_values, dtype=np.float64)[None, :]
    outs = np.stack([rollout(m.params, window, steps)[0] for m in models])
    return outs.mean(axis=0)


# ---------------------------------------------------------------------------
# Architecture search
# ---------------------------------------------------------------------------

_SEARCH_LAYERS = (1, 2)
_SEARCH_HIDDEN = (32, 64, 128)
_SEARCH_DROPOUT = (0.0, 0.2, 0.5)
_SEARCH_WINDOW = (12, 24, 36)

# The configuration the search defaults to when given no budget.
DEFAULT_WINNER = NetworkConfig(n_layers=2, hidden=64, mlp_hidden=64, window=24, dropout=0.0)


@dataclass
class HyperSearchResult:
    net: NetworkConfig
    val_loss: float | None
    trials: list[dict]


def hyper_search(
    patients: list[GlucoseSeries],
    config: TrainConfig,
    budget: int,
    seed: int = 0,
) -> HyperSearchResult:
    """Seeded random search over the architecture grid.

    Each trial pretrains one seed of a sampled configuration and scores
    it by best validation RMSE; the lowest wins.  budget 0 skips
    training and returns the default winner configuration.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    if budget == 0:
        return HyperSearchResult(net=DEFAULT_WINNER, val_loss=None, trials=[])
    rng = np.random.default_rng(seed)
    trials = []
    best: tuple[float, NetworkConfig] | None = None
    one_seed = replace(config, seeds=(config.seeds[0],))
    for i in range(budget):
        hidden = int(rng.choice(_SEARCH_HIDDEN))
        net = NetworkConfig(
            n_layers=int(rng.choice(_SEARCH_LAYERS)),
            hidden=hidden,
            mlp_hidden=hidden,
            window=int(rng.choice(_SEARCH_WINDOW)),
            dropout=float(rng.choice(_SEARCH_DROPOUT)),
        )
        model = train_population(patients, one_seed, net)[0]
        trials.append(
            {
                "trial": i,
                "config": net,
                "val_loss": model.best_val_loss,
            }
        )
        if best is None or model.best_val_loss < best[0]:
            best = (model.best_val_loss, net)
    return HyperSearchResult(net=best[1], val_loss=best[0], trials=trials)
