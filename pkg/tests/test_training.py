"""Training tests: optimizer math against reference formulas, schedule
and early-stop bookkeeping, the shared loop's snapshot semantics, and
the three regimes.
"""

import math

import numpy as np
import pytest

from glucast.cgm import GlucoseSeries, fit_standardizer, standardize
from glucast.lstm import NetworkConfig, init_params, rollout
from glucast.synth import SynthProfile, generate_patient
from glucast.training import (
    DEFAULT_WINNER,
    MomentumState,
    RAdamState,
    ScheduleState,
    TrainConfig,
    TrainingError,
    WindowBatch,
    _chronological_split,
    build_window_batch,
    early_stop,
    ensemble_predict,
    finetune_patient,
    hyper_search,
    plateau_schedule,
    radam_step,
    sgd_momentum_step,
    split_validation_patients,
    train_patient_scratch,
    train_population,
)

BETA1, BETA2 = 0.9, 0.999


def first_rectified_step(beta2=BETA2):
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    t = 0
    while True:
        t += 1
        b2t = beta2**t
        if rho_inf - 2.0 * t * b2t / (1.0 - b2t) > 4.0:
            return t


def constant_grads(params, value):
    grads = params.zeros_like()
    for g in grads.tensors():
        g += value
    return grads


# ---------------------------------------------------------------------------
# RAdam
# ---------------------------------------------------------------------------


def test_radam_unrectified_steps_are_plain_momentum(tiny_params):
    """With constant gradients, m_t / bias1 = g, so every pre-rectification
    step moves parameters by exactly lr * g."""
    params = tiny_params.copy()
    state = RAdamState.init(params, lr=1e-2)
    t_star = first_rectified_step()
    assert t_star == 5  # for beta2 = 0.999
    grads = constant_grads(params, 1.0)
    for t in range(1, t_star):
        before = [p.copy() for p in params.tensors()]
        radam_step(params, grads, state)
        for b, a in zip(before, params.tensors()):
            np.testing.assert_allclose(a, b - 1e-2, rtol=0, atol=1e-15)
    # The first rectified step shrinks the move (r_t < 1).
    before = [p.copy() for p in params.tensors()]
    radam_step(params, grads, state)
    delta = float(np.max(np.abs(before[0] - next(iter(params.tensors())))))
    assert delta < 1e-2 * 0.999


def test_radam_matches_reference_trajectory(tiny_params, rng):
    """Step-by-step agreement with an independently coded update rule."""
    params = tiny_params.copy()
    state = RAdamState.init(params, lr=3e-3)
    ref = [p.copy() for p in params.tensors()]
    m = [np.zeros_like(p) for p in ref]
    v = [np.zeros_like(p) for p in ref]
    rho_inf = 2.0 / (1.0 - BETA2) - 1.0
    for t in range(1, 13):
        gs = [rng.normal(size=p.shape) for p in ref]
        grads = params.zeros_like()
        for buf, g in zip(grads.tensors(), gs):
            buf += g
        radam_step(params, grads, state)
        for i, g in enumerate(gs):
            m[i] = BETA1 * m[i] + (1 - BETA1) * g
            v[i] = BETA2 * v[i] + (1 - BETA2) * g * g
            mhat = m[i] / (1 - BETA1**t)
            rho_t = rho_inf - 2 * t * BETA2**t / (1 - BETA2**t)
            if rho_t > 4.0:
                r = math.sqrt(
                    (rho_t - 4) * (rho_t - 2) * rho_inf
                    / ((rho_inf - 4) * (rho_inf - 2) * rho_t)
                )
                vhat = np.sqrt(v[i] / (1 - BETA2**t))
                ref[i] -= 3e-3 * r * mhat / (vhat + 1e-8 / math.sqrt(1 - BETA2**t))
            else:
                ref[i] -= 3e-3 * mhat
        for got, want in zip(params.tensors(), ref):
            np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-12)


def test_radam_converges_on_quadratic(tiny_params):
    """Minimize 0.5||w||^2: gradients are the parameters themselves."""
    params = tiny_params.copy()
    for g in params.tensors():
        g += 0.5  # shift away from near-zero init
    state = RAdamState.init(params, lr=0.05)
    for _ in range(400):
        grads = params.zeros_like()
        for buf, p in zip(grads.tensors(), params.tensors()):
            buf += p
        radam_step(params, grads, state)
    assert max(float(np.abs(p).max()) for p in params.tensors()) < 1e-3


def test_radam_rejects_nonfinite_gradients(tiny_params):
    params = tiny_params.copy()
    state = RAdamState.init(params)
    grads = params.zeros_like()
    next(iter(grads.tensors()))[0] = np.nan
    with pytest.raises(TrainingError, match="non-finite gradient"):
        radam_step(params, grads, state)


# ---------------------------------------------------------------------------
# SGD with momentum
# ---------------------------------------------------------------------------


def test_sgd_momentum_two_step_example(tiny_params):
    params = tiny_params.copy()
    zero = [np.zeros_like(p) for p in params.tensors()]
    for p in params.tensors():
        p *= 0.0
    state = MomentumState.init(params, lr=0.1, momentum=0.9)
    grads = constant_grads(params, 2.0)
    sgd_momentum_step(params, grads, state)
    # v1 = 2, w1 = -0.2
    for p, z in zip(params.tensors(), zero):
        np.testing.assert_allclose(p, z - 0.2, atol=1e-15)
    sgd_momentum_step(params, grads, state)
    # v2 = 0.9*2 + 2 = 3.8, w2 = -0.2 - 0.38 = -0.58
    for p, z in zip(params.tensors(), zero):
        np.testing.assert_allclose(p, z - 0.58, atol=1e-15)


def test_sgd_momentum_velocity_asymptote(tiny_params):
    """Constant gradient g drives velocity to g / (1 - mu) = 10 g."""
    params = tiny_params.copy()
    state = MomentumState.init(params, lr=1e-6, momentum=0.9)
    grads = constant_grads(params, 1.0)
    for _ in range(300):
        sgd_momentum_step(params, grads, state)
    assert state.v[0].flat[0] == pytest.approx(10.0, rel=1e-3)


def test_sgd_rejects_nonfinite_gradients(tiny_params):
    params = tiny_params.copy()
    state = MomentumState.init(params)
    grads = constant_grads(params, np.inf)
    with pytest.raises(TrainingError):
        sgd_momentum_step(params, grads, state)


# ---------------------------------------------------------------------------
# Plateau schedule and early stopping
# ---------------------------------------------------------------------------


def run_schedule(losses, lr=1.0, plateau=10, stop=20):
    """Canonical per-epoch order: plateau_schedule, then early_stop."""
    state = ScheduleState(lr=lr, plateau_patience=plateau, stop_patience=stop)
    lrs, stops = [], []
    for loss in losses:
        lrs.append(plateau_schedule(state, loss))
        stops.append(early_stop(state, loss))
    return state, lrs, stops


def test_plateau_flat_sequence_reduces_at_patience():
    # One improving epoch, then flat: the 10th bad epoch divides lr by 10.
    state, lrs, stops = run_schedule([1.0] + [1.0] * 10)
    assert lrs[:10] == [1.0] * 10
    assert lrs[10] == pytest.approx(0.1)
    assert state.bad_lr == 0  # reset by the reduction


def test_plateau_two_reductions_and_stop_at_20():
    state, lrs, stops = run_schedule([1.0] + [1.0] * 20)
    assert lrs[10] == pytest.approx(0.1)
    assert lrs[20] == pytest.approx(0.01)
    assert stops[:20] == [False] * 20
    assert stops[20] is True
    assert state.bad_stop == 20


def test_lr_reduction_does_not_reset_stop_counter():
    state = ScheduleState(lr=1.0)
    plateau_schedule(state, 1.0)
    early_stop(state, 1.0)
    for _ in range(10):
        plateau_schedule(state, 1.0)
        early_stop(state, 1.0)
    assert state.lr == pytest.approx(0.1)
    assert state.bad_stop == 10  # survived the reduction


def test_improvement_resets_both_counters():
    state = ScheduleState(lr=1.0)
    for loss in [1.0, 1.0, 1.0, 1.0]:
        plateau_schedule(state, loss)
        early_stop(state, loss)
    assert state.bad_lr == 3 and state.bad_stop == 3
    plateau_schedule(state, 0.5)
    early_stop(state, 0.5)
    assert state.bad_lr == 0 and state.bad_stop == 0
    assert state.best == 0.5


def test_early_stop_exactly_20_after_last_improvement():
    losses = [1.0, 0.9, 0.8, 0.7, 0.6] + [0.6] * 25
    state, lrs, stops = run_schedule(losses)
    assert stops.index(True) == 24  # epoch 5 improved last; 20 bad epochs later
    # Ties (equal loss) do not count as improvement.
    assert state.best == 0.6


# ---------------------------------------------------------------------------
# Window batches
# ---------------------------------------------------------------------------


def std_series(values, pid="p001"):
    from datetime import datetime, timezone

    return GlucoseSeries(
        pid, datetime(2026, 1, 1, tzinfo=timezone.utc),
        np.asarray(values, dtype=np.float64), standardized=True,
    )


def test_build_window_batch_targets_shift_by_one():
    series = std_series([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    batch = build_window_batch(series, k=4, step=1)
    np.testing.assert_array_equal(batch.values[0], [1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(batch.targets[0], [2.0, 3.0, 4.0, 5.0])
    assert batch.target_mask.all()
    assert len(batch) == 2


def test_build_window_batch_masks_missing_origin():
    series = std_series([1.0, 2.0, 3.0, 4.0, np.nan, 6.0])
    batch = build_window_batch(series, k=4, step=1)
    # Only the fully present window [0:4] survives; its origin target is NaN.
    assert len(batch) == 1
    np.testing.assert_array_equal(batch.target_mask[0], [True, True, True, False])
    assert batch.targets[0][3] == 0.0  # masked targets zeroed, not NaN


def test_chronological_split_fraction():
    batch = WindowBatch(
        np.arange(40.0).reshape(10, 4),
        np.zeros((10, 4)),
        np.ones((10, 4), dtype=bool),
    )
    train, val = _chronological_split(batch, 0.1)
    assert len(train) == 9 and len(val) == 1
    assert val.values[0, 0] == 36.0  # the latest window validates
    lone = batch.take(slice(0, 1))
    t2, v2 = _chronological_split(lone, 0.1)
    assert len(t2) == 1 and len(v2) == 1  # degenerate slice reused


# ---------------------------------------------------------------------------
# Regimes on tiny cohorts
# ---------------------------------------------------------------------------

TINY_NET = NetworkConfig(n_layers=1, hidden=8, mlp_hidden=8, window=8, dropout=0.0)
FAST = TrainConfig(max_epochs=3, window_step=24, seeds=(0,), chunk_size=32)


def mini_cohort(n=4, days=1, seed=0):
    out = []
    for i in range(n):
        profile = SynthProfile(days=days, seed=seed + i, gap_rate=0.0)
        out.append(generate_patient(profile, patient_id=f"p{i + 1:03d}"))
    return out


def test_split_validation_patients_ratios():
    ids = [f"p{i:03d}" for i in range(35)]
    grad, val = split_validation_patients(ids)
    assert len(grad) == 30 and len(val) == 5
    assert val == ids[-5:]  # last of sorted order validate
    grad, val = split_validation_patients(["d", "c", "b", "a"])
    assert grad == ["a", "b", "c"] and val == ["d"]
    with pytest.raises(TrainingError):
        split_validation_patients(["only"])


def test_train_population_basics():
    cohort = mini_cohort(4)
    models = train_population(cohort, FAST, net=TINY_NET)
    assert len(models) == 1
    m = models[0]
    assert m.regime == "population" and m.seed == 0
    assert m.epochs_run <= FAST.max_epochs
    assert math.isfinite(m.best_val_loss)
    # Log starts with the untrained epoch-0 baseline.
    assert m.epoch_log[0]["epoch"] == 0
    assert m.epoch_log[0]["train_loss"] is None
    # The snapshot is the best epoch, not necessarily the last.
    assert m.best_val_loss == min(e["val_loss"] for e in m.epoch_log)
    # Standardizer comes from the raw cohort.
    params = fit_standardizer(cohort)
    assert m.standardizer == params


def test_train_population_deterministic():
    cohort = mini_cohort(3)
    a = train_population(cohort, FAST, net=TINY_NET)[0]
    b = train_population(cohort, FAST, net=TINY_NET)[0]
    for ta, tb in zip(a.params.tensors(), b.params.tensors()):
        np.testing.assert_array_equal(ta, tb)
    assert a.best_val_loss == b.best_val_loss


def test_train_population_one_model_per_seed():
    cohort = mini_cohort(3)
    config = TrainConfig(max_epochs=1, window_step=48, seeds=(0, 1))
    models = train_population(cohort, config, net=TINY_NET)
    assert [m.seed for m in models] == [0, 1]
    assert not np.array_equal(
        next(iter(models[0].params.tensors())),
        next(iter(models[1].params.tensors())),
    )


def test_train_population_rejects_duplicates():
    cohort = mini_cohort(2)
    with pytest.raises(TrainingError, match="duplicate"):
        train_population(cohort + [cohort[0]], FAST, net=TINY_NET)


def test_harmful_training_returns_untrained_baseline():
    """A destructive learning rate must not beat the epoch-0 snapshot."""
    cohort = mini_cohort(3)
    config = TrainConfig(max_epochs=2, window_step=24, seeds=(0,), lr=1e3)
    model = train_population(cohort, config, net=TINY_NET)[0]
    assert model.best_val_loss == model.epoch_log[0]["val_loss"]
    init = init_params(0, TINY_NET)
    for got, want in zip(model.params.tensors(), init.tensors()):
        np.testing.assert_array_equal(got, want)


def test_finetune_patient_runs_and_tags():
    cohort = mini_cohort(3)
    pretrained = train_population(cohort, FAST, net=TINY_NET)[0]
    patient = generate_patient(SynthProfile(days=1, seed=99, gap_rate=0.0), "pX")
    tuned = finetune_patient(pretrained, patient, FAST)
    assert tuned.regime == "finetuned"
    assert not tuned.fallback
    assert tuned.standardizer == pretrained.standardizer  # population stats reused
    assert tuned.epochs_run >= 1


def test_finetune_fallback_on_empty_slice():
    cohort = mini_cohort(3)
    pretrained = train_population(cohort, FAST, net=TINY_NET)[0]
    empty = GlucoseSeries(
        "pX", cohort[0].start_time, np.full(288, np.nan), standardized=False
    )
    tuned = finetune_patient(pretrained, empty, FAST)
    assert tuned.fallback and tuned.epochs_run == 0
    assert math.isnan(tuned.best_val_loss)
    for got, want in zip(tuned.params.tensors(), pretrained.params.tensors()):
        np.testing.assert_array_equal(got, want)


def test_scratch_patient_trains_with_own_standardizer():
    patient = generate_patient(SynthProfile(days=1, seed=42, gap_rate=0.0), "pY")
    model = train_patient_scratch(patient, FAST, net=TINY_NET, seed=1)
    assert model.regime == "scratch" and model.seed == 1
    assert model.standardizer == fit_standardizer([patient])


def test_scratch_errors_on_empty_slice():
    # Two isolated readings: standardizable, but no full window anywhere.
    vals = np.full(288, np.nan)
    vals[0], vals[100] = 5.0, 6.0
    sparse = GlucoseSeries(
        "pZ", generate_patient(SynthProfile(days=1), "t").start_time, vals
    )
    with pytest.raises(TrainingError, match="no valid training windows"):
        train_patient_scratch(sparse, FAST, net=TINY_NET)


# ---------------------------------------------------------------------------
# Ensembling
# ---------------------------------------------------------------------------


def test_ensemble_is_mean_of_member_rollouts():
    cohort = mini_cohort(3)
    config = TrainConfig(max_epochs=1, window_step=48, seeds=(0, 1, 2))
    models = train_population(cohort, config, net=TINY_NET)
    window = np.linspace(-0.5, 0.5, TINY_NET.window)
    combined = ensemble_predict(models, window, steps=18)
    singles = np.stack(
        [rollout(m.params, window[None, :], 18)[0] for m in models]
    )
    np.testing.assert_allclose(combined, singles.mean(axis=0), atol=1e-15)
    assert combined.shape == (18,)


def test_ensemble_rejects_mixed_members():
    cohort = mini_cohort(3)
    model = train_population(cohort, FAST, net=TINY_NET)[0]
    other = train_patient_scratch(
        generate_patient(SynthProfile(days=1, seed=7, gap_rate=0.0), "pQ"),
        FAST, net=TINY_NET,
    )
    with pytest.raises(ValueError, match="standardizer"):
        ensemble_predict([model, other], np.zeros(TINY_NET.window))
    with pytest.raises(ValueError, match="at least one"):
        ensemble_predict([], np.zeros(TINY_NET.window))


# ---------------------------------------------------------------------------
# Architecture search
# ---------------------------------------------------------------------------


def test_hyper_search_budget_zero_returns_default():
    result = hyper_search([], TrainConfig(), budget=0)
    assert result.net == DEFAULT_WINNER
    assert result.val_loss is None and result.trials == []
    assert DEFAULT_WINNER.mlp_hidden == DEFAULT_WINNER.hidden


def test_hyper_search_small_budget_deterministic():
    cohort = mini_cohort(3)
    config = TrainConfig(max_epochs=1, window_step=96, seeds=(0, 1, 2))
    a = hyper_search(cohort, config, budget=2, seed=3)
    b = hyper_search(cohort, config, budget=2, seed=3)
    assert a.net == b.net and a.val_loss == b.val_loss
    assert len(a.trials) == 2
    for trial in a.trials:
        net = trial["config"]
        assert net.mlp_hidden == net.hidden  # tied in the search grid
        assert net.hidden in (32, 64, 128)
        assert net.window in (12, 24, 36)
    assert a.val_loss == min(t["val_loss"] for t in a.trials)
    with pytest.raises(ValueError):
        hyper_search(cohort, config, budget=-1)


# ---------------------------------------------------------------------------
# TrainConfig validation
# ---------------------------------------------------------------------------


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="adamw")
    with pytest.raises(ValueError):
        TrainConfig(window_step=0)
    with pytest.raises(ValueError):
        TrainConfig(plateau_patience=0)
