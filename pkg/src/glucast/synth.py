"""Seeded synthetic CGM cohorts with known structure.

Real CGM data cannot ship with the repository, so every pipeline stage
is exercised against generated patients: a baseline glucose level, a
circadian sinusoid, meal excursions (instant rise, exponential decay),
AR(1) sensor noise, and a run-length gap process.  Everything is a pure
function of (profile, seed).

Randomness comes from numpy's default_rng (PCG64) with SeedSequence
spawning for per-patient streams.  That choice is part of the data
contract: golden-file tests freeze the exact output, so swapping the
generator is a breaking change.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import datetime, timezone

import numpy as np

from . import kernels
from .cgm import SLOTS_PER_DAY, GlucoseSeries

# Physiological sensor range in mmol/L; generated values are clipped here.
CLIP_LOW = 2.2
CLIP_HIGH = 22.2

# All synthetic series start at the same (arbitrary) midnight UTC.
COHORT_EPOCH = datetime(2024, 3, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class SynthProfile:
    """Generator knobs for one synthetic patient."""

    baseline: float = 7.0
    circ_amplitude: float = 1.2
    circ_phase: float = 0.0
    meals_per_day: int = 3
    meal_magnitude: float = 4.0
    meal_decay_slots: float = 12.0
    ar_coef: float = 0.8
    ar_sigma: float = 0.35
    gap_rate: float = 0.002
    gap_mean_len: float = 12.0
    days: int = 14
    seed: int = 0

    def __post_init__(self) -> None:
        if self.baseline <= 0:
            raise ValueError("baseline must be positive")
        if not 0.0 <= self.gap_rate < 1.0:
            raise ValueError("gap_rate must lie in [0, 1)")
        if self.days < 1:
            raise ValueError("days must be at least 1")
        if self.gap_mean_len < 1.0:
            raise ValueError("gap_mean_len must be at least 1 slot")
        if self.meal_decay_slots <= 0:
            raise ValueError("meal_decay_slots must be positive")
        if self.meals_per_day < 0:
            raise ValueError("meals_per_day must be non-negative")


def _ar_spectral_radius_ok(phi: np.ndarray) -> bool:
    """True when the AR polynomial has all roots strictly outside |z|=1."""
    if len(phi) == 0 or not np.any(phi):
        return True
    poly = np.concatenate(([1.0], -phi))[::-1]
    roots = np.roots(poly)
    return bool(np.all(np.abs(roots) > 1.0 + 1e-9))


def generate_arma(
    phi,
    theta,
    c: float = 0.0,
    sigma: float = 1.0,
    n: int = 1000,
    seed: int = 0,
    x0: float | None = None,
) -> np.ndarray:
    """Seeded ARMA sample of length n.

    Gaussian innovations drive the exact recursion; a burn-in of
    10 (p + q + 1) samples is discarded so the output is approximately
    stationary.  Passing x0 instead pins the first output value (no
    burn-in), which gives deterministic impulse responses when sigma=0.
    """
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if n < 1:
        raise ValueError("n must be at least 1")
    if not _ar_spectral_radius_ok(phi):
        raise ValueError("AR coefficients are not stationary (spectral radius >= 1)")
    burn = 0 if x0 is not None else 10 * (len(phi) + len(theta) + 1)
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, sigma, size=burn + n) if sigma > 0 else np.zeros(burn + n)
    if x0 is not None:
        # Force x_0 = x0 through the first innovation, then recurse.
        eps[0] = x0 - c
    x = kernels.arma_simulate(c, phi, theta, eps)
    return x[burn:]


def generate_patient(profile: SynthProfile, patient_id: str = "synth") -> GlucoseSeries:
    """One grid-aligned series from the additive model.

    value(t) = baseline + circadian sinusoid + meal pulses + AR(1) noise,
    clipped to the sensor range; gaps carved by a seeded run-length
    process.  Draw order (meal slots, meal sizes, innovations, gaps) is
    fixed and frozen by the golden-file test.
    """
    n = profile.days * SLOTS_PER_DAY
    rng = np.random.default_rng(profile.seed)

    t = np.arange(n)
    signal = profile.baseline + profile.circ_amplitude * np.sin(
        2.0 * np.pi * t / SLOTS_PER_DAY + profile.circ_phase
    )

    # Meals land in waking hours (06:00 to 23:00) with jittered size.
    for day in range(profile.days):
        slots = rng.integers(72, 276, size=profile.meals_per_day)
        sizes = profile.meal_magnitude * rng.uniform(0.6, 1.4, size=profile.meals_per_day)
        for slot, size in zip(slots, sizes):
            start = day * SLOTS_PER_DAY + int(slot)
            span = np.arange(n - start)
            signal[start:] += size * np.exp(-span / profile.meal_decay_slots)

    if profile.ar_sigma > 0:
        burn = 50
        eps = rng.normal(0.0, profile.ar_sigma, size=burn + n)
        noise = kernels.arma_simulate(
            0.0, np.array([profile.ar_coef]), np.empty(0), eps
        )[burn:]
        signal = signal + noise

    values = np.clip(signal, CLIP_LOW, CLIP_HIGH)

    if profile.gap_rate > 0:
        i = 0
        while i < n:
            if rng.random() < profile.gap_rate:
                length = int(rng.geometric(1.0 / profile.gap_mean_len))
                values[i : i + length] = np.nan
                i += length
            else:
                i += 1

    return GlucoseSeries(patient_id=patient_id, start_time=COHORT_EPOCH, values=values)


def make_cohort(
    n_patients: int = 50, template: SynthProfile | None = None, seed: int = 0
) -> list[GlucoseSeries]:
    """Cohort of jittered patients; default shape is 50 patients x 14 days.

    Each patient gets an independent child stream of the cohort seed;
    the jitter varies baseline, rhythm, meal size, and noise so patients
    are distinct but share the template's structure.
    """
    if n_patients < 1:
        raise ValueError("n_patients must be at least 1")
    template = template or SynthProfile()
    children = np.random.SeedSequence(seed).spawn(n_patients)
    width = max(3, len(str(n_patients)))
    cohort = []
    for i, child in enumerate(children):
        jit = np.random.default_rng(child)
        profile = replace(
            template,
            baseline=template.baseline + jit.uniform(-1.0, 1.0),
            circ_amplitude=template.circ_amplitude * jit.uniform(0.7, 1.3),
            circ_phase=jit.uniform(0.0, 2.0 * np.pi),
            meal_magnitude=template.meal_magnitude * jit.uniform(0.8, 1.2),
            ar_coef=float(np.clip(template.ar_coef + jit.uniform(-0.08, 0.08), 0.0, 0.95)),
            ar_sigma=template.ar_sigma * jit.uniform(0.8, 1.25),
            seed=int(jit.integers(0, 2**63 - 1)),
        )
        pid = f"p{i + 1:0{width}d}"
        cohort.append(generate_patient(profile, patient_id=pid))
    return cohort
