"""Shared fixtures: tiny deterministic cohorts and network configs."""

import numpy as np
import pytest

from glucast.lstm import NetworkConfig, init_params
from glucast.synth import SynthProfile, make_cohort


@pytest.fixture(scope="session")
def tiny_net() -> NetworkConfig:
    return NetworkConfig(n_layers=2, hidden=6, mlp_hidden=6, window=8)


@pytest.fixture(scope="session")
def tiny_params(tiny_net):
    return init_params(0, tiny_net)


@pytest.fixture(scope="session")
def small_cohort():
    """Six 14-day patients; enough for partition + both split sides."""
    return make_cohort(n_patients=6, template=SynthProfile(days=14), seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
