"""Pytest configuration for windtraj tests."""

import numpy as np
import pandas as pd
import pytest

from windtraj.ingest import ForecastCase
from windtraj.synth import SynthConfig, generate


@pytest.fixture
def rng():
    return np.random.default_rng(20120101)


@pytest.fixture
def small_cases():
    """Forty synthetic days with T = 6."""
    return generate(SynthConfig(T=6, n_days=40, seed=7))


@pytest.fixture
def scalar_cases():
    """Synthetic cases with T = 1."""
    return generate(SynthConfig(T=1, n_days=60, seed=11))


@pytest.fixture
def make_case():
    def _make(day, x_w, y=None):
        init_time = pd.Timestamp("2012-01-01", tz="UTC") + pd.Timedelta(days=day)
        return ForecastCase(init_time, np.asarray(x_w, dtype=float), y)

    return _make
