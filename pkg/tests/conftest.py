"""Shared builders for the test suite.

Everything here constructs small, deterministic fixtures; the heavyweight
study runs live only in the acceptance tests.
"""

import numpy as np
import pytest

from vfmlab import (
    MechanisticParams,
    Source,
    WellDataset,
    WellScenario,
    generate_stream,
)

SECONDS_PER_DAY = 86400.0


def make_x(u=0.5, p1=150e5, p2=100e5, T1=350.0, eta_oil=0.3, eta_gas=0.6):
    return np.array([u, p1, p2, T1, eta_oil, eta_gas], dtype=np.float64)


def make_dataset(n=20, well_id=1, seed=0, t0=0.0, dt=3600.0):
    """Physically valid random rows, strictly increasing timestamps."""
    rng = np.random.default_rng(seed)
    t = t0 + dt * np.arange(n)
    X = np.column_stack([
        rng.uniform(0.1, 0.9, n),
        rng.uniform(120e5, 200e5, n),
        rng.uniform(60e5, 110e5, n),
        rng.uniform(320, 370, n),
        rng.uniform(0.1, 0.4, n),
        rng.uniform(0.2, 0.5, n),
    ])
    y = rng.uniform(10.0, 200.0, n)
    source = (np.arange(n) % 7 == 6).astype(np.uint8)
    return WellDataset(t, X, y, source, np.full(n, well_id, dtype=np.int64))


def quiet_scenario(**kw):
    """Stationary, noiseless scenario; overrides via kwargs."""
    base = dict(
        horizon_days=30,
        obs_per_day=1.0,
        p1_start=1.8e8 / 10,
        p1_end=1.8e8 / 10,
        p2_start=9e6,
        p2_end=9e6,
        u_profile=((0.0, 0.5),),
        fraction_drift={},
        true_params=MechanisticParams(),
        noise_std_mpfm=0.0,
        noise_std_welltest=0.0,
        welltest_interval_days=10.0,
        real_drift_events=(),
        seed=0,
        well_id=1,
        u_jitter=0.0,
        p_jitter_rel=0.0,
        temp_jitter=0.0,
        frac_jitter=0.0,
    )
    base.update(kw)
    return WellScenario(**base)


@pytest.fixture
def tiny_stream():
    return generate_stream(quiet_scenario())


def count_sources(ds: WellDataset):
    mpfm = int(np.sum(ds.source == int(Source.MPFM)))
    wt = int(np.sum(ds.source == int(Source.WELLTEST)))
    return mpfm, wt
