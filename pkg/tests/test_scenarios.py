import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swingtune.scenarios import (
    InvalidParams, OuDemandScenario, RandomModesScenario, ScenarioSet, SeedCollision, gen_ou_demand,
    gen_random_modes, generate, ou_path, resample, _stream,
)


def test_modes_single_cosine():
    s = RandomModesScenario([1.0], [0.0])
    t = np.linspace(0, 10, 101)
    assert np.allclose(s.fluct(t), np.cos(t), atol=1e-15)


def test_modes_at_zero_sums_amplitudes():
    s = RandomModesScenario([0.1, -0.3, 0.25], [0.0, 0.0, 0.0])
    assert s.fluct(0.0) == pytest.approx(0.05)


def test_modes_at_pi():
    s = RandomModesScenario([1.0, 1.0], [0.0, 0.0])
    assert s.fluct(math.pi) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**63 - 1), t=st.floats(-1e3, 1e3))
def test_modes_bounded_by_amplitude_sum(seed, t):
    s = gen_random_modes(seed, 1)[0]
    assert abs(s.fluct(t)) <= np.sum(np.abs(s.amplitudes)) + 1e-15


def test_modes_small_amplitude_limit():
    s = gen_random_modes(1, 1, amp_scale=1e-300)[0]
    assert np.max(np.abs(s.fluct(np.linspace(0, 50, 500)))) < 1e-290


def test_modes_distribution_ranges():
    sset = gen_random_modes(11, 50, n_freq=10, amp_scale=0.05)
    a = np.concatenate([s.amplitudes for s in sset])
    p = np.concatenate([s.phases for s in sset])
    assert a.min() >= -0.05 and a.max() <= 0.05
    assert p.min() >= 0 and p.max() < 2 * np.pi
    assert all(s.amplitudes.size == 10 for s in sset)


def test_modes_deterministic():
    a = gen_random_modes(7, 5, 10, 0.05)
    b = gen_random_modes(7, 5, 10, 0.05)
    for x, y in zip(a, b):
        assert np.array_equal(x.amplitudes, y.amplitudes)
        assert np.array_equal(x.phases, y.phases)


def test_scenario_streams_are_order_independent():
    # scenario k depends only on (seed, k): a prefix of a bigger set is identical
    small = gen_random_modes(3, 2)
    big = gen_random_modes(3, 6)
    assert np.array_equal(small[1].amplitudes, big[1].amplitudes)
    assert not np.array_equal(big[0].amplitudes, big[1].amplitudes)


def test_invalid_modes_params():
    with pytest.raises(InvalidParams):
        gen_random_modes(0, 0)
    with pytest.raises(InvalidParams):
        gen_random_modes(0, 1, amp_scale=0.0)


# OU demand -----------------------------------------------------------------

def test_ou_zero_noise_is_offset():
    sset = gen_ou_demand(1, 2, gamma=1.0, eps=0.0, mu_mb=0.05, horizon=5.0)
    for s in sset:
        assert np.all(s.path == 0)
        assert np.allclose(s.fluct(np.linspace(0, 5, 50)), 0.05)


def test_ou_fluct_never_below_offset():
    s = gen_ou_demand(2, 1, gamma=1.0, eps=0.5, mu_mb=0.05, horizon=20.0)[0]
    assert np.all(s.fluct(np.linspace(0, 20, 4001)) >= 0.05)


def test_ou_stationary_variance():
    # analytic stationary variance eps^2 / (2 gamma) = 0.5; T = 2e4 s keeps the
    # sampling error near 1 %
    x = ou_path(_stream(2024, 0, 0), gamma=1.0, eps=1.0, dt=1e-2, n_steps=2_000_000)
    assert abs(np.var(x[1000:]) - 0.5) / 0.5 < 0.05


def test_ou_long_run_mean_and_autocorrelation():
    gamma, dt = 1.0, 1e-2
    taus = (0.5, 1.0, 2.0, 3.0)
    acc = np.zeros(len(taus))
    means = []
    chunks = 5
    for k in range(chunks):
        x = ou_path(_stream(9, k, 0), gamma, 1.0, dt, 10_000_000)[1000:]
        means.append(np.mean(x))
        x = x - x.mean()
        var = x @ x / x.size
        for i, tau in enumerate(taus):
            lag = int(round(tau / dt))
            acc[i] += (x[:-lag] @ x[lag:]) / (x.size - lag) / var / chunks
        del x
    assert abs(np.mean(means)) < 0.05 * math.sqrt(0.5)
    for tau, rho in zip(taus, acc):
        assert abs(rho - math.exp(-gamma * tau)) <= 0.1 * math.exp(-gamma * tau), tau


def test_ou_interpolation_between_samples():
    s = OuDemandScenario(1.0, 1.0, 0.0, 0.5, np.array([[0.0, 1.0, 3.0]]))
    assert s.fluct(0.25) == pytest.approx(0.5)
    assert s.fluct(0.75) == pytest.approx(2.0)


def test_ou_process_count():
    s = gen_ou_demand(3, 1, horizon=1.0)[0]
    assert s.n_processes == 3


@pytest.mark.parametrize("kw", [dict(gamma=0.0), dict(gamma=-1.0), dict(gamma=1.0, dt=1.0),
                                dict(gamma=200.0, dt=0.01)])
def test_ou_invalid_params(kw):
    with pytest.raises(InvalidParams):
        gen_ou_demand(0, 1, horizon=1.0, **kw)


# sets, resampling, serialization -------------------------------------------

def test_resample_keeps_size_and_params():
    a = gen_ou_demand(5, 4, horizon=2.0)
    b = resample(a, 6)
    assert len(b) == len(a) and b.params == a.params and b.kind == a.kind
    assert not np.array_equal(a[0].path, b[0].path)


def test_resample_modes_differ():
    a = gen_random_modes(5, 3)
    b = resample(a, 99)
    assert b.params == a.params
    assert not np.array_equal(a[0].amplitudes, b[0].amplitudes)


def test_resample_seed_collision():
    with pytest.raises(SeedCollision):
        resample(gen_random_modes(5, 1), 5)


@pytest.mark.parametrize("kind", ["modes", "demand"])
def test_json_round_trip_is_exact(kind):
    params = {"horizon": 3.0} if kind == "demand" else {}
    a = generate(kind, 12, 3, **params)
    b = ScenarioSet.from_json(a.to_json())
    t = np.linspace(0, 3, 97)
    for x, y in zip(a, b):
        assert np.array_equal(x.fluct(t), y.fluct(t))
    assert b.to_json() == a.to_json()


def test_large_seed_supported():
    a = gen_random_modes(2**64 - 1, 1)
    assert a[0].amplitudes.size == 10
