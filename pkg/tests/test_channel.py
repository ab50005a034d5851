import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairfl.channel import (ChannelRealization, DeviceProfile, InfeasibleTransmission,
                            RadioConstants, compute_energy, db_to_linear, dbm_to_watt,
                            sample_channel, snr_per_watt, total_energy, transmission_rate,
                            transmission_time, tx_power_cost)

C = RadioConstants()


def profile(**kw):
    base = dict(id=0, dataset_size=200, time_per_sample=1e-5, compute_power=0.096,
                circuit_power=0.0825, bandwidth=250e3, distance=50.0, p_max=1.0, j_min=10,
                j_max_cap=10_000)
    base.update(kw)
    return DeviceProfile(**base)


def test_path_loss_factor():
    assert C.path_loss_factor == pytest.approx(0.5566, abs=1e-4)


def test_unit_conversions():
    assert db_to_linear(9.8) == pytest.approx(9.5499, rel=1e-4)
    assert dbm_to_watt(30.0) == pytest.approx(1.0)
    assert dbm_to_watt(-174.0) == pytest.approx(10 ** -20.4)


def test_awgn_variance_is_density_times_bandwidth():
    real = sample_channel(profile(), C, np.random.default_rng(0))
    assert real.awgn_variance == pytest.approx(9.953e-16, rel=1e-3)
    # the same product in milliwatts is the 9.95e-13 figure often quoted
    assert real.awgn_variance * 1e3 == pytest.approx(9.95e-13, rel=1e-3)


def test_rate_example_at_50m():
    real = ChannelRealization(1.0, 9.95e-13)
    r = transmission_rate(1.0, real, profile(), C)
    assert r == pytest.approx(3.30e6, rel=5e-3)
    assert transmission_time(r, 875e3) == pytest.approx(0.265, rel=5e-3)


def test_rate_edge_cases():
    real = ChannelRealization(1.0, 9.95e-13)
    assert transmission_rate(0.0, real, profile(), C) == 0.0
    # doubling bandwidth at fixed SNR doubles the rate
    p1, p2 = profile(), profile(bandwidth=500e3)
    r1 = transmission_rate(0.3, real, p1, C)
    r2 = p2.bandwidth * math.log2(1 + snr_per_watt(real, p1, C) * 0.3)
    assert r2 == pytest.approx(2 * r1, rel=1e-12)
    with pytest.raises(ValueError):
        transmission_rate(-1.0, real, profile(), C)


def test_transmission_time_edges():
    assert transmission_time(3.3e6, 0.0) == 0.0
    with pytest.raises(InfeasibleTransmission):
        transmission_time(0.0, 1.0)


def test_tx_power_cost():
    assert tx_power_cost(0.0, profile(), C) == 0.0825
    assert tx_power_cost(0.45, profile(), C) == pytest.approx(1.0825, rel=1e-12)
    ideal = RadioConstants(amplifier_efficiency=1.0)
    assert tx_power_cost(0.3, profile(circuit_power=1e-300), ideal) == pytest.approx(0.3)


def test_compute_energy_example():
    assert compute_energy(10, profile(dataset_size=1000, time_per_sample=1e-4)) == pytest.approx(0.096)


def test_total_energy_zero_power_is_infeasible():
    real = ChannelRealization(1.0, 9.95e-16)
    with pytest.raises(InfeasibleTransmission):
        total_energy(0, 0.0, real, profile(), C, 875e3)


def test_fading_mean_and_determinism():
    g = [sample_channel(profile(), C, np.random.default_rng(s)).gain for s in range(3)]
    g2 = [sample_channel(profile(), C, np.random.default_rng(s)).gain for s in range(3)]
    assert g == g2
    rng = np.random.default_rng(123)
    draws = np.array([sample_channel(profile(), C, rng).gain for _ in range(100_000)])
    assert abs(draws.mean() - 1.0) < 0.02


@settings(max_examples=10, deadline=None)
@given(p=st.floats(1e-4, 1.0), r=st.floats(50, 200), g=st.floats(0.01, 5.0))
def test_rate_increasing_and_concave(p, r, g):
    real = ChannelRealization(g, C.noise_density * 250e3)
    prof = profile(distance=r)
    h = 1e-3 * p
    f = lambda x: transmission_rate(x, real, prof, C)  # noqa: E731
    assert f(p + h) > f(p) > f(p - h)
    assert f(p + h) - 2 * f(p) + f(p - h) < 0


def test_energy_increasing_in_iterations():
    real = ChannelRealization(1.0, C.noise_density * 250e3)
    e = [total_energy(j, 0.5, real, profile(), C, 875e3) for j in range(1, 50)]
    assert np.all(np.diff(e) > 0)


def test_energy_increasing_in_power_past_efficiency_point():
    real = ChannelRealization(1.0, C.noise_density * 250e3)
    ps = np.linspace(1e-6, 1.0, 2001)
    e = np.array([total_energy(10, p, real, profile(distance=150), C, 875e3) for p in ps])
    k = int(np.argmin(e))
    assert np.all(np.diff(e[k:]) > 0)
    assert np.all(np.diff(e[:k + 1]) < 0)


@pytest.mark.parametrize("kw", [dict(path_loss_exponent=1.5), dict(modulation_gap=0.5),
                                dict(amplifier_efficiency=0.0), dict(center_frequency=0.0)])
def test_radio_validation(kw):
    with pytest.raises(ValueError):
        RadioConstants(**kw)


def test_profile_validation():
    with pytest.raises(ValueError):
        profile(distance=0.0)
    with pytest.raises(ValueError):
        profile(j_min=20, j_max_cap=10)
