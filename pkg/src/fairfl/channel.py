"""Wireless link model between a device and the access point.

Path loss plus Rayleigh block fading, Shannon-type rate with a modulation
gap, and the computation/transmission energy of one round. All quantities
are linear SI units (W, Hz, s, bit, J).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 3.0e8


class InfeasibleTransmission(ValueError):
    """Raised when a link cannot carry any data (zero rate)."""


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class RadioConstants:
    path_loss_exponent: float = 4.0
    center_frequency: float = 32e6
    modulation_gap: float = db_to_linear(9.8)
    noise_density: float = dbm_to_watt(-174.0)  # W/Hz
    amplifier_efficiency: float = 0.45
    rayleigh_scale: float = 1.0

    def __post_init__(self):
        if self.path_loss_exponent < 2:
            raise ValueError("path_loss_exponent must be >= 2")
        if self.center_frequency <= 0:
            raise ValueError("center_frequency must be positive")
        if self.modulation_gap < 1:
            raise ValueError("modulation_gap must be >= 1 (linear)")
        if not 0 < self.amplifier_efficiency <= 1:
            raise ValueError("amplifier_efficiency must lie in (0, 1]")
        if self.noise_density <= 0 or self.rayleigh_scale <= 0:
            raise ValueError("noise_density and rayleigh_scale must be positive")

    @property
    def path_loss_factor(self) -> float:
        """Free-space factor (c / (4 pi f_c))^2."""
        return (SPEED_OF_LIGHT / (4.0 * math.pi * self.center_frequency)) ** 2


@dataclass(frozen=True)
class DeviceProfile:
    id: int
    dataset_size: int
    time_per_sample: float  # s
    compute_power: float  # W
    circuit_power: float  # W
    bandwidth: float  # Hz
    distance: float  # m
    p_max: float  # W
    j_min: int
    j_max_cap: int

    def __post_init__(self):
        for name in ("dataset_size", "time_per_sample", "compute_power", "circuit_power",
                     "bandwidth", "distance", "p_max", "j_min", "j_max_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"DeviceProfile.{name} must be strictly positive")
        if self.j_min > self.j_max_cap:
            raise ValueError("j_min exceeds j_max_cap")

    @property
    def iteration_time(self) -> float:
        """Seconds for one local pass over the dataset."""
        return self.dataset_size * self.time_per_sample


@dataclass(frozen=True)
class ChannelRealization:
    gain: float  # |h_k|^2
    awgn_variance: float  # W

    def __post_init__(self):
        if self.gain < 0 or self.awgn_variance <= 0:
            raise ValueError("invalid channel realization")


def sample_channel(profile: DeviceProfile, constants: RadioConstants,
                   rng: np.random.Generator) -> ChannelRealization:
    gain = float(rng.exponential(constants.rayleigh_scale))
    return ChannelRealization(gain, constants.noise_density * profile.bandwidth)


def snr_per_watt(real: ChannelRealization, profile: DeviceProfile,
                 constants: RadioConstants) -> float:
    """Received SNR per watt of transmit power, after the modulation gap."""
    return (constants.path_loss_factor * real.gain
            / (real.awgn_variance * profile.distance ** constants.path_loss_exponent
               * constants.modulation_gap))


def transmission_rate(power: float, real: ChannelRealization, profile: DeviceProfile,
                      constants: RadioConstants) -> float:
    if power < 0:
        raise ValueError("transmit power must be non-negative")
    return profile.bandwidth * math.log1p(snr_per_watt(real, profile, constants) * power) / math.log(2)


def transmission_time(rate: float, payload_bits: float) -> float:
    if rate <= 0:
        raise InfeasibleTransmission("link rate is zero")
    return payload_bits / rate


def tx_power_cost(power: float, profile: DeviceProfile, constants: RadioConstants) -> float:
    """Power drawn from the battery while transmitting at `power`."""
    if power < 0:
        raise ValueError("transmit power must be non-negative")
    return power / constants.amplifier_efficiency + profile.circuit_power


def compute_energy(iterations: float, profile: DeviceProfile) -> float:
    return iterations * profile.iteration_time * profile.compute_power


def transmit_energy(power: float, real: ChannelRealization, profile: DeviceProfile,
                    constants: RadioConstants, payload_bits: float) -> float:
    rate = transmission_rate(power, real, profile, constants)
    return transmission_time(rate, payload_bits) * tx_power_cost(power, profile, constants)


def total_energy(iterations: float, power: float, real: ChannelRealization,
                 profile: DeviceProfile, constants: RadioConstants,
                 payload_bits: float) -> float:
    return (compute_energy(iterations, profile)
            + transmit_energy(power, real, profile, constants, payload_bits))
