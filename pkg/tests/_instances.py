"""Random feasible device/channel instances shared by the policy tests."""

import math

import numpy as np

from fairfl.channel import ChannelRealization, DeviceProfile, RadioConstants
from fairfl.localtrain import LearningTask
from fairfl.policy import InfeasibleRound, LinkBudget, UtilityModelParams, feasible_j_range

CONSTANTS = RadioConstants()
TASK = LearningTask("logistic", 0.05, 0.05, 1.0, 1.0, 1.0)


def random_instance(rng: np.random.Generator):
    """(params, profile, realization, delay_bound, payload) drawn until feasible."""
    while True:
        prof = DeviceProfile(
            id=0,
            dataset_size=int(rng.integers(100, 1000)),
            time_per_sample=1e-5,
            compute_power=0.096,
            circuit_power=0.0825,
            bandwidth=250e3,
            distance=float(rng.uniform(50, 200)),
            p_max=1.0,
            j_min=int(rng.integers(1, 50)),
            j_max_cap=10_000,
        )
        real = ChannelRealization(float(rng.exponential(1.0)),
                                  CONSTANTS.noise_density * prof.bandwidth)
        params = UtilityModelParams(float(rng.uniform(0.05, 1.0)),
                                    float(math.exp(rng.uniform(math.log(1e-3), 0.0))),
                                    float(rng.uniform(0.1, 1.0)))
        T = float(rng.uniform(0.3, 1.5))
        V = 875e3
        link = LinkBudget.build(prof, real, CONSTANTS, T, V)
        try:
            feasible_j_range(link)
        except InfeasibleRound:
            continue
        return params, prof, real, T, V
