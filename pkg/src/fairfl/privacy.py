"""Gaussian mechanism and the access point's contribution-aware downlink noise."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# keeps 1 - E*theta away from zero when theta == 1
MAX_DEVIATION = 0.999


class PrivacyViolation(ValueError):
    """Requested noise scale is below what (epsilon, delta)-DP requires."""


@dataclass(frozen=True)
class DpParams:
    epsilon: float = 0.95
    delta: float = 1e-5
    theta: float = 0.6
    sensitivity: float = 0.01

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 0 <= self.theta <= 1:
            raise ValueError("theta must lie in [0, 1]")
        if self.sensitivity < 0:
            raise ValueError("sensitivity must be non-negative")


def min_sigma(epsilon: float, delta: float) -> float:
    """Smallest Gaussian noise multiplier giving (epsilon, delta)-DP."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def deviation_factors(w_g: np.ndarray, updates: Sequence[np.ndarray]) -> np.ndarray:
    """How far each update points away from the global model, relative to the best one.

    E_k = 1 - sim_k / max_j sim_j. Negative similarities count as 0 so every
    factor stays in [0, 1]; if no update has positive similarity all factors
    are 0.
    """
    if len(updates) == 0:
        raise ValueError("need at least one update")
    sims = np.array([max(cosine_similarity(w_g, h), 0.0) for h in updates])
    best = sims.max()
    if best <= 0.0:
        return np.zeros(len(updates))
    return np.clip(1.0 - sims / best, 0.0, 1.0)


def adaptive_sigma(dp: DpParams, deviation: float) -> float:
    """Downlink noise multiplier inflated by the device's deviation factor."""
    if not 0 <= deviation <= 1:
        raise ValueError("deviation must lie in [0, 1]")
    if dp.theta == 1.0:
        deviation = min(deviation, MAX_DEVIATION)
    return min_sigma(dp.epsilon, dp.delta) / (1.0 - deviation * dp.theta)


def _gaussian(x: np.ndarray, sigma: float, sensitivity: float, floor: float,
              rng: np.random.Generator) -> np.ndarray:
    # relative slack so a sigma computed by the same formula is never rejected
    if sigma < floor * (1.0 - 1e-12):
        raise PrivacyViolation(f"sigma {sigma:.6g} below the DP minimum {floor:.6g}")
    if sensitivity == 0.0:
        return x.copy()
    return x + rng.normal(0.0, sensitivity * sigma, size=x.shape)


def perturb_model(w_g: np.ndarray, sigma_hat: float, sensitivity: float,
                  rng: np.random.Generator, dp: DpParams | None = None) -> np.ndarray:
    """Add N(0, (S_f sigma_hat)^2) noise to every coordinate of the global model.

    When `dp` is given, `sigma_hat` is checked against its minimum multiplier.
    """
    floor = min_sigma(dp.epsilon, dp.delta) if dp is not None else 0.0
    return _gaussian(w_g, sigma_hat, sensitivity, floor, rng)


def perturb_local_update(h: np.ndarray, dp: DpParams, rng: np.random.Generator) -> np.ndarray:
    sigma = min_sigma(dp.epsilon, dp.delta)
    return _gaussian(h, sigma, dp.sensitivity, sigma, rng)
