"""Round-by-round simulation of the proposed and benchmark schemes."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import channel as ch
from . import localtrain as lt
from . import policy as pol
from . import privacy as dp

log = logging.getLogger(__name__)

SCHEMES = ("proposed", "benchmark")

# rng stream tags; a stream is keyed by (seed, tag, round, device)
_DATA, _PLACEMENT, _CHANNEL, _UPLINK, _DOWNLINK, _BROADCAST = range(1, 7)


def stream(seed: int, tag: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag, *keys]))


@dataclass(frozen=True)
class TaskSettings:
    loss_kind: str = "logistic"
    features: int = 10
    regularization: float = 0.05
    step_scale: float = 1.0  # eta * L
    xi: float = 1.0
    target_phi: float = 0.1
    skew: float = 0.5
    margin_noise: float = 0.5

    def __post_init__(self):
        if self.loss_kind not in lt.LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {lt.LOSS_KINDS}, not {self.loss_kind!r}")
        if self.features < 1:
            raise ValueError("features must be >= 1")
        if self.regularization <= 0 or self.step_scale <= 0 or self.xi <= 0:
            raise ValueError("regularization, step_scale and xi must be positive")
        if not 0 < self.target_phi <= 1:
            raise ValueError("target_phi must lie in (0, 1]")
        if self.skew < 0 or self.margin_noise < 0:
            raise ValueError("skew and margin_noise must be non-negative")


@dataclass(frozen=True)
class DeviceDefaults:
    dataset_size: int = 200
    time_per_sample: float = 1e-5
    compute_power: float = 0.096
    circuit_power: float = 0.0825
    bandwidth: float = 250e3
    p_max: float = 1.0
    j_min: int = 10
    j_max_cap: int = 10_000

    def __post_init__(self):
        for name in ("dataset_size", "time_per_sample", "compute_power", "circuit_power",
                     "bandwidth", "p_max", "j_min", "j_max_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.j_min > self.j_max_cap:
            raise ValueError("j_min must not exceed j_max_cap")


@dataclass(frozen=True)
class SimulationConfig:
    scheme: str = "both"
    num_devices: int = 10
    num_rounds: int = 100
    master_seed: int = 0
    delay_bound: float = 0.75  # s
    payload_bits: float = 875e3
    dp: dp.DpParams = field(default_factory=dp.DpParams)
    radio: ch.RadioConstants = field(default_factory=ch.RadioConstants)
    task: TaskSettings = field(default_factory=TaskSettings)
    devices: DeviceDefaults = field(default_factory=DeviceDefaults)
    distance_policy: str = "uniform-in-range"
    distance_range: tuple[float, float] = (50.0, 200.0)
    distances: tuple[float, ...] | None = None
    varrho: float = 0.5
    fit_window: int = 8
    deviation_source: str = "received"

    def __post_init__(self):
        if self.scheme not in (*SCHEMES, "both"):
            raise ValueError(f"scheme must be proposed, benchmark or both, not {self.scheme!r}")
        if self.num_devices < 1:
            raise ValueError("num_devices must be >= 1")
        if self.num_rounds < 0:
            raise ValueError("num_rounds must be >= 0")
        if self.delay_bound <= 0:
            raise ValueError("delay_bound must be positive")
        if self.payload_bits < 0:
            raise ValueError("payload_bits must be non-negative")
        if self.distance_policy not in ("explicit", "uniform-in-range"):
            raise ValueError("distance_policy must be explicit or uniform-in-range")
        lo, hi = self.distance_range
        if not 0 < lo <= hi:
            raise ValueError("distance_range must satisfy 0 < low <= high")
        if self.distance_policy == "explicit":
            if self.distances is None or len(self.distances) != self.num_devices:
                raise ValueError("distances: explicit policy needs one distance per device")
            if any(not lo <= r <= hi for r in self.distances):
                raise ValueError("distances must lie inside distance_range")
        if self.varrho <= 0:
            raise ValueError("varrho must be positive")
        if self.fit_window < 1:
            raise ValueError("fit_window must be >= 1")
        if self.deviation_source not in ("received", "raw"):
            raise ValueError("deviation_source must be received or raw")

    @property
    def schemes(self) -> tuple[str, ...]:
        return SCHEMES if self.scheme == "both" else (self.scheme,)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    device: int
    scheme: str
    loss: float
    deviation: float
    sigma: float
    compute_energy: float
    transmit_energy: float
    total_energy: float
    iterations: int
    power: float
    rate: float
    phi: float
    utility: float
    skipped: bool = False


@dataclass
class Setup:
    """Everything shared between the two schemes: devices, data, task."""

    profiles: list[ch.DeviceProfile]
    datasets: list[lt.LocalDataset]
    task: lt.LearningTask


@dataclass
class SchemeState:
    global_model: np.ndarray
    device_models: list[np.ndarray]
    history: list[deque]


def build_setup(config: SimulationConfig) -> Setup:
    K, seed = config.num_devices, config.master_seed
    ts = config.task
    data_rng = stream(seed, _DATA)
    if ts.loss_kind == "logistic":
        datasets = lt.make_logistic_datasets(K, config.devices.dataset_size, ts.features,
                                             data_rng, ts.skew, ts.margin_noise)
    else:
        datasets = _quadratic_datasets(K, config.devices.dataset_size, ts.features, data_rng)
    task = lt.make_task(datasets, ts.loss_kind, ts.regularization, ts.step_scale, ts.xi)
    j_min = max(lt.min_iterations(ts.target_phi, task), config.devices.j_min)

    if config.distance_policy == "explicit":
        distances = list(config.distances)
    else:
        lo, hi = config.distance_range
        distances = list(stream(seed, _PLACEMENT).uniform(lo, hi, size=K))
    dd = config.devices
    profiles = [ch.DeviceProfile(k, dd.dataset_size, dd.time_per_sample, dd.compute_power,
                                 dd.circuit_power, dd.bandwidth, float(distances[k]), dd.p_max,
                                 j_min, max(dd.j_max_cap, j_min))
                for k in range(K)]
    return Setup(profiles, datasets, task)


def _quadratic_datasets(K, samples, features, rng):
    out = []
    for _ in range(K):
        x = rng.normal(size=(samples, features))
        w = rng.normal(size=features)
        out.append(lt.LocalDataset(x, x @ w + 0.1 * rng.normal(size=samples)))
    return out


def initial_state(setup: Setup) -> SchemeState:
    v = setup.datasets[0].dim
    K = len(setup.profiles)
    return SchemeState(np.zeros(v), [np.zeros(v) for _ in range(K)], [deque() for _ in range(K)])


def _choose_policy(scheme, m, k, real, setup, config, params):
    prof = setup.profiles[k]
    if scheme == "benchmark" or m == 0:
        return pol.benchmark_policy(prof, real, config.radio, config.delay_bound,
                                    config.payload_bits, setup.task)
    return pol.solve_policy(params, prof, real, config.radio, setup.task, config.delay_bound,
                            config.payload_bits)


def run_round(state: SchemeState, setup: Setup, config: SimulationConfig, m: int,
              scheme: str) -> tuple[SchemeState, list[RoundRecord]]:
    """Advance one scheme by one communication round.

    Each device sees the round's channel first and picks its policy for it
    (benchmark in round 0 and for the benchmark scheme), then the gradient
    exchange, local solve, noisy upload, aggregation, deviation scoring and
    noisy per-device download follow.
    """
    K, seed, task = len(setup.profiles), config.master_seed, setup.task
    reals = [ch.sample_channel(p, config.radio, stream(seed, _CHANNEL, m, k))
             for k, p in enumerate(setup.profiles)]

    params, decisions = [], []
    for k in range(K):
        fitted = pol.fit_betas(list(state.history[k]), config.varrho)
        params.append(fitted)
        try:
            decisions.append(_choose_policy(scheme, m, k, reals[k], setup, config, fitted))
        except pol.InfeasibleRound as exc:
            log.debug("round %d device %d skipped: %s", m, k, exc)
            decisions.append(None)
    active = [k for k in range(K) if decisions[k] is not None]

    raw = [np.zeros_like(state.global_model) for _ in range(K)]
    sent = [np.zeros_like(state.global_model) for _ in range(K)]
    global_model = state.global_model
    if active:
        grads = {k: lt.local_gradient(state.device_models[k], setup.datasets[k], task)
                 for k in active}
        mean_grad = np.mean([grads[k] for k in active], axis=0)
        for k in active:
            raw[k] = lt.gradient_steps(state.device_models[k], (grads[k], mean_grad),
                                       setup.datasets[k], task, decisions[k].iterations)
            sent[k] = dp.perturb_local_update(raw[k], config.dp, stream(seed, _UPLINK, m, k))
        global_model = lt.aggregate(global_model, [sent[k] for k in active])

    scored = sent if config.deviation_source == "received" else raw
    deviations = dp.deviation_factors(global_model, scored)

    models, sigmas = [], []
    if scheme == "benchmark":
        sigma = dp.min_sigma(config.dp.epsilon, config.dp.delta)
        shared = dp.perturb_model(global_model, sigma, config.dp.sensitivity,
                                  stream(seed, _BROADCAST, m), config.dp)
        models = [shared] * K
        sigmas = [sigma] * K
    else:
        for k in range(K):
            sigma = dp.adaptive_sigma(config.dp, float(deviations[k]))
            models.append(dp.perturb_model(global_model, sigma, config.dp.sensitivity,
                                           stream(seed, _DOWNLINK, m, k), config.dp))
            sigmas.append(sigma)

    records = []
    for k in range(K):
        loss = lt.local_loss(models[k], setup.datasets[k], task)
        d = decisions[k]
        if d is None:
            records.append(RoundRecord(m, k, scheme, loss, float(deviations[k]), sigmas[k],
                                       0.0, 0.0, 0.0, 0, 0.0, 0.0, math.nan, math.nan, True))
            continue
        prof = setup.profiles[k]
        e_cp = ch.compute_energy(d.iterations, prof)
        e_tx = ch.transmit_energy(d.power, reals[k], prof, config.radio, config.payload_bits)
        e_tot = e_cp + e_tx
        records.append(RoundRecord(m, k, scheme, loss, float(deviations[k]), sigmas[k], e_cp,
                                   e_tx, e_tot, d.iterations, d.power, d.rate, d.accuracy_phi,
                                   pol.utility(params[k], e_cp, e_tot)))
        hist = state.history[k]
        hist.append(pol.FitSample(e_cp, float(deviations[k])))
        while len(hist) > config.fit_window:
            hist.popleft()

    return SchemeState(global_model, models, state.history), records


def run_simulation(config: SimulationConfig, setup: Setup | None = None) -> list[RoundRecord]:
    """All rounds for every configured scheme; schemes replay the same data and channels."""
    setup = setup or build_setup(config)
    records: list[RoundRecord] = []
    for scheme in config.schemes:
        state = initial_state(setup)
        for m in range(config.num_rounds):
            state, recs = run_round(state, setup, config, m, scheme)
            records.extend(recs)
    return records


# --------------------------------------------------------------------------
# summaries


def _pstd(values: Iterable[float]) -> float:
    arr = np.asarray(list(values), dtype=float)
    return float(arr.std()) if arr.size else math.nan


def normalized_path_loss(distances: Sequence[float], alpha: float = 4.0) -> list[float]:
    """Path loss in dB, min-max scaled to [0, 1] across the given devices."""
    pl = 10.0 * alpha * np.log10(np.asarray(distances, dtype=float))
    span = pl.max() - pl.min()
    if span == 0:
        return [0.0] * len(pl)
    return [float(x) for x in (pl - pl.min()) / span]


def summarize(records: Sequence[RoundRecord], distances: Sequence[float] | None = None,
              alpha: float = 4.0) -> dict:
    """Per-scheme loss and energy statistics plus cross-scheme deltas.

    Standard deviations are population standard deviations across devices.
    """
    if not records:
        raise ValueError("no records to summarize")
    out: dict = {"schemes": {}}
    for scheme in sorted({r.scheme for r in records}, key=lambda s: (s != "proposed", s)):
        rows = [r for r in records if r.scheme == scheme]
        rounds = sorted({r.round for r in rows})
        devices = sorted({r.device for r in rows})
        by_round = {m: [r for r in rows if r.round == m] for m in rounds}
        avg_loss = [float(np.mean([r.loss for r in by_round[m]])) for m in rounds]
        loss_std = [_pstd(r.loss for r in by_round[m]) for m in rounds]
        tail = max(1, len(rounds) // 10)
        per_device_energy = []
        for k in devices:
            active = [r.total_energy for r in rows if r.device == k and not r.skipped]
            per_device_energy.append(float(np.mean(active)) if active else math.nan)
        energies = np.array(per_device_energy)
        seen = energies[~np.isnan(energies)]
        summary = {
            "rounds": len(rounds),
            "devices": len(devices),
            "skipped": sum(r.skipped for r in rows),
            "mean_loss": float(np.mean([r.loss for r in rows])),
            "final_avg_loss": float(np.mean(avg_loss[-tail:])),
            "loss_std": float(np.mean(loss_std)),
            "final_loss_std": float(np.mean(loss_std[-tail:])),
            "energy_mean": float(seen.mean()) if seen.size else math.nan,
            "energy_std": float(seen.std()) if seen.size else math.nan,
            "loss_by_round": avg_loss,
            "loss_std_by_round": loss_std,
            "energy_by_device": per_device_energy,
        }
        if distances is not None:
            summary["normalized_path_loss"] = normalized_path_loss(
                [distances[k] for k in devices], alpha)
        out["schemes"][scheme] = summary
    s = out["schemes"]
    if "proposed" in s and "benchmark" in s:
        p, b = s["proposed"], s["benchmark"]
        out["comparison"] = {
            "energy_std_reduction_percent": 100.0 * (1.0 - p["energy_std"] / b["energy_std"]),
            "mean_energy_reduction_percent": 100.0 * (1.0 - p["energy_mean"] / b["energy_mean"]),
            "mean_loss_increase_percent": 100.0 * (p["mean_loss"] / b["mean_loss"] - 1.0),
            "final_loss_ratio": p["final_avg_loss"] / b["final_avg_loss"],
        }
    return out
