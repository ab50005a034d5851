"""Device-side utility model and the optimal computation/transmission policy.

A device picks its local iteration count j and transmit power P for the
next round by maximising

    U = beta1 - beta1 exp(-E_cp / beta2) - E (E - varrho),

where E_cp is the computation energy and E the total round energy, subject
to the delay bound j d tau + V / R(P) <= T. With Z = ln(1 + a P) (a being
the SNR per watt) and j filling the remaining time, the problem is one
dimensional in Z; its stationarity condition is solved by bisection and the
integer iteration count is recovered afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import mpmath
import numpy as np

from .channel import (ChannelRealization, DeviceProfile, RadioConstants, snr_per_watt,
                      transmission_rate)
from .localtrain import LearningTask

LN2 = math.log(2.0)


class InfeasibleRound(ValueError):
    """No (j, P) pair meets the delay bound for this channel realization."""


@dataclass(frozen=True)
class UtilityModelParams:
    beta1: float = 1.0
    beta2: float = 0.05
    varrho: float = 0.5

    def __post_init__(self):
        if self.beta1 <= 0 or self.beta2 <= 0 or self.varrho <= 0:
            raise ValueError("beta1, beta2 and varrho must be positive")


@dataclass(frozen=True)
class PolicyDecision:
    iterations: int
    power: float  # W
    rate: float  # bit/s
    accuracy_phi: float
    z_value: float  # nats, ln(1 + a P)


@dataclass(frozen=True)
class FitSample:
    compute_energy: float  # J
    deviation: float


def deviation_model(params: UtilityModelParams, compute_energy: float) -> float:
    if compute_energy < 0:
        raise ValueError("energy must be non-negative")
    return params.beta1 * math.exp(-compute_energy / params.beta2)


def utility(params: UtilityModelParams, compute_energy: float, total_energy: float) -> float:
    if compute_energy < 0 or total_energy < 0:
        raise ValueError("energies must be non-negative")
    return (params.beta1 - deviation_model(params, compute_energy)
            - total_energy * (total_energy - params.varrho))


# --------------------------------------------------------------------------
# fitting the deviation model


def _sse(beta1, beta2, e, dev):
    return float(np.sum((dev - beta1 * np.exp(-e / beta2)) ** 2))


def fit_betas(history: Sequence[FitSample], varrho: float = 0.5, floor: float = 1e-3,
              beta1_max: float = 1.0, beta2_bounds: tuple[float, float] = (1e-4, 10.0),
              gn_steps: int = 30) -> UtilityModelParams:
    """Least-squares fit of deviation = beta1 exp(-energy / beta2).

    Starts from a log-linear regression over samples with deviation above
    `floor`, then refines with damped Gauss-Newton on the squared error of
    all samples. Parameters are kept inside beta1 in (0, beta1_max] and
    `beta2_bounds`. With fewer than two usable samples (or no spread in
    energy) the defaults beta1 = 1, beta2 = median energy are returned.
    """
    e = np.array([s.compute_energy for s in history], dtype=float)
    dev = np.array([s.deviation for s in history], dtype=float)
    lo2, hi2 = beta2_bounds
    usable = dev > floor
    if usable.sum() < 2 or np.ptp(e[usable]) <= 1e-12 * max(1.0, float(np.max(e))):
        median = float(np.median(e)) if e.size else 0.0
        return UtilityModelParams(1.0, float(np.clip(median, lo2, hi2)) if median > 0 else hi2,
                                  varrho)

    slope, intercept = np.polyfit(e[usable], np.log(dev[usable]), 1)
    beta2 = -1.0 / slope if slope < 0 else hi2
    beta2 = float(np.clip(beta2, lo2, hi2))
    beta1 = float(np.clip(math.exp(min(intercept, math.log(beta1_max))), 1e-9, beta1_max))

    cost = _sse(beta1, beta2, e, dev)
    damping = 1e-9
    for _ in range(gn_steps):
        expo = np.exp(-e / beta2)
        resid = dev - beta1 * expo
        jac = np.column_stack([expo, beta1 * expo * e / beta2 ** 2])
        jtj = jac.T @ jac
        grad = jac.T @ resid
        improved = False
        while damping < 1e12:
            try:
                step = np.linalg.solve(jtj + damping * np.diag(np.diag(jtj) + 1e-30), grad)
            except np.linalg.LinAlgError:
                damping *= 10
                continue
            b1 = float(np.clip(beta1 + step[0], 1e-9, beta1_max))
            b2 = float(np.clip(beta2 + step[1], lo2, hi2))
            new = _sse(b1, b2, e, dev)
            if new < cost:
                improved = True
                converged = cost - new <= 1e-12 * cost
                beta1, beta2, cost = b1, b2, new
                damping = max(damping / 10, 1e-12)
                break
            damping *= 10
        if not improved or converged:
            break
    return UtilityModelParams(beta1, beta2, varrho)


# --------------------------------------------------------------------------
# link budget in the Z = ln(1 + a P) coordinate


@dataclass(frozen=True)
class LinkBudget:
    """Everything the policy needs about one device in one round."""

    snr_per_watt: float  # a
    bandwidth: float
    payload_bits: float
    delay_bound: float
    iteration_time: float  # d_k tau_k
    compute_power: float
    circuit_power: float
    amplifier_efficiency: float
    p_max: float
    j_min: int
    j_max_cap: int

    @classmethod
    def build(cls, profile: DeviceProfile, real: ChannelRealization, constants: RadioConstants,
              delay_bound: float, payload_bits: float, j_min: int | None = None) -> "LinkBudget":
        return cls(snr_per_watt(real, profile, constants), profile.bandwidth, payload_bits,
                   delay_bound, profile.iteration_time, profile.compute_power,
                   profile.circuit_power, constants.amplifier_efficiency, profile.p_max,
                   profile.j_min if j_min is None else j_min, profile.j_max_cap)

    # b_k and c_k of the closed-form solution
    @property
    def b(self) -> float:
        return LN2 / (self.amplifier_efficiency * self.snr_per_watt * self.bandwidth)

    @property
    def c(self) -> float:
        return self.amplifier_efficiency * self.snr_per_watt * self.circuit_power - 1.0

    def tx_time(self, z: float) -> float:
        return self.payload_bits * LN2 / (self.bandwidth * z)

    def power(self, z: float) -> float:
        return math.expm1(z) / self.snr_per_watt

    def z_of_power(self, p: float) -> float:
        return math.log1p(self.snr_per_watt * p)

    def rate(self, z: float) -> float:
        return self.bandwidth * z / LN2

    @property
    def z_max(self) -> float:
        return self.z_of_power(self.p_max)

    def z_required(self, j: float) -> float:
        """Smallest Z letting j iterations plus the upload fit in the delay bound."""
        slack = self.delay_bound - j * self.iteration_time
        if slack <= 0:
            return math.inf
        return self.payload_bits * LN2 / (self.bandwidth * slack)

    def iterations_filling(self, z: float) -> float:
        return (self.delay_bound - self.tx_time(z)) / self.iteration_time

    def compute_energy(self, j: float) -> float:
        return j * self.iteration_time * self.compute_power

    def tx_energy(self, z: float) -> float:
        return self.tx_time(z) * (self.power(z) / self.amplifier_efficiency + self.circuit_power)

    def tight_energies(self, z: float) -> tuple[float, float]:
        """(compute, total) energy when the iterations fill the time left by the upload."""
        e_cp = self.compute_power * (self.delay_bound - self.tx_time(z))
        return e_cp, e_cp + self.tx_energy(z)

    @property
    def z_efficient(self) -> float:
        """Z minimising transmit energy per payload: root of (Z - 1) e^Z = c."""
        c = self.c
        f = lambda z: (z - 1.0) * math.exp(z) - c  # noqa: E731
        hi = 2.0
        while f(hi) < 0:
            hi *= 2.0
        return _bisect(f, 0.0, hi)


def _bisect(f: Callable[[float], float], lo: float, hi: float, max_iter: int = 200,
            ftol: float = 0.0) -> float:
    flo = f(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if fm == 0.0 or abs(fm) <= ftol:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def p_min(profile: DeviceProfile, real: ChannelRealization, constants: RadioConstants,
          j_min: int, delay_bound: float, payload_bits: float) -> float:
    """Transmit power at which j_min iterations plus the upload exactly take the delay bound."""
    link = LinkBudget.build(profile, real, constants, delay_bound, payload_bits, j_min)
    if link.snr_per_watt <= 0:
        raise InfeasibleRound("channel gain is zero")
    z = link.z_required(j_min)
    if math.isinf(z):
        raise InfeasibleRound("j_min iterations alone exceed the delay bound")
    return link.power(z)


def j_max(profile: DeviceProfile, real: ChannelRealization, constants: RadioConstants,
          delay_bound: float, payload_bits: float) -> int:
    """Most iterations that fit beside an upload at full power (capped by the profile)."""
    rate = transmission_rate(profile.p_max, real, profile, constants)
    if rate <= 0:
        raise InfeasibleRound("zero rate at maximum power")
    t_tx = payload_bits / rate
    remaining = delay_bound - t_tx
    if remaining < 0:
        raise InfeasibleRound("upload at maximum power alone exceeds the delay bound")
    j = math.floor(remaining / profile.iteration_time)
    while j > 0 and j * profile.iteration_time + t_tx > delay_bound:
        j -= 1
    return min(j, profile.j_max_cap)


# --------------------------------------------------------------------------
# closed-form optimum


def _sides(z, params: UtilityModelParams, link: LinkBudget, exp, ln2):
    v, bw, pcp, T = link.payload_bits, link.bandwidth, link.compute_power, link.delay_bound
    a, rho = link.snr_per_watt, link.amplifier_efficiency
    b = ln2 / (rho * a * bw)
    c = rho * a * link.circuit_power - 1
    t_tx = v * ln2 / (bw * z)
    energy_term = 2 * pcp * (T - t_tx) + 2 * v * b / z * (exp(z) + c) - params.varrho
    slope_term = bw * b / (pcp * ln2) * ((z - 1) * exp(z) - c) + 1
    rhs = params.beta1 / params.beta2 * exp(-pcp * (T - t_tx) / params.beta2)
    return energy_term * slope_term, rhs


def stationarity_sides(z: float, params: UtilityModelParams, link: LinkBudget) -> tuple[float, float]:
    """Left and right sides of the stationarity equation defining Z-hat."""
    return _sides(z, params, link, math.exp, LN2)


def stationarity_sides_precise(z, params: UtilityModelParams, link: LinkBudget,
                               dps: int = 50) -> tuple[mpmath.mpf, mpmath.mpf]:
    """`stationarity_sides` evaluated with `dps` significant digits."""
    with mpmath.workdps(dps):
        lhs, rhs = _sides(mpmath.mpf(z), params, link, mpmath.exp, mpmath.log(2))
        return +lhs, +rhs


def stationarity_residual(z: float, params: UtilityModelParams, link: LinkBudget) -> float:
    lhs, rhs = stationarity_sides(z, params, link)
    return lhs - rhs


def _working_digits(params: UtilityModelParams, link: LinkBudget, lo: float, hi: float) -> int:
    # The right side can be many orders of magnitude below the O(1) terms
    # that cancel on the left, so size the precision to cover that gap.
    e_cp = link.compute_power * (link.delay_bound - link.tx_time(hi))
    log10_rhs = math.log10(params.beta1 / params.beta2) - e_cp / (params.beta2 * math.log(10))
    scale = math.log10(1.0 + abs(link.bandwidth * link.b / (link.compute_power * LN2))) + hi / math.log(10)
    return 25 + math.ceil(max(0.0, -log10_rhs) + max(0.0, scale))


def _refine_root(params: UtilityModelParams, link: LinkBudget, lo: float, hi: float):
    """High-precision root inside a bracketing interval, or None if the bracket is spurious."""
    dps = _working_digits(params, link, lo, hi)
    with mpmath.workdps(dps):
        ln2 = mpmath.log(2)

        def f(z):
            lhs, rhs = _sides(z, params, link, mpmath.exp, ln2)
            return lhs - rhs

        a, b = mpmath.mpf(lo), mpmath.mpf(hi)
        fa, fb = f(a), f(b)
        if fa == 0:
            return a
        if fb == 0:
            return b
        if (fa < 0) == (fb < 0):
            return None
        # Illinois-modified regula falsi; falls back to bisection when it stalls
        side = 0
        width = b - a
        tol = mpmath.ldexp(abs(b), -mpmath.mp.prec + 4)
        for _ in range(4 * mpmath.mp.prec):
            z = (a * fb - b * fa) / (fb - fa)
            if not a < z < b:
                z = (a + b) / 2
            fz = f(z)
            if fz == 0:
                return z
            if (fz < 0) == (fb < 0):
                b, fb = z, fz
                if side == -1:
                    fa /= 2
                side = -1
            else:
                a, fa = z, fz
                if side == 1:
                    fb /= 2
                side = 1
            if b - a > 0.5 * width:
                z = (a + b) / 2
                fz = f(z)
                if fz == 0:
                    return z
                if (fz < 0) == (fb < 0):
                    b, fb = z, fz
                else:
                    a, fa = z, fz
                side = 0
            width = b - a
            if width <= tol:
                break
        return a if abs(fa) <= abs(fb) else b


def stationary_points(params: UtilityModelParams, link: LinkBudget, z_lo: float, z_hi: float,
                      scan: int = 64) -> list:
    """All sign changes of the stationarity residual on [z_lo, z_hi].

    Brackets come from a uniform scan in double precision; each is then
    refined in multiple precision, because the right-hand side can sit far
    below the rounding error of the left one. Roots are returned as
    mpmath numbers.
    """
    grid = np.linspace(z_lo, z_hi, scan)
    res = [stationarity_residual(z, params, link) for z in grid]
    roots = []
    for i in range(scan - 1):
        r0, r1 = res[i], res[i + 1]
        if r0 == 0.0 or ((r0 < 0) != (r1 < 0) and r1 != 0.0):
            root = _refine_root(params, link, float(grid[i]), float(grid[i + 1]))
            if root is not None:
                roots.append(root)
    if res[-1] == 0.0:
        roots.append(mpmath.mpf(float(grid[-1])))
    return roots


def clamp_z(z_hat: float, z_min: float, z_max: float) -> float:
    """Project Z-hat onto the feasible range: max(Z_min, Z-hat) below Z_max, else Z_max."""
    if z_hat < z_max:
        return max(z_min, z_hat)
    return z_max


def _tight_utility(z: float, params: UtilityModelParams, link: LinkBudget) -> float:
    e_cp, e_tot = link.tight_energies(z)
    return utility(params, max(e_cp, 0.0), e_tot)


def _best_power_for(j: int, params: UtilityModelParams, link: LinkBudget):
    """Exact best Z for a fixed integer j: total energy as close to varrho / 2 as allowed.

    Only the quadratic energy term depends on Z once j is fixed, and transmit
    energy is unimodal in Z with its minimum at `z_efficient`.
    """
    lo, hi = link.z_required(j), link.z_max
    if lo > hi:
        return None
    e_cp = link.compute_energy(j)
    target = 0.5 * params.varrho - e_cp
    z_eff = min(max(link.z_efficient, lo), hi)
    if link.tx_energy(z_eff) >= target:
        z = z_eff
    elif link.tx_energy(hi) >= target:
        z = _bisect(lambda x: link.tx_energy(x) - target, z_eff, hi)
    elif link.tx_energy(lo) >= target:
        z = _bisect(lambda x: link.tx_energy(x) - target, lo, z_eff)
    else:
        z = hi if link.tx_energy(hi) >= link.tx_energy(lo) else lo
    return z, utility(params, e_cp, e_cp + link.tx_energy(z))


def continuous_optimum(params: UtilityModelParams, link: LinkBudget) -> tuple[float | None, float]:
    """(Z-hat, Z*) of the relaxed problem with j filling the delay bound.

    Z-hat is the stationary point whose clamped value scores best (None when
    the residual has no sign change), Z* the value actually chosen among
    the clamped stationary points and the two endpoints.
    """
    z_min = link.z_required(link.j_min)
    z_max = link.z_max
    if z_min > z_max:
        raise InfeasibleRound("delay bound unreachable even at maximum power")
    roots = stationary_points(params, link, z_min, z_max)
    best_hat, best_z, best_u = None, None, -math.inf
    for r in roots:
        z = clamp_z(float(r), z_min, z_max)
        u = _tight_utility(z, params, link)
        if u > best_u:
            best_hat, best_z, best_u = r, z, u
    for z in (z_min, z_max):
        u = _tight_utility(z, params, link)
        if u > best_u:
            best_z, best_u = z, u
    return best_hat, best_z


def _decision(j: int, z: float, link: LinkBudget, task: LearningTask) -> PolicyDecision:
    power = min(link.power(z), link.p_max)
    z = link.z_of_power(power)
    return PolicyDecision(j, power, link.rate(z), accuracy_bound(j, task), z)


def accuracy_bound(j: int, task: LearningTask) -> float:
    """Accuracy guaranteed after j local iterations."""
    return math.exp((j + 1) * math.log(task.accuracy_factor))


def feasible_j_range(link: LinkBudget) -> tuple[int, int]:
    z_max = link.z_max
    if link.snr_per_watt <= 0 or z_max <= 0:
        raise InfeasibleRound("zero rate at maximum power")
    top = link.iterations_filling(z_max)
    if top < link.j_min or link.z_required(link.j_min) > z_max:
        raise InfeasibleRound("j_min iterations do not fit the delay bound")
    hi = math.floor(top)
    while hi > link.j_min and link.z_required(hi) > z_max:
        hi -= 1
    return link.j_min, min(hi, link.j_max_cap)


def solve_policy(params: UtilityModelParams, profile: DeviceProfile, real: ChannelRealization,
                 constants: RadioConstants, task: LearningTask, delay_bound: float,
                 payload_bits: float, j_min: int | None = None) -> PolicyDecision:
    """Utility-maximising (j, P, R, Phi) for one device in one round."""
    link = LinkBudget.build(profile, real, constants, delay_bound, payload_bits, j_min)
    return solve_link(params, link, task)


def solve_link(params: UtilityModelParams, link: LinkBudget, task: LearningTask) -> PolicyDecision:
    j_lo, j_hi = feasible_j_range(link)
    _, z_star = continuous_optimum(params, link)
    j_floor = min(max(math.floor(link.iterations_filling(z_star) + 1e-9), j_lo), j_hi)

    cache: dict[int, tuple[float, float]] = {}

    def score(j: int) -> float:
        if j not in cache:
            found = _best_power_for(j, params, link)
            cache[j] = found if found is not None else (math.nan, -math.inf)
        return cache[j][1]

    candidates = [j for j in (j_floor, j_floor + 1) if j <= j_hi]
    j_best = max(candidates, key=score)
    # The closed form assumes the iterations fill the delay bound. When the
    # energy optimum leaves slack that fails; the utility is unimodal in j,
    # so climb from the closed-form point if it is not a local maximum.
    if j_best + 1 <= j_hi and score(j_best + 1) > score(j_best):
        j_best = _integer_argmax(score, j_best + 1, j_hi)
    elif j_best - 1 >= j_lo and score(j_best - 1) > score(j_best):
        j_best = _integer_argmax(score, j_lo, j_best - 1)
    if not math.isfinite(score(j_best)):
        raise InfeasibleRound("no integer iteration count fits the delay bound")
    return _decision(j_best, cache[j_best][0], link, task)


def _integer_argmax(score: Callable[[int], float], lo: int, hi: int) -> int:
    """Ternary search for the maximiser of a unimodal function on {lo, ..., hi}."""
    while hi - lo > 2:
        m1 = lo + (hi - lo) // 3
        m2 = hi - (hi - lo) // 3
        if score(m1) < score(m2):
            lo = m1 + 1
        else:
            hi = m2
    return max(range(lo, hi + 1), key=score)


def benchmark_policy(profile: DeviceProfile, real: ChannelRealization, constants: RadioConstants,
                     delay_bound: float, payload_bits: float, task: LearningTask,
                     j_min: int | None = None) -> PolicyDecision:
    """Full power, as many iterations as still fit."""
    link = LinkBudget.build(profile, real, constants, delay_bound, payload_bits, j_min)
    _, j_hi = feasible_j_range(link)
    return PolicyDecision(j_hi, link.p_max, link.rate(link.z_max), accuracy_bound(j_hi, task),
                          link.z_max)


def decision_utility(params: UtilityModelParams, decision: PolicyDecision,
                     link: LinkBudget) -> float:
    e_cp = link.compute_energy(decision.iterations)
    return utility(params, e_cp, e_cp + link.tx_energy(decision.z_value))


def grid_search_policy(params: UtilityModelParams, link: LinkBudget, n_j: int = 500,
                       n_p: int = 500) -> tuple[float, int, float]:
    """Brute-force (utility, j, P) over an n_j x n_p grid of feasible points.

    Test oracle: iterations are sampled uniformly over [j_min, j_max], powers
    half linearly and half geometrically over [P_min, P_max].
    """
    j_lo, j_hi = feasible_j_range(link)
    js = np.unique(np.round(np.linspace(j_lo, j_hi, n_j)).astype(int))
    p_lo = link.power(link.z_required(j_lo))
    half = n_p // 2
    ps = np.unique(np.concatenate([np.linspace(p_lo, link.p_max, n_p - half),
                                   np.geomspace(max(p_lo, 1e-300), link.p_max, half)]))
    z = np.log1p(link.snr_per_watt * ps)
    t_tx = link.payload_bits * LN2 / (link.bandwidth * z)
    e_tx = t_tx * (ps / link.amplifier_efficiency + link.circuit_power)
    e_cp = js * link.iteration_time * link.compute_power
    feasible = (js[:, None] * link.iteration_time + t_tx[None, :]
                <= link.delay_bound * (1 + 1e-12))
    e_tot = e_cp[:, None] + e_tx[None, :]
    u = (params.beta1 - params.beta1 * np.exp(-e_cp / params.beta2))[:, None] \
        - e_tot * (e_tot - params.varrho)
    u = np.where(feasible, u, -np.inf)
    idx = np.unravel_index(np.argmax(u), u.shape)
    return float(u[idx]), int(js[idx[0]]), float(ps[idx[1]])
