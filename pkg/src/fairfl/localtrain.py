"""Learning task, surrogate local objective and the gradient-descent local solver."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

LOSS_KINDS = ("logistic", "quadratic")


class StepSizeError(ValueError):
    """Gradient descent diverged or the step size admits no contraction."""


@dataclass(frozen=True)
class LocalDataset:
    features: np.ndarray  # (d_k, v)
    labels: np.ndarray  # (d_k,)

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("features must be 2-D and labels 1-D")
        if self.features.shape[0] < 1 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("dataset needs >= 1 sample and matching label count")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.labels))):
            raise ValueError("dataset contains non-finite entries")

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class LearningTask:
    """Loss family plus the curvature constants the iteration bounds need.

    `strong_convexity` and `smoothness` are the mu and L of the local
    objective; `step_size` is the gradient-descent step eta.
    """

    loss_kind: str
    regularization: float
    strong_convexity: float
    smoothness: float
    surrogate_xi: float = 1.0
    step_size: float = 0.0

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.strong_convexity <= 0 or self.smoothness < self.strong_convexity:
            raise ValueError("need 0 < strong_convexity <= smoothness")
        if self.surrogate_xi <= 0:
            raise ValueError("surrogate_xi must be positive")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")

    @property
    def contraction(self) -> float:
        """Per-iteration factor 0.5 eta^2 L^2 - eta L + 1 used by `min_iterations`."""
        el = self.step_size * self.smoothness
        return 0.5 * el * el - el + 1.0

    @property
    def accuracy_factor(self) -> float:
        """Per-iteration factor 0.5 mu eta^2 L - mu eta + 1 used by the policy accuracy bound."""
        mu, eta, L = self.strong_convexity, self.step_size, self.smoothness
        return 0.5 * mu * eta * eta * L - mu * eta + 1.0


def make_task(datasets: Sequence[LocalDataset], loss_kind: str = "logistic",
              regularization: float = 0.05, step_scale: float = 1.0,
              xi: float = 1.0) -> LearningTask:
    """Build a task whose mu and L bound the Hessian of every local loss.

    Logistic: L = max_k lambda_max(X_k^T X_k / d_k) / 4 + reg, mu = reg.
    Quadratic: exact extreme eigenvalues of X_k^T X_k / d_k, plus reg.
    The step size is `step_scale / L`.
    """
    if not datasets:
        raise ValueError("need at least one dataset")
    eig_min, eig_max = math.inf, 0.0
    for data in datasets:
        gram = data.features.T @ data.features / data.size
        eigs = np.linalg.eigvalsh(gram)
        eig_min = min(eig_min, float(eigs[0]))
        eig_max = max(eig_max, float(eigs[-1]))
    if loss_kind == "logistic":
        mu, L = regularization, 0.25 * eig_max + regularization
    else:
        mu, L = max(eig_min, 0.0) + regularization, eig_max + regularization
    return LearningTask(loss_kind, regularization, mu, L, xi, step_scale / L)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_dim(w: np.ndarray, data: LocalDataset):
    if w.shape != (data.dim,):
        raise ValueError(f"model has shape {w.shape}, dataset expects ({data.dim},)")


def local_loss(w: np.ndarray, data: LocalDataset, task: LearningTask) -> float:
    _check_dim(w, data)
    margins = data.features @ w
    if task.loss_kind == "logistic":
        per_sample = np.logaddexp(0.0, -data.labels * margins)
    else:
        per_sample = 0.5 * (margins - data.labels) ** 2
    return float(np.mean(per_sample) + 0.5 * task.regularization * (w @ w))


def local_gradient(w: np.ndarray, data: LocalDataset, task: LearningTask) -> np.ndarray:
    _check_dim(w, data)
    margins = data.features @ w
    if task.loss_kind == "logistic":
        coef = -data.labels * _sigmoid(-data.labels * margins)
    else:
        coef = margins - data.labels
    return data.features.T @ coef / data.size + task.regularization * w


def global_loss(w: np.ndarray, datasets: Sequence[LocalDataset], task: LearningTask) -> float:
    """Sample-weighted average of the local losses."""
    if not datasets:
        raise ValueError("empty device list")
    total = sum(d.size for d in datasets)
    return sum(d.size * local_loss(w, d, task) for d in datasets) / total


def surrogate_objective(w_g, h, local_grad, global_grad, data: LocalDataset,
                        task: LearningTask) -> float:
    if not (h.shape == local_grad.shape == global_grad.shape == w_g.shape):
        raise ValueError("vector dimensions disagree")
    shift = local_grad - task.surrogate_xi * global_grad
    return local_loss(w_g + h, data, task) - float(shift @ h)


def surrogate_gradient(w_g, h, local_grad, global_grad, data: LocalDataset,
                       task: LearningTask) -> np.ndarray:
    shift = local_grad - task.surrogate_xi * global_grad
    return local_gradient(w_g + h, data, task) - shift


def _loss_and_grad(w, data: LocalDataset, task: LearningTask):
    margins = data.features @ w
    if task.loss_kind == "logistic":
        ym = data.labels * margins
        loss = np.logaddexp(0.0, -ym).mean()
        coef = -data.labels * _sigmoid(-ym)
    else:
        coef = margins - data.labels
        loss = 0.5 * (coef @ coef) / data.size
    grad = data.features.T @ coef / data.size + task.regularization * w
    return float(loss + 0.5 * task.regularization * (w @ w)), grad


def _descend(w_g, grads, data, task, iterations=None, grad_tol=None, max_iter=200_000):
    local_grad, global_grad = grads
    shift = local_grad - task.surrogate_xi * global_grad
    h = np.zeros_like(w_g)
    loss, g = _loss_and_grad(w_g, data, task)
    prev = loss
    rising = 0
    steps = 0
    while True:
        g = g - shift
        if grad_tol is not None and np.linalg.norm(g) < grad_tol:
            break
        if iterations is not None and steps >= iterations:
            break
        if steps >= max_iter:
            raise StepSizeError(f"no convergence to gradient norm {grad_tol} in {max_iter} steps")
        h = h - task.step_size * g
        steps += 1
        loss, g = _loss_and_grad(w_g + h, data, task)
        cur = loss - float(shift @ h)
        # rounding noise near the optimum is not divergence
        rising = rising + 1 if cur > prev + 1e-12 * max(1.0, abs(prev)) else 0
        if rising >= 5 or not math.isfinite(cur):
            raise StepSizeError("gradient descent diverged; reduce the step size")
        prev = cur
    return h


def gradient_steps(w_g, grads, data: LocalDataset, task: LearningTask,
                   iterations: int) -> np.ndarray:
    """`iterations` plain gradient steps on the surrogate objective, from h = 0."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    return _descend(w_g, grads, data, task, iterations=iterations)


def reference_optimum(w_g, grads, data: LocalDataset, task: LearningTask,
                      grad_tol: float = 1e-10) -> np.ndarray:
    """High-precision minimiser of the surrogate, by running descent to `grad_tol`."""
    return _descend(w_g, grads, data, task, grad_tol=grad_tol)


def accuracy_of(h, h_star, w_g, grads, data: LocalDataset, task: LearningTask) -> float:
    """Relative suboptimality (F(h) - F*) / (F(0) - F*) of a local solution."""
    local_grad, global_grad = grads
    f = lambda x: surrogate_objective(w_g, x, local_grad, global_grad, data, task)  # noqa: E731
    f_star = f(h_star)
    gap0 = f(np.zeros_like(h)) - f_star
    if gap0 <= 0.0:
        return 0.0
    return max(f(h) - f_star, 0.0) / gap0


def solve_local(w_g, grads, data: LocalDataset, task: LearningTask, iterations: int,
                h_star: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Run `iterations` gradient steps on the surrogate from h = 0.

    Returns the update and its achieved accuracy. `h_star` may be passed in
    when the caller caches the reference optimum; otherwise it is computed.
    """
    h = gradient_steps(w_g, grads, data, task, iterations)
    if h_star is None:
        h_star = reference_optimum(w_g, grads, data, task)
    return h, accuracy_of(h, h_star, w_g, grads, data, task)


def min_iterations(phi: float, task: LearningTask) -> int:
    """Smallest iteration count meeting accuracy `phi` under the per-step contraction bound."""
    if not 0 < phi < 1:
        if phi == 1:
            return 1
        raise ValueError("phi must lie in (0, 1]")
    factor = task.contraction
    if not 0 < factor < 1:
        raise StepSizeError(f"contraction factor {factor} outside (0, 1)")
    ratio = math.log(phi) / math.log(factor)
    return max(1, math.ceil(ratio - 1e-12))


def aggregate(w_g: np.ndarray, updates: Sequence[np.ndarray]) -> np.ndarray:
    if len(updates) == 0:
        raise ValueError("no updates to aggregate")
    return w_g + np.mean(np.stack(updates), axis=0)


def make_logistic_datasets(num_devices: int, samples: int, features: int,
                           rng: np.random.Generator, skew: float = 0.5,
                           margin_noise: float = 0.5) -> list[LocalDataset]:
    """Synthetic linearly-separable-with-noise data, one shard per device.

    Every device shares the same labelling hyperplane; `skew` shifts each
    device's feature mean along the hyperplane normal, so class balance
    differs between devices. A constant bias column is appended.
    """
    w_true = rng.normal(size=features)
    w_true /= np.linalg.norm(w_true)
    out = []
    for _ in range(num_devices):
        offset = skew * rng.normal()
        x = rng.normal(size=(samples, features)) + offset * w_true
        y = np.where(x @ w_true + margin_noise * rng.normal(size=samples) > 0, 1.0, -1.0)
        out.append(LocalDataset(np.hstack([x, np.ones((samples, 1))]), y))
    return out


def make_quadratic_dataset(eigenvalues: Sequence[float], rng: np.random.Generator,
                           samples: int | None = None) -> LocalDataset:
    """Least-squares data whose Gram matrix X^T X / d has exactly `eigenvalues`."""
    eig = np.asarray(eigenvalues, dtype=float)
    v = eig.size
    d = samples or 4 * v
    u, _ = np.linalg.qr(rng.normal(size=(d, v)))
    q, _ = np.linalg.qr(rng.normal(size=(v, v)))
    x = math.sqrt(d) * u @ np.diag(np.sqrt(eig)) @ q.T
    return LocalDataset(x, rng.normal(size=d))
