"""White-box l-infinity PGD against adapted predictors.

A predictor is any object with ``predict(x) -> (m, C)`` scores and
``input_grad(x, cotangent) -> (m, d_x)``.  The attack maximizes the
softmax cross-entropy of the scores at the true label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as nw
from .network import NetworkSpec
from .rng import as_rng


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.1
    step_size: float = 0.02
    iterations: int = 20
    clip_min: float | None = None
    clip_max: float | None = None
    random_start: bool = False
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


class NetworkPredictor:
    """A network at fixed (already adapted) parameters."""

    def __init__(self, spec: NetworkSpec, theta):
        self.spec = spec
        self.theta = np.asarray(theta, dtype=np.float64)

    def predict(self, x) -> np.ndarray:
        return nw.predict(self.spec, self.theta, x)

    def input_grad(self, x, cotangent) -> np.ndarray:
        return nw.input_grad(self.spec, self.theta, x, cotangent)


def project_linf(x, x0, epsilon: float, clip_min=None, clip_max=None) -> np.ndarray:
    """Project onto the epsilon-ball around ``x0`` (and the clip box, which must contain ``x0``).

    Rounding in ``x0 +/- epsilon`` can leave ``|x - x0|`` one ulp above
    ``epsilon``; such entries are nudged back so the bound holds exactly in
    floating point.
    """
    x = np.clip(x, x0 - epsilon, x0 + epsilon)
    if clip_min is not None or clip_max is not None:
        x = np.clip(x, clip_min, clip_max)
    for _ in range(4):
        over = np.abs(x - x0) > epsilon
        if not over.any():
            break
        x = np.where(over, np.nextafter(x, x0), x)
    return x


def _ce_cotangent(scores, labels):
    z = scores - scores.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(labels.size), labels] -= 1.0
    return p


def _ce_loss(scores, labels):
    z = scores - scores.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(labels.size), labels]


def pgd_linf(predictor, x, labels, config: AttackConfig) -> np.ndarray:
    """Iterate ``x <- proj(x + step * sign(grad_x loss))`` from the clean input."""
    x0 = np.asarray(x, dtype=np.float64)
    if x0.ndim == 1:
        x0 = x0[None, :]
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    if config.epsilon == 0:
        return x0.copy()
    rng = as_rng(config.seed)
    best = x0.copy()
    best_loss = np.full(labels.size, -np.inf)
    for r in range(config.restarts):
        xa = x0.copy()
        if config.random_start:
            xa = project_linf(x0 + rng.uniform(-config.epsilon, config.epsilon, x0.shape), x0,
                              config.epsilon, config.clip_min, config.clip_max)
        for _ in range(config.iterations):
            cot = _ce_cotangent(predictor.predict(xa), labels)
            g = predictor.input_grad(xa, cot)
            xa = project_linf(xa + config.step_size * np.sign(g), x0, config.epsilon,
                              config.clip_min, config.clip_max)
        loss = _ce_loss(predictor.predict(xa), labels)
        better = loss > best_loss
        best[better] = xa[better]
        best_loss = np.where(better, loss, best_loss)
    return best


def accuracy(predictor, x, labels) -> float:
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    return float(np.mean(np.argmax(predictor.predict(x), axis=1) == labels))


def robust_accuracy(factory, tasks, attack: AttackConfig) -> tuple[float, float]:
    """Mean clean and attacked query accuracy over tasks.

    ``factory(task)`` adapts on the task's support set and returns a predictor.
    """
    clean, robust = [], []
    for task in tasks:
        pred = factory(task)
        clean.append(accuracy(pred, task.query_x, task.query_y))
        adv = pgd_linf(pred, task.query_x, task.query_y, attack)
        robust.append(accuracy(pred, adv, task.query_y))
    return float(np.mean(clean)), float(np.mean(robust))
