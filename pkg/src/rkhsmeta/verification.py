"""Independent oracles for the closed forms and gradients, plus theorem sweeps.

Nothing here calls the matrix exponential or an SPD solve: the kernel-flow
oracle integrates the linearized dynamics with RK4, and derivative checks
use plain central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import network as nw
from . import objectives as obj
from .network import NetworkSpec


@dataclass(frozen=True)
class OdeConfig:
    steps_per_unit: int = 1000
    stability: float = 0.5  # max h * lambda_max / n per RK4 step

    def __post_init__(self):
        if self.steps_per_unit < 1:
            raise ValueError("steps_per_unit must be >= 1")


def _rk4(rhs, state, t_end: float, steps: int):
    h = t_end / steps
    for _ in range(steps):
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * h * k1)
        k3 = rhs(state + 0.5 * h * k2)
        k4 = rhs(state + h * k3)
        state = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return state


def flow_steps(gram: np.ndarray, n: int, t: float, ode: OdeConfig) -> int:
    """RK4 step count: the configured density, raised if stability demands it."""
    lam = float(np.abs(np.linalg.eigvalsh(gram)).max()) if gram.size else 0.0
    steps = max(1, math.ceil(t * ode.steps_per_unit))
    if lam > 0:
        steps = max(steps, math.ceil(t * lam / n / ode.stability))
    return steps


def linearized_flow_oracle(spec: NetworkSpec, theta, support_x, support_y, queries, t: float,
                           ode: OdeConfig = OdeConfig(), kernel=None, kernel_mode: str = "full",
                           steps: int | None = None) -> np.ndarray:
    """Query predictions after integrating the linearized flow for time ``t``.

    Support outputs follow ``du/dt = -(1/n) H (u - Y)`` from ``u(0) = f(X)``;
    query outputs follow ``dq/dt = -(1/n) K(Q, X) (u - Y)``.
    """
    if kernel is None:
        kernel = obj.make_kernel(spec, theta, "ntk", kernel_mode)
    sx = np.asarray(support_x, dtype=np.float64)
    qx = np.asarray(queries, dtype=np.float64)
    n = sx.shape[0]
    u0 = nw.predict(spec, theta, sx)
    q0 = nw.predict(spec, theta, qx)
    if t == 0:
        return q0
    h = kernel.gram(sx)
    k = kernel.cross(qx, sx)
    blockwise = kernel.blockwise
    y = np.asarray(support_y, dtype=np.float64).reshape(u0.shape)

    def flat(a):
        return a.reshape(-1, 1) if blockwise else a

    u0f, q0f, yf = flat(u0), flat(q0), flat(y)
    nu = u0f.shape[0]

    def rhs(state):
        r = state[:nu] - yf
        return np.concatenate([-(h @ r) / n, -(k @ r) / n])

    if steps is None:
        steps = flow_steps(h, n, t, ode)
    state = _rk4(rhs, np.concatenate([u0f, q0f]), t, steps)
    return state[nu:].reshape(q0.shape)


def finite_diff_grad(fn, theta, step: float = 1e-5) -> np.ndarray:
    """Central differences, coordinate step ``step * max(1, |theta_i|)``."""
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.size):
        h = step * max(1.0, abs(theta[i]))
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        out[i] = (fn(tp) - fn(tm)) / (tp[i] - tm[i])
    return out


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.linalg.norm(b)), float(np.linalg.norm(a)), 1e-300)
    return float(np.linalg.norm(a - b)) / scale


def nonlinear_flow_gap(spec: NetworkSpec, theta, support_x, support_y, queries, t: float,
                       lr: float = 1e-3) -> float:
    """Diagnostic: distance between full-network gradient descent and the linearized flow.

    Parameters are moved by ``t / lr`` steps of size ``lr`` on the
    ``1/(2n)`` loss, which approximates the parameter flow up to time ``t``.
    """
    steps = max(1, int(round(t / lr)))
    phi = obj.adapt_gradient(spec, theta, support_x, support_y, lr, steps)
    full = nw.predict(spec, phi, queries)
    lin = linearized_flow_oracle(spec, theta, support_x, support_y, queries, t)
    return relative_error(full, lin)


def in_regime(spec: NetworkSpec, theta, alpha: float) -> bool:
    """Heuristic check of the small-learning-rate precondition from the depth/norm bound.

    Uses ``alpha <= q * r`` with ``q = min(1/(L s^L), L^(-1/(L+1)))`` and
    ``r = min(s^-L, s)``, taking the hidden constant as 1.
    """
    norms = nw.spectral_norms(spec, theta)
    s = max(norms)
    depth = max(spec.n_hidden, 1)
    if s <= 0:
        return True
    q = min(1.0 / (depth * s**depth), depth ** (-1.0 / (depth + 1)))
    r = min(s ** (-depth), s)
    return alpha <= q * r


def rkhs_gap(spec: NetworkSpec, theta, tasks, big_t: float, config: obj.MetaConfig) -> float:
    """``|E~(T) - E-bar(T)|`` at fixed parameters."""
    e1 = obj.meta_rkhs_1_objective(spec, theta, tasks, big_t, config.loss_kind, config.split)
    e2 = obj.meta_rkhs_2_objective(spec, theta, tasks, big_t, config)
    return abs(e1 - e2)


def self_query(task):
    """The task scored on its own support set, so both objectives see the same data."""
    from .tasks import Task

    return Task(task.support_x, task.support_y, task.support_x, task.support_y, dict(task.meta))


def theorem_sweeps(spec: NetworkSpec, seeds, alphas=(0.001, 0.002, 0.004), ks=(1, 3),
                   times=(0.0, 0.1, 0.5, 1.0, 2.0), n_tasks: int = 4, task_spec=None, lift=None):
    """Run the Taylor-gap and objective-gap sweeps.

    ``lift`` optionally maps each sampled task to the network's input space
    (e.g. tiling a scalar input across a convolutional net's length).

    Returns ``(rows, checks)``: rows follow the CSV schema
    ``sweep_name, seed, params, value, passed``; checks maps each assertion
    name to a bool.
    """
    from .tasks import SineSpec, sample_task

    task_spec = task_spec or SineSpec(n_support=5, n_query=5)
    config = obj.MetaConfig(split=True, kernel_mode="full")
    rows = []
    taylor_pairs = []
    mono = []
    k1_ok = []
    t0_ok = []
    for seed in seeds:
        theta = nw.init_params(spec, seed)
        tasks = [sample_task(task_spec, (seed, 1, i)) for i in range(n_tasks)]
        if lift is not None:
            tasks = [lift(t) for t in tasks]
        tasks = [self_query(t) for t in tasks]
        for k in ks:
            gaps = {}
            for alpha in alphas:
                gap = obj.taylor_gap(spec, theta, tasks, alpha, k, config.loss_kind, config.split)
                gaps[alpha] = gap
                ok = gap <= 1e-8 if k == 1 else True
                if k == 1:
                    k1_ok.append(ok)
                rows.append({
                    "sweep_name": "taylor_gap", "seed": seed, "L": spec.n_hidden, "alpha": alpha, "k": k,
                    "in_regime": in_regime(spec, theta, alpha), "value": gap, "passed": ok,
                })
            if k > 1:
                for a in alphas:
                    if a / 2 in gaps:
                        taylor_pairs.append(gaps[a / 2] <= gaps[a])
        gaps_t = [rkhs_gap(spec, theta, tasks, big_t, config) for big_t in times]
        nondec = all(b >= a for a, b in zip(gaps_t, gaps_t[1:]))
        mono.append(nondec)
        for big_t, g in zip(times, gaps_t):
            ok = g <= 1e-10 if big_t == 0 else nondec
            if big_t == 0:
                t0_ok.append(ok)
            rows.append({"sweep_name": "rkhs_gap", "seed": seed, "L": spec.n_hidden, "T": big_t,
                         "value": g, "passed": ok})
    checks = {
        "taylor_k1_identity": all(k1_ok),
        "taylor_trend": (sum(taylor_pairs) >= 0.8 * len(taylor_pairs)) if taylor_pairs else True,
        "rkhs_gap_t0": all(t0_ok),
        "rkhs_gap_monotone": all(mono),
    }
    return rows, checks
