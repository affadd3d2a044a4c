"""Meta-objectives, their meta-gradients, and task adaptation rules.

Conventions
-----------
* Empirical squared loss is ``1/(2n) sum ||f(x_i) - y_i||^2``.  Under that
  loss the linearized function-space flow on a support set is
  ``du/dt = -(1/n) H (u - Y)``, so closed-form adaptation uses
  ``exp(-t H / n)``.  The time ``t`` is measured in units of that flow.
* ``t = math.inf`` selects the infinite-time predictor; it is never
  replaced by a large finite value.
* Meta-RKHS-I sees one unsplit batch per task (support and query stacked)
  unless ``split`` is requested; Meta-RKHS-II always adapts on the support
  set and is scored on the query set.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import network as nw
from .linalg import SPDFactor, default_jitter, expm_scaled, factor_spd
from .network import NetworkSpec
from .ntk import NTKKernel, RBFKernel, functional_grad_norm_sq

ALGORITHMS = ("meta-rkhs-1", "meta-rkhs-2", "maml", "fomaml", "reptile")


@dataclass(frozen=True)
class MetaConfig:
    inner_lr: float = 0.01
    inner_steps: int = 1
    adapt_time: float = 10.0
    pade_order: int = 2
    meta_lr: float = 1e-3
    meta_batch: int = 16
    loss_kind: str = "squared"
    hvp_step: float = 1e-5
    kernel_jitter: float = 1e-8
    stop_gradient_kernel: bool = True
    kernel: str = "ntk"
    kernel_mode: str = "scalar"
    rbf_bandwidth: float | None = None
    split: bool = False

    def __post_init__(self):
        if not self.inner_lr > 0:
            raise ValueError("inner_lr must be > 0")
        if not self.meta_lr > 0:
            raise ValueError("meta_lr must be > 0")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if not (self.adapt_time >= 0):
            raise ValueError("adapt_time must be >= 0 or inf")
        if self.pade_order not in (1, 2):
            raise ValueError("pade_order must be 1 or 2")
        if self.meta_batch < 1:
            raise ValueError("meta_batch must be >= 1")
        if self.loss_kind not in nw.LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {nw.LOSS_KINDS}")
        if self.kernel not in ("ntk", "rbf"):
            raise ValueError("kernel must be 'ntk' or 'rbf'")
        if self.kernel_mode not in ("full", "scalar"):
            raise ValueError("kernel_mode must be 'full' or 'scalar'")
        if self.hvp_step <= 0 or self.kernel_jitter < 0:
            raise ValueError("hvp_step must be > 0 and kernel_jitter >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(self.adapt_time):
            d["adapt_time"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetaConfig":
        d = dict(d)
        if isinstance(d.get("adapt_time"), str):
            d["adapt_time"] = float(d["adapt_time"])
        return cls(**d)


def _task_batch(task, split: bool = False):
    if split:
        return task.support_x, task.support_y
    return task.combined


def _mean(values: Sequence) -> float:
    return float(sum(values) / len(values))


def _mean_vec(vectors: Sequence[np.ndarray]) -> np.ndarray:
    total = np.zeros_like(vectors[0])
    for v in vectors:  # fixed order, bit-reproducible
        total = total + v
    return total / len(vectors)


# ---------------------------------------------------------------- derivatives


def hvp(spec: NetworkSpec, theta, x, y, v, step: float = 1e-5, loss_kind: str = "squared") -> np.ndarray:
    """Hessian-vector product of the empirical loss by central differences of gradients."""
    theta = np.asarray(theta, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        return np.zeros_like(theta)
    u = v / nv
    h = step * (1.0 + float(np.max(np.abs(theta))))
    gp = nw.grad_loss(spec, theta + h * u, x, y, loss_kind)
    gm = nw.grad_loss(spec, theta - h * u, x, y, loss_kind)
    return (gp - gm) * (nv / (2.0 * h))


def adapt_gradient(spec: NetworkSpec, theta, x, y, lr: float, steps: int, loss_kind: str = "squared"):
    """Plain gradient-descent adaptation; returns the adapted parameters."""
    phi = np.asarray(theta, dtype=np.float64)
    for _ in range(steps):
        phi = phi - lr * nw.grad_loss(spec, phi, x, y, loss_kind)
    return phi


# ---------------------------------------------------------------- Meta-RKHS-I


def meta_rkhs_1_objective(spec: NetworkSpec, theta, tasks, alpha: float, loss_kind: str = "squared",
                          split: bool = False) -> float:
    """Mean over tasks of ``L(f, D_m) - alpha * ||grad_f L||_H^2``.

    The RKHS norm is evaluated through kernel entries only.
    """
    vals = []
    for task in tasks:
        x, y = _task_batch(task, split)
        value = nw.loss(spec, theta, x, y, loss_kind)
        if alpha:
            value -= alpha * functional_grad_norm_sq(spec, theta, x, y, loss_kind)
        vals.append(value)
    return _mean(vals)


def meta_rkhs_1_task(spec: NetworkSpec, theta, task, alpha: float, hvp_step: float = 1e-5,
                     loss_kind: str = "squared", split: bool = False) -> tuple[float, np.ndarray]:
    """Objective value and gradient for one task.

    The value uses ``||grad_theta L||^2`` which equals the RKHS norm; the
    gradient is ``g - 2 alpha H g`` with a finite-difference Hessian product.
    """
    x, y = _task_batch(task, split)
    value, g = nw.loss_and_grad(spec, theta, x, y, loss_kind)
    if not alpha:
        return value, g
    value -= alpha * float(g @ g)
    return value, g - 2.0 * alpha * hvp(spec, theta, x, y, g, hvp_step, loss_kind)


def meta_rkhs_1_grad(spec: NetworkSpec, theta, tasks, alpha: float, hvp_step: float = 1e-5,
                     loss_kind: str = "squared", split: bool = False) -> np.ndarray:
    return _mean_vec([meta_rkhs_1_task(spec, theta, t, alpha, hvp_step, loss_kind, split)[1] for t in tasks])


# ---------------------------------------------------------------- closed-form adaptation


def make_kernel(spec: NetworkSpec, theta, kind: str = "ntk", mode: str = "full",
                bandwidth: float | None = None):
    if kind == "ntk":
        return NTKKernel(spec, theta, mode)
    if kind == "rbf":
        return RBFKernel(bandwidth)
    raise ValueError(f"unknown kernel {kind!r}")


def transfer_matrix(h: np.ndarray, n: int, t: float, pade_order: int = 2,
                    jitter: float = 1e-8) -> tuple[SPDFactor, np.ndarray]:
    """The solve phase of closed-form adaptation.

    Returns the Cholesky factor of ``H`` and ``A = H^{-1}(exp(-tH/n) - I)``
    (``-H^{-1}`` at ``t = inf``), so that the adapted coefficients are
    ``A (f(X) - Y)``.  The factorization is tried jitter-free first;
    ``jitter`` (relative to the mean diagonal) is the first escalation.
    """
    factor = factor_spd(h, 0.0, first_jitter=default_jitter(h, jitter) if jitter else None)
    eye = np.eye(h.shape[0])
    if math.isinf(t):
        return factor, -factor.solve(eye)
    e = expm_scaled(-(t / n) * h, order=pade_order)
    return factor, factor.solve(e - eye)


class AdaptedPredictor:
    """Closed-form adapted function ``f(x) + K(x, X) v`` for one support set.

    ``v`` is ``H^{-1}(exp(-tH/n) - I)(f(X) - Y)`` for finite ``t`` and
    ``H^{-1}(Y - f(X))`` at ``t = inf``; ``H`` is the support Gram matrix.
    The network part ``f`` always uses ``theta``; the kernel may have been
    frozen at different parameters.
    """

    def __init__(self, spec: NetworkSpec, theta, support_x, support_y, t: float, kernel,
                 pade_order: int = 2, jitter: float = 1e-8):
        if not t >= 0:
            raise ValueError("t must be >= 0 or inf")
        self.spec = spec
        self.theta = np.asarray(theta, dtype=np.float64)
        self.support_x = np.asarray(support_x, dtype=np.float64)
        y = np.asarray(support_y, dtype=np.float64)
        n = self.support_x.shape[0]
        if n == 0:
            raise ValueError("empty support set")
        self.n = n
        self.t = float(t)
        self.kernel = kernel.bind(self.support_x) if isinstance(kernel, RBFKernel) else kernel
        self.pade_order = pade_order
        f_support = nw.predict(spec, self.theta, self.support_x)
        self.residual = f_support - y.reshape(f_support.shape)
        h = self.kernel.gram(self.support_x)
        self.gram = h
        self.factor: SPDFactor | None = None
        self.transfer: np.ndarray | None = None
        if self.t == 0.0:
            self.coef = np.zeros(self._flat(self.residual).shape)
            return
        self.factor, self.transfer = transfer_matrix(h, n, self.t, pade_order, jitter)
        self.coef = self.transfer @ self._flat(self.residual)

    def _flat(self, r: np.ndarray) -> np.ndarray:
        return r.reshape(-1, 1) if self.kernel.blockwise else r

    def _unflat(self, v: np.ndarray, m: int) -> np.ndarray:
        return v.reshape(m, -1)

    @property
    def jitter(self) -> float:
        return self.factor.jitter if self.factor is not None else 0.0

    @property
    def escalated(self) -> bool:
        return self.factor is not None and self.factor.escalations > 0

    def correction(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        k = self.kernel.cross(x, self.support_x)
        return self._unflat(k @ self.coef, x.shape[0])

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        base = nw.predict(self.spec, self.theta, x)
        if self.t == 0.0:
            return base
        return base + self.correction(x)

    __call__ = predict

    def input_grad(self, x, cotangent, freeze_kernel_row: bool = False) -> np.ndarray:
        """Gradient of ``sum(cotangent * predict(x))`` with respect to ``x``.

        The kernel-row term is differentiated too unless ``freeze_kernel_row``.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        cot = np.asarray(cotangent, dtype=np.float64).reshape(x.shape[0], -1)
        grad = nw.input_grad(self.spec, self.theta, x, cot)
        if self.t == 0.0 or freeze_kernel_row:
            return grad
        if isinstance(self.kernel, RBFKernel):
            k = self.kernel.cross(x, self.support_x)  # (m, n)
            w = k * (cot @ self.coef.T)  # (m, n)
            bw2 = self.kernel.bandwidth**2
            return grad - (w.sum(1)[:, None] * x - w @ self.support_x) / bw2
        return grad + self._ntk_row_grad(x, cot)

    def _ntk_row_grad(self, x, cot) -> np.ndarray:
        kern = self.kernel
        jx = nw.jacobians(kern.spec, kern.theta, self.support_x)  # (n, d_y, P)
        n, dy, p = jx.shape
        out = np.zeros_like(x)
        zeros = np.zeros((1, dy))
        for i in range(x.shape[0]):
            xi = x[i : i + 1]
            if kern.blockwise:
                # K(x, X) v = J(x) g with g = J_X^T v
                g = jx.reshape(n * dy, p).T @ self.coef.ravel()
                out[i] = nw.tangent_input_grad(kern.spec, kern.theta, g, xi, zeros, cot[i : i + 1])[0]
                continue
            w = self.coef @ cot[i]  # (n,)
            for k in range(dy):
                d = jx[:, k, :].T @ w
                ck = np.zeros((1, dy))
                ck[0, k] = 1.0
                out[i] += nw.tangent_input_grad(kern.spec, kern.theta, d, xi, zeros, ck)[0]
        return out


def adapt_closed_form(spec: NetworkSpec, theta, support_x, support_y, t: float, pade_order: int = 2,
                      kernel=None, jitter: float = 1e-8, kernel_mode: str = "full") -> AdaptedPredictor:
    """Closed-form kernel-flow adaptation of the meta model to a support set."""
    if kernel is None:
        kernel = NTKKernel(spec, theta, kernel_mode)
    return AdaptedPredictor(spec, theta, support_x, support_y, t, kernel, pade_order, jitter)


def _task_kernel(spec, theta, config: MetaConfig, kernel_theta=None):
    th = theta if kernel_theta is None else kernel_theta
    return make_kernel(spec, th, config.kernel, config.kernel_mode, config.rbf_bandwidth)


def _rkhs2_targets(task, spec: NetworkSpec):
    """Regression targets for closed-form adaptation; class labels get encoded."""
    sy, qy = task.support_y, task.query_y
    if spec.output_dim > 1 and np.asarray(sy).ndim == 1:
        sy = encode_labels(sy, spec.output_dim)
        qy = encode_labels(qy, spec.output_dim)
    return np.asarray(sy, dtype=np.float64), np.asarray(qy, dtype=np.float64)


def adapt_task(spec: NetworkSpec, theta, task, t: float, config: MetaConfig, kernel_theta=None):
    sy, _ = _rkhs2_targets(task, spec)
    kernel = _task_kernel(spec, theta, config, kernel_theta)
    return AdaptedPredictor(spec, theta, task.support_x, sy, t, kernel, config.pade_order, config.kernel_jitter)


# ---------------------------------------------------------------- Meta-RKHS-II


def meta_rkhs_2_task(spec: NetworkSpec, theta, task, t: float, config: MetaConfig,
                     kernel_theta=None, with_grad: bool = True):
    """Query loss after closed-form adaptation and its meta-gradient.

    With ``config.stop_gradient_kernel`` the kernel matrices (and their
    exponential) are constants; otherwise their dependence on ``theta`` is
    differentiated too (see :func:`_kernel_dependence_grad`).
    """
    _, qy = _rkhs2_targets(task, spec)
    pred = adapt_task(spec, theta, task, t, config, kernel_theta)
    out = pred.predict(task.query_x)
    m = out.shape[0]
    r = out - qy.reshape(out.shape)
    value = 0.5 * float(np.sum(r * r)) / m
    if not with_grad:
        return value, None
    grad = nw.vjp(spec, theta, task.query_x, r / m)
    if pred.t != 0.0:
        rf = pred._flat(r / m)
        k = pred.kernel.cross(task.query_x, pred.support_x)
        w = pred.transfer.T @ (k.T @ rf)
        grad = grad + nw.vjp(spec, theta, pred.support_x, w.reshape(pred.n, -1))
        if not config.stop_gradient_kernel and isinstance(pred.kernel, NTKKernel):
            if kernel_theta is not None:
                raise ValueError("kernel_theta freezes the kernel; it cannot be combined with the full gradient")
            g_k = rf @ pred.coef.T
            g_a = k.T @ rf @ pred._flat(pred.residual).T
            g_h = _transfer_adjoint(pred.gram, pred.n, pred.t, pred.jitter, g_a)
            grad = grad + _kernel_dependence_grad(spec, theta, task.query_x, pred.support_x, g_k, g_h,
                                                  pred.kernel.blockwise, config.hvp_step)
    return value, grad


def _phi(lam: np.ndarray, t: float, n: int, jitter: float) -> np.ndarray:
    # A = phi(H): expm1(-t lam / n) / (lam + jitter), or -1 / (lam + jitter) at t = inf
    if math.isinf(t):
        return -1.0 / (lam + jitter)
    return np.expm1(-(t / n) * lam) / (lam + jitter)


def _dphi(lam: np.ndarray, t: float, n: int, jitter: float) -> np.ndarray:
    mu = lam + jitter
    if math.isinf(t):
        return 1.0 / (mu * mu)
    c = t / n
    s = c * lam
    return (-c * np.exp(-s) * mu - np.expm1(-s)) / (mu * mu)


def _transfer_adjoint(h: np.ndarray, n: int, t: float, jitter: float, g_a: np.ndarray) -> np.ndarray:
    """Pull a cotangent on ``A = phi(H)`` back to ``H`` (Daleckii-Krein divided differences)."""
    lam, u = np.linalg.eigh(h)
    f = _phi(lam, t, n, jitter)
    d = _dphi(lam, t, n, jitter)
    dl = lam[:, None] - lam[None, :]
    close = np.abs(dl) <= 1e-7 * max(float(np.abs(lam).max()), 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        div = np.where(close, 0.5 * (d[:, None] + d[None, :]), (f[:, None] - f[None, :]) / np.where(close, 1.0, dl))
    return u @ (div * (u.T @ g_a @ u)) @ u.T


def _output_hvp(spec: NetworkSpec, theta, x, c: int, g, step: float) -> np.ndarray:
    """``grad_theta [J_c(x) . g]`` by central differences of a single-output VJP."""
    ng = float(np.linalg.norm(g))
    if ng == 0.0:
        return np.zeros_like(theta)
    h = step * (1.0 + float(np.max(np.abs(theta))))
    cot = np.zeros((1, spec.output_dim))
    cot[0, c] = 1.0
    u = g / ng
    return (nw.vjp(spec, theta + h * u, x, cot) - nw.vjp(spec, theta - h * u, x, cot)) * (ng / (2.0 * h))


def _kernel_dependence_grad(spec: NetworkSpec, theta, qx, sx, g_k, g_h, blockwise: bool,
                            step: float) -> np.ndarray:
    """``grad_theta`` of ``<G_K, K(Q, X)> + <G_H, H(X, X)>`` through the Jacobians inside the kernels."""
    jq = nw.jacobians(spec, theta, qx)  # (m, d, P)
    jx = nw.jacobians(spec, theta, sx)  # (n, d, P)
    m, d, _ = jq.shape
    n = jx.shape[0]
    gh = g_h + g_h.T
    if blockwise:
        gk4 = g_k.reshape(m, d, n, d)
        gh4 = gh.reshape(n, d, n, d)
        dir_q = np.einsum("acbe,bep->acp", gk4, jx)
        dir_x = np.einsum("acbe,acp->bep", gk4, jq) + np.einsum("acbe,bep->acp", gh4, jx)
    else:
        dir_q = np.einsum("ab,bcp->acp", g_k, jx)
        dir_x = np.einsum("ab,acp->bcp", g_k, jq) + np.einsum("ab,bcp->acp", gh, jx)
    grad = np.zeros_like(theta)
    for x, dirs in ((qx, dir_q), (sx, dir_x)):
        for a in range(dirs.shape[0]):
            for c in range(d):
                grad = grad + _output_hvp(spec, theta, x[a : a + 1], c, dirs[a, c], step)
    return grad


def meta_rkhs_2_objective(spec: NetworkSpec, theta, tasks, t: float, config: MetaConfig,
                          kernel_theta=None) -> float:
    return _mean([meta_rkhs_2_task(spec, theta, task, t, config, kernel_theta, with_grad=False)[0]
                  for task in tasks])


def meta_rkhs_2_grad(spec: NetworkSpec, theta, tasks, t: float, config: MetaConfig) -> np.ndarray:
    """Meta-gradient; frozen-kernel unless ``config.stop_gradient_kernel`` is false."""
    return _mean_vec([meta_rkhs_2_task(spec, theta, task, t, config)[1] for task in tasks])


# ---------------------------------------------------------------- labels


def encode_labels(labels, n_classes: int) -> np.ndarray:
    """Zero-mean targets: ``(C-1)/C`` at the true class, ``-1/C`` elsewhere."""
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    out = np.full((labels.size, n_classes), -1.0 / n_classes)
    out[np.arange(labels.size), labels] = (n_classes - 1) / n_classes
    return out


def decode_labels(scores) -> np.ndarray:
    return np.argmax(np.asarray(scores), axis=1)


# ---------------------------------------------------------------- MAML family


def maml_task(spec: NetworkSpec, theta, task, alpha: float, k: int, variant: str = "maml",
              hvp_step: float = 1e-5, loss_kind: str = "squared") -> tuple[float, np.ndarray]:
    """Meta-loss and meta-gradient (or Reptile displacement) for one task.

    ``maml`` back-propagates the query gradient through the inner loop as
    ``prod (I - alpha H_i)`` using finite-difference Hessian products,
    ``fomaml`` drops that Jacobian, and ``reptile`` returns ``theta - phi``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    sx, sy = task.support_x, task.support_y
    path = [theta]
    phi = theta
    last = 0.0
    for _ in range(k):
        last, g = nw.loss_and_grad(spec, phi, sx, sy, loss_kind)
        phi = phi - alpha * g
        path.append(phi)
    if variant == "reptile":
        return last, theta - phi
    qloss, v = nw.loss_and_grad(spec, phi, task.query_x, task.query_y, loss_kind)
    if variant == "fomaml":
        return qloss, v
    if variant != "maml":
        raise ValueError(f"unknown variant {variant!r}")
    for i in range(k - 1, -1, -1):
        v = v - alpha * hvp(spec, path[i], sx, sy, v, hvp_step, loss_kind)
    return qloss, v


def maml_meta_grad(spec: NetworkSpec, theta, tasks, alpha: float, k: int, hvp_step: float = 1e-5,
                   variant: str = "maml", loss_kind: str = "squared") -> np.ndarray:
    return _mean_vec([maml_task(spec, theta, t, alpha, k, variant, hvp_step, loss_kind)[1] for t in tasks])


# ---------------------------------------------------------------- Taylor gap


def taylor_m_k(spec: NetworkSpec, theta, tasks, alpha: float, k: int, loss_kind: str = "squared",
               split: bool = False) -> float:
    """``mean[L(theta) - sum_{i<k} alpha grad L(theta_i) . grad L(theta)]`` along the inner path."""
    vals = []
    for task in tasks:
        x, y = _task_batch(task, split)
        value, g0 = nw.loss_and_grad(spec, theta, x, y, loss_kind)
        phi, g = theta, g0
        acc = 0.0
        for i in range(k):
            if i:
                g = nw.grad_loss(spec, phi, x, y, loss_kind)
            acc += alpha * float(g @ g0)
            phi = phi - alpha * g
        vals.append(value - acc)
    return _mean(vals)


def taylor_gap(spec: NetworkSpec, theta, tasks, alpha: float, k: int, loss_kind: str = "squared",
               split: bool = False) -> float:
    """``|M_k - E~(k alpha)|``: k explicit steps versus the one-shot regularizer."""
    mk = taylor_m_k(spec, theta, tasks, alpha, k, loss_kind, split)
    return abs(mk - meta_rkhs_1_objective(spec, theta, tasks, k * alpha, loss_kind, split))
