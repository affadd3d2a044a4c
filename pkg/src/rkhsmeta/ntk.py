"""Empirical neural tangent kernels of a finite network, plus an RBF kernel.

Two layouts are supported for multi-output networks:

``"full"``
    the matrix-valued kernel; a Gram matrix over ``n`` samples is
    ``(n*d_y, n*d_y)`` with sample-major blocks of size ``d_y``.
``"scalar"``
    the output-summed kernel ``sum_c J_c(x1) . J_c(x2)``, an ``n x n`` matrix
    applied column-wise to ``(n, d_y)`` targets.

For ``d_y = 1`` the two coincide.
"""

from __future__ import annotations

import numpy as np

from . import network as nw
from .network import NetworkSpec

KERNEL_MODES = ("full", "scalar")


def _check_mode(mode: str) -> None:
    if mode not in KERNEL_MODES:
        raise ValueError(f"kernel mode must be one of {KERNEL_MODES}, got {mode!r}")


def _symmetrize(h: np.ndarray) -> np.ndarray:
    return 0.5 * (h + h.T)


def ntk_entry(spec: NetworkSpec, theta, x1, x2) -> np.ndarray:
    """``J(x1) J(x2)^T`` as a ``(d_y, d_y)`` block."""
    return nw.jacobian(spec, theta, x1) @ nw.jacobian(spec, theta, x2).T


def _products(ja: np.ndarray, jb: np.ndarray, mode: str) -> np.ndarray:
    na, dy, p = ja.shape
    nb = jb.shape[0]
    if mode == "full":
        return ja.reshape(na * dy, p) @ jb.reshape(nb * dy, p).T
    return np.einsum("acp,bcp->ab", ja, jb)


def gram_from_jacobians(jac: np.ndarray, mode: str = "full") -> np.ndarray:
    _check_mode(mode)
    return _symmetrize(_products(jac, jac, mode))


def gram(spec: NetworkSpec, theta, x, mode: str = "full") -> np.ndarray:
    """Kernel matrix over a batch, exactly symmetric."""
    _check_mode(mode)
    return gram_from_jacobians(nw.jacobians(spec, theta, x), mode)


def cross_gram(spec: NetworkSpec, theta, q, x, mode: str = "full") -> np.ndarray:
    """Kernel rows between query points ``q`` and a reference batch ``x``.

    A single query gives ``(d_y, n*d_y)`` in full mode and ``(1, n)`` in
    scalar mode; batches of queries stack these row-blocks.
    """
    _check_mode(mode)
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, :]
    return _products(nw.jacobians(spec, theta, q), nw.jacobians(spec, theta, x), mode)


def functional_grad_norm_sq(spec: NetworkSpec, theta, x, y, loss_kind: str = "squared") -> float:
    """Squared RKHS norm of the functional gradient of the empirical loss.

    Evaluated only through kernel entries:
    ``(1/n^2) sum_ij c_i^T Theta(x_i, x_j) c_j`` with ``c_i`` the derivative of
    the per-sample cost with respect to the network output.
    """
    out = nw.predict(spec, theta, x)
    n = out.shape[0]
    _, c = nw.loss_terms(out, y, loss_kind)
    h = gram(spec, theta, x, mode="full")
    cv = c.reshape(-1)
    return float(cv @ h @ cv) / n**2


def sq_distances(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def rbf_cross(q, x, bandwidth: float) -> np.ndarray:
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    return np.exp(-sq_distances(q, x) / (2.0 * bandwidth**2))


def rbf_gram(x, bandwidth: float) -> np.ndarray:
    k = _symmetrize(rbf_cross(x, x, bandwidth))
    np.fill_diagonal(k, 1.0)
    return k


def median_bandwidth(x) -> float:
    """Median pairwise distance, falling back to 1.0 for degenerate sets."""
    d = np.sqrt(sq_distances(x, x))
    iu = np.triu_indices(d.shape[0], k=1)
    if iu[0].size == 0:
        return 1.0
    med = float(np.median(d[iu]))
    return med if med > 0 else 1.0


class NTKKernel:
    """Empirical NTK frozen at one parameter vector."""

    def __init__(self, spec: NetworkSpec, theta, mode: str = "full"):
        _check_mode(mode)
        self.spec = spec
        self.theta = np.asarray(theta, dtype=np.float64)
        self.mode = mode

    @property
    def blockwise(self) -> bool:
        return self.mode == "full" and self.spec.output_dim > 1

    def gram(self, x) -> np.ndarray:
        return gram(self.spec, self.theta, x, self.mode)

    def cross(self, q, x) -> np.ndarray:
        return cross_gram(self.spec, self.theta, q, x, self.mode)


class RBFKernel:
    """Gaussian kernel used as a drop-in alternative to the NTK (scalar layout)."""

    blockwise = False
    mode = "scalar"

    def __init__(self, bandwidth: float | None = None):
        if bandwidth is not None and not bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        self.bandwidth = bandwidth

    def bind(self, x) -> "RBFKernel":
        """Fix the bandwidth by the median heuristic on ``x`` if unset."""
        if self.bandwidth is not None:
            return self
        return RBFKernel(median_bandwidth(x))

    def gram(self, x) -> np.ndarray:
        return rbf_gram(x, self.bandwidth)

    def cross(self, q, x) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if q.ndim == 1:
            q = q[None, :]
        return rbf_cross(q, x, self.bandwidth)
