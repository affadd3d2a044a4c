"""Dense float64 linear algebra used by the kernel and adaptation code.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64; nothing in
this module mutates its inputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

__all__ = [
    "DimensionError",
    "KernelSingularError",
    "PadeSingularError",
    "SPDFactor",
    "as_matrix",
    "matmul",
    "factor_spd",
    "solve_spd",
    "pade_expm",
    "expm_scaled",
    "expm_oracle",
    "power_iteration",
    "spectral_norm",
    "min_eigenvalue_estimate",
    "default_jitter",
]

PADE_ORDERS = (1, 2)
# leading error constant (p!)^2 / ((2p)! (2p+1)!) of the diagonal [p/p] approximant
_PADE_ERROR_CONST = {1: 1.0 / 12.0, 2: 1.0 / 720.0}


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class KernelSingularError(np.linalg.LinAlgError):
    """Cholesky factorization failed even at the maximum jitter."""

    def __init__(self, min_pivot: float, jitter: float):
        self.min_pivot = float(min_pivot)
        self.jitter = float(jitter)
        super().__init__(
            f"kernel-singular: factorization failed at jitter {jitter:.3g} "
            f"(smallest pivot {min_pivot:.3g})"
        )


class PadeSingularError(np.linalg.LinAlgError):
    def __init__(self, order: int, norm: float):
        self.order = order
        self.norm = norm
        super().__init__(
            f"pade-singular: order-{order} denominator is singular for a matrix of "
            f"1-norm {norm:.3g}; scale the argument down (scaling-and-squaring)"
        )


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(-1, 1)
    if a.ndim != 2:
        raise DimensionError(f"expected a matrix, got array of shape {a.shape}")
    return a


def _require_square(a: np.ndarray, what: str) -> None:
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"{what} must be square, got shape {a.shape}")


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def default_jitter(h: np.ndarray, scale: float = 1e-8) -> float:
    """Jitter proportional to the mean diagonal of a kernel matrix."""
    d = float(np.mean(np.diag(h)))
    return scale * d if d > 0 else scale


@dataclass(frozen=True)
class SPDFactor:
    """Lower Cholesky factor of ``a + jitter * I``.

    ``jitter`` is the value actually used; ``escalations`` counts how many
    times it had to be raised above the requested value.
    """

    chol: np.ndarray
    jitter: float
    escalations: int

    @property
    def n(self) -> int:
        return self.chol.shape[0]

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        vec = b.ndim == 1
        b2 = b.reshape(-1, 1) if vec else b
        if b2.shape[0] != self.n:
            raise DimensionError(f"cannot solve ({self.n}, {self.n}) system with rhs {b.shape}")
        y = sla.solve_triangular(self.chol, b2, lower=True, check_finite=False)
        x = sla.solve_triangular(self.chol.T, y, lower=False, check_finite=False)
        return x.ravel() if vec else x


def _smallest_pivot(a: np.ndarray) -> float:
    # unpivoted outer-product Cholesky, stopping at the first non-positive pivot
    m = np.array(a, dtype=np.float64, copy=True)
    n = m.shape[0]
    smallest = math.inf
    for j in range(n):
        p = m[j, j]
        smallest = min(smallest, p)
        if not p > 0:
            break
        col = m[j + 1 :, j] / math.sqrt(p)
        m[j + 1 :, j + 1 :] -= np.outer(col, col)
    return float(smallest)


def factor_spd(
    a,
    jitter: float = 0.0,
    max_jitter: float | None = None,
    first_jitter: float | None = None,
    min_rcond: float = 1e-12,
) -> SPDFactor:
    """Cholesky-factor ``a + jitter*I``, escalating the jitter x10 on failure.

    A factorization also counts as failed when the squared ratio of the
    smallest to largest Cholesky pivot falls below ``min_rcond``.  When the
    current jitter is 0 the first escalation uses ``first_jitter`` (default
    1e-12 times the mean absolute diagonal); ``max_jitter`` defaults to 1e-2
    times that diagonal scale.
    """
    a = as_matrix(a)
    _require_square(a, "a")
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > 1e-10 * max(1.0, float(np.max(np.abs(a))) if a.size else 1.0):
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    n = a.shape[0]
    scale = float(np.mean(np.abs(np.diag(a)))) if n else 1.0
    scale = scale if scale > 0 else 1.0
    if max_jitter is None:
        max_jitter = 1e-2 * scale
    if first_jitter is None or first_jitter <= 0:
        first_jitter = 1e-12 * scale
    eye = np.eye(n)
    current = float(jitter)
    escalations = 0
    while True:
        try:
            chol = np.linalg.cholesky(a + current * eye)
            d = np.diag(chol)
            if np.all(np.isfinite(chol)) and (n == 0 or (d.min() / d.max()) ** 2 >= min_rcond):
                return SPDFactor(chol, current, escalations)
        except np.linalg.LinAlgError:
            pass
        nxt = current * 10.0 if current > 0 else first_jitter
        if nxt > max_jitter * (1 + 1e-12):
            raise KernelSingularError(_smallest_pivot(a + current * eye), current)
        current = nxt
        escalations += 1


def solve_spd(a, b, jitter: float = 0.0, max_jitter: float | None = None) -> np.ndarray:
    """Solve ``(a + jitter*I) x = b`` for symmetric positive-definite ``a``."""
    return factor_spd(a, jitter, max_jitter).solve(b)


def _pade_terms(a: np.ndarray, order: int):
    n = a.shape[0]
    eye = np.eye(n)
    half = 0.5 * a
    if order == 1:
        return eye + half, eye - half
    a2 = (a @ a) / 12.0
    return eye + half + a2, eye - half + a2


def pade_expm(a, order: int = 2) -> np.ndarray:
    """Diagonal [order/order] Pade approximant of ``exp(a)`` without scaling.

    The denominator is handled by an LU solve, never by forming an inverse.
    """
    if order not in PADE_ORDERS:
        raise ValueError(f"pade order must be one of {PADE_ORDERS}, got {order}")
    a = as_matrix(a)
    _require_square(a, "a")
    num, den = _pade_terms(a, order)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)  # singularity is checked below
        lu, piv = sla.lu_factor(den, check_finite=False)
    u = np.abs(np.diag(lu))
    if u.size and (not np.all(np.isfinite(u)) or u.min() <= 1e-14 * max(u.max(), 1.0)):
        raise PadeSingularError(order, float(np.linalg.norm(a, 1)))
    return sla.lu_solve((lu, piv), num, check_finite=False)


def _squarings(norm: float, order: int, rtol: float) -> int:
    # smallest s with x = ||A||/2^s <= 1/2 and ||A|| * c * x^(2p) <= rtol
    if norm == 0.0:
        return 0
    c = _PADE_ERROR_CONST[order]
    x_max = min(0.5, (rtol / (c * max(norm, 1.0))) ** (1.0 / (2 * order)))
    return max(0, math.ceil(math.log2(norm / x_max)))


def expm_scaled(a, order: int = 2, rtol: float = 1e-12) -> np.ndarray:
    """Scaling-and-squaring around :func:`pade_expm`.

    The number of squarings is chosen so that the leading truncation error
    bound of the scaled approximant, propagated through the squarings, is
    below ``rtol``.
    """
    a = as_matrix(a)
    _require_square(a, "a")
    s = _squarings(float(np.linalg.norm(a, 1)) if a.size else 0.0, order, rtol)
    e = pade_expm(a / 2.0**s, order)
    for _ in range(s):
        e = e @ e
    return e


def expm_oracle(a) -> np.ndarray:
    """Reference matrix exponential (order-2 Pade, scaling and squaring)."""
    return expm_scaled(a, order=2, rtol=1e-12)


def power_iteration(
    a,
    iters: int = 50,
    tol: float = 1e-8,
    seed: int = 0,
) -> tuple[float, np.ndarray]:
    """Dominant eigenvalue magnitude of a symmetric matrix and its vector."""
    a = as_matrix(a)
    _require_square(a, "a")
    n = a.shape[0]
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = a @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, v
        v_new = w / nw
        done = abs(nw - lam) <= tol * max(nw, 1.0)
        lam, v = nw, v_new
        if done:
            break
    return float(lam), v


def spectral_norm(w, iters: int = 50, tol: float = 1e-8, seed: int = 0) -> float:
    """Largest singular value via power iteration on ``W^T W``."""
    w = as_matrix(w)
    if not np.any(w):
        return 0.0
    small = w.T @ w if w.shape[1] <= w.shape[0] else w @ w.T
    lam, _ = power_iteration(small, iters=iters, tol=tol * tol, seed=seed)
    return math.sqrt(lam)


def min_eigenvalue_estimate(h, iters: int = 200, seed: int = 0) -> float:
    """Smallest eigenvalue of a symmetric matrix via power iteration on ``shift*I - h``."""
    h = as_matrix(h)
    _require_square(h, "h")
    shift = float(np.linalg.norm(h, 1))
    if shift == 0.0:
        return 0.0
    lam, v = power_iteration(shift * np.eye(h.shape[0]) - h, iters=iters, tol=1e-14, seed=seed)
    # Rayleigh quotient is more accurate than shift - lam
    return float(v @ h @ v)
