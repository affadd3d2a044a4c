import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from rkhsmeta.linalg import (
    DimensionError,
    KernelSingularError,
    PadeSingularError,
    default_jitter,
    expm_oracle,
    expm_scaled,
    factor_spd,
    matmul,
    min_eigenvalue_estimate,
    pade_expm,
    power_iteration,
    solve_spd,
    spectral_norm,
)


def spd(n, seed, cond_shift=1.0):
    g = np.random.default_rng(seed).standard_normal((n, n + 2))
    return g @ g.T + cond_shift * np.eye(n)


# ---------------------------------------------------------------- products and solves


def test_matmul_checks_shapes():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    assert matmul(np.ones((2, 3)), np.ones((3, 4))).shape == (2, 4)


def test_solve_spd_identity():
    b = np.arange(4.0)
    np.testing.assert_array_equal(solve_spd(np.eye(4), b), b)


@given(st.integers(1, 12), st.integers(0, 10_000))
def test_solve_spd_residual(n, seed):
    a = spd(n, seed)
    b = np.random.default_rng(seed + 1).standard_normal((n, 2))
    x = solve_spd(a, b)
    assert np.linalg.norm(a @ x - b) <= 1e-10 * np.linalg.norm(a) * np.linalg.norm(x) + 1e-12


def test_factor_spd_no_escalation_for_well_conditioned():
    f = factor_spd(spd(6, 0))
    assert f.jitter == 0.0 and f.escalations == 0


def test_factor_spd_escalates_on_singular():
    v = np.random.default_rng(0).standard_normal((5, 2))
    a = v @ v.T  # rank 2
    f = factor_spd(a, 0.0, first_jitter=default_jitter(a))
    assert f.escalations >= 1
    assert f.jitter >= default_jitter(a)
    # the recorded jitter is the one the factor actually represents
    np.testing.assert_allclose(f.chol @ f.chol.T, a + f.jitter * np.eye(5), atol=1e-12)


def test_factor_spd_gives_up_with_diagnostics():
    a = -np.eye(3)
    with pytest.raises(KernelSingularError) as info:
        factor_spd(a, 0.0, max_jitter=1e-3)
    assert str(info.value).startswith("kernel-singular")
    assert info.value.min_pivot <= 0
    assert info.value.jitter <= 1e-3


def test_factor_spd_rejects_asymmetric_and_nonsquare():
    with pytest.raises(ValueError):
        factor_spd(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(DimensionError):
        factor_spd(np.ones((2, 3)))
    with pytest.raises(ValueError):
        factor_spd(np.eye(2), jitter=-1.0)


def test_solve_rejects_mismatched_rhs():
    with pytest.raises(DimensionError):
        factor_spd(np.eye(3)).solve(np.ones(4))


def test_inputs_not_mutated():
    a = spd(4, 3)
    a0 = a.copy()
    b = np.ones(4)
    solve_spd(a, b)
    expm_scaled(-a)
    np.testing.assert_array_equal(a, a0)
    np.testing.assert_array_equal(b, np.ones(4))


# ---------------------------------------------------------------- Pade and expm


@given(st.floats(-1.9, 1.9))
def test_pade_scalar_formulas(a):
    m = np.array([[a]])
    p1 = (1 + a / 2) / (1 - a / 2)
    p2 = (1 + a / 2 + a * a / 12) / (1 - a / 2 + a * a / 12)
    assert pade_expm(m, 1)[0, 0] == pytest.approx(p1, rel=1e-15, abs=0)
    assert pade_expm(m, 2)[0, 0] == pytest.approx(p2, rel=1e-15, abs=0)


def test_pade_rejects_bad_order():
    with pytest.raises(ValueError):
        pade_expm(np.eye(2), 3)


def test_pade_singular_denominator_is_reported():
    with pytest.raises(PadeSingularError) as info:
        pade_expm(np.array([[2.0]]), 1)
    assert "pade-singular" in str(info.value)
    assert "scal" in str(info.value)


def test_pade_zero_is_identity():
    for order in (1, 2):
        np.testing.assert_array_equal(pade_expm(np.zeros((3, 3)), order), np.eye(3))


@pytest.mark.parametrize("a", np.linspace(-100.0, 100.0, 41))
def test_expm_oracle_scalar(a):
    assert expm_oracle(np.array([[a]]))[0, 0] == pytest.approx(math.exp(a), rel=1e-10)


@given(st.integers(1, 8), st.integers(0, 10_000), st.floats(0.01, 20.0))
def test_expm_matches_scipy(n, seed, scale):
    a = np.random.default_rng(seed).standard_normal((n, n)) * scale / n
    ref = sla.expm(a)
    got = expm_oracle(a)
    assert np.linalg.norm(got - ref) <= 1e-9 * max(np.linalg.norm(ref), 1.0)


@given(st.integers(1, 8), st.integers(0, 10_000), st.floats(0.0, 1e3), st.sampled_from([1, 2]))
def test_expm_contracts_on_psd(n, seed, t, order):
    h = spd(n, seed, 0.0)
    e = expm_scaled(-t * h, order)
    assert np.max(np.abs(np.linalg.eigvals(e))) <= 1 + 1e-9


@given(st.integers(1, 6), st.integers(0, 10_000))
def test_expm_inverse_pair(n, seed):
    a = np.random.default_rng(seed).standard_normal((n, n))
    np.testing.assert_allclose(expm_oracle(a) @ expm_oracle(-a), np.eye(n), atol=1e-9)


def test_order1_less_accurate_than_order2_without_enough_scaling():
    a = np.array([[-1.0]])
    e1 = abs(pade_expm(a, 1)[0, 0] - math.exp(-1))
    e2 = abs(pade_expm(a, 2)[0, 0] - math.exp(-1))
    assert e2 < e1


def test_expm_of_huge_argument_underflows_gracefully():
    e = expm_scaled(np.array([[-1e6]]))
    assert 0.0 <= e[0, 0] < 1e-300 or e[0, 0] == 0.0


# ---------------------------------------------------------------- spectral estimates


@given(st.integers(1, 10), st.integers(0, 10_000))
def test_spectral_norm(n, seed):
    w = np.random.default_rng(seed).standard_normal((n, n + 1))
    assert spectral_norm(w, iters=500, tol=1e-12) == pytest.approx(np.linalg.norm(w, 2), rel=1e-5)


def test_spectral_norm_of_zero():
    assert spectral_norm(np.zeros((3, 2))) == 0.0


def test_power_iteration_dominant():
    lam, v = power_iteration(np.diag([1.0, -5.0, 2.0]), iters=200, tol=1e-14)
    assert lam == pytest.approx(5.0)
    assert abs(v[1]) == pytest.approx(1.0, abs=1e-6)


def test_min_eigenvalue_estimate():
    h = spd(6, 4)
    assert min_eigenvalue_estimate(h, iters=2000) == pytest.approx(np.linalg.eigvalsh(h)[0], rel=1e-4)
