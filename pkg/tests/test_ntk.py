import numpy as np
import pytest
from conftest import conv_spec, dense_spec, random_theta
from hypothesis import given
from hypothesis import strategies as st

from rkhsmeta import network as nw
from rkhsmeta import ntk


def test_gram_symmetric_psd():
    spec = dense_spec(2, 6, d_y=2)
    theta = random_theta(spec, 0)
    x = np.random.default_rng(0).standard_normal((5, 3))
    for mode, size in (("full", 10), ("scalar", 5)):
        h = ntk.gram(spec, theta, x, mode)
        assert h.shape == (size, size)
        assert np.array_equal(h, h.T)
        assert np.linalg.eigvalsh(h).min() >= -1e-10 * np.abs(h).max()


def test_scalar_is_trace_of_full_blocks():
    spec = dense_spec(2, 6, d_y=3)
    theta = random_theta(spec, 1)
    x = np.random.default_rng(1).standard_normal((4, 3))
    full = ntk.gram(spec, theta, x, "full").reshape(4, 3, 4, 3)
    np.testing.assert_allclose(ntk.gram(spec, theta, x, "scalar"), np.einsum("acbc->ab", full), atol=1e-12)


def test_modes_coincide_for_single_output():
    spec = dense_spec(2, 6)
    theta = random_theta(spec, 2)
    x = np.random.default_rng(2).standard_normal((4, 3))
    np.testing.assert_allclose(ntk.gram(spec, theta, x, "full"), ntk.gram(spec, theta, x, "scalar"))


def test_entry_cross_and_gram_agree():
    spec = dense_spec(1, 5, d_y=2)
    theta = random_theta(spec, 3)
    x = np.random.default_rng(3).standard_normal((3, 3))
    h = ntk.gram(spec, theta, x, "full")
    np.testing.assert_allclose(ntk.cross_gram(spec, theta, x, x, "full"), h, atol=1e-12)
    np.testing.assert_allclose(ntk.ntk_entry(spec, theta, x[0], x[2]), h[0:2, 4:6], atol=1e-12)
    assert ntk.cross_gram(spec, theta, x[0], x, "scalar").shape == (1, 3)


def test_bad_mode():
    with pytest.raises(ValueError):
        ntk.gram(dense_spec(), np.zeros(dense_spec().n_params), np.zeros((2, 3)), "diag")


@given(st.integers(0, 10_000))
def test_ntk_entry_is_kernel_of_linearization(seed):
    # f(theta + e d) - f(theta) ~ e J d  and  K(x1, x2) = J1 J2^T
    spec = dense_spec(2, 5)
    theta = random_theta(spec, seed)
    rng = np.random.default_rng(seed)
    x1, x2 = rng.standard_normal(3), rng.standard_normal(3)
    d = nw.jacobian(spec, theta, x2)[0]
    e = 1e-6
    lin = (nw.predict(spec, theta + e * d, x1) - nw.predict(spec, theta - e * d, x1))[0, 0] / (2 * e)
    assert lin == pytest.approx(ntk.ntk_entry(spec, theta, x1, x2)[0, 0], rel=1e-5, abs=1e-8)


# kernel-norm identity: the RKHS norm of the functional gradient equals ||grad_theta L||^2
IDENTITY_SPECS = [dense_spec(1, 6), dense_spec(2, 5, d_y=3), dense_spec(3, 4, d_y=2), conv_spec(d_y=2)]


@pytest.mark.parametrize("spec", IDENTITY_SPECS, ids=["L1", "L2", "L3", "conv"])
@pytest.mark.parametrize("kind", ["squared", "cross_entropy"])
def test_kernel_norm_identity(spec, kind):
    if kind == "cross_entropy" and spec.output_dim < 2:
        pytest.skip("cross-entropy needs two or more outputs")
    rng = np.random.default_rng(7)
    theta = random_theta(spec, 7)
    x = rng.standard_normal((5, spec.input_dim))
    y = rng.integers(0, spec.output_dim, 5) if kind == "cross_entropy" else rng.standard_normal((5, spec.output_dim))
    g = nw.grad_loss(spec, theta, x, y, kind)
    k = ntk.functional_grad_norm_sq(spec, theta, x, y, kind)
    assert abs(k - g @ g) <= 1e-8 * (g @ g)


# ---------------------------------------------------------------- RBF


def test_rbf_gram_properties():
    x = np.random.default_rng(0).standard_normal((6, 2))
    k = ntk.rbf_gram(x, 0.7)
    assert np.all(np.diag(k) == 1.0)
    assert np.array_equal(k, k.T)
    assert np.all((k > 0) & (k <= 1))
    np.testing.assert_allclose(k[0, 1], np.exp(-np.sum((x[0] - x[1]) ** 2) / (2 * 0.49)))


def test_rbf_bandwidth_checks_and_median():
    with pytest.raises(ValueError):
        ntk.RBFKernel(0.0)
    x = np.array([[0.0], [1.0], [3.0]])
    assert ntk.median_bandwidth(x) == 2.0
    assert ntk.median_bandwidth(np.zeros((1, 1))) == 1.0
    assert ntk.RBFKernel().bind(x).bandwidth == 2.0
    assert ntk.RBFKernel(0.5).bind(x).bandwidth == 0.5


def test_sq_distances_nonnegative():
    x = np.random.default_rng(0).standard_normal((5, 3)) * 1e8
    assert np.all(ntk.sq_distances(x, x) >= 0)
