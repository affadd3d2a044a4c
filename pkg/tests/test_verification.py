import math

import numpy as np
import pytest
from conftest import dense_spec, random_theta
from hypothesis import given
from hypothesis import strategies as st

from rkhsmeta import network as nw
from rkhsmeta import objectives as obj
from rkhsmeta import verification as ver
from rkhsmeta.harness import tile_task
from rkhsmeta.network import Conv1d, Dense, NetworkSpec
from rkhsmeta.tasks import SineSpec, sample_task


def test_ode_config_validation():
    with pytest.raises(ValueError):
        ver.OdeConfig(steps_per_unit=0)


@given(st.floats(-3.0, 3.0), st.floats(0.0, 2.0))
def test_rk4_on_scalar_linear_ode(rate, t):
    out = ver._rk4(lambda s: rate * s, np.array([1.0]), t, 2000)
    assert out[0] == pytest.approx(math.exp(rate * t), rel=1e-9)


def test_flow_steps_respect_stability():
    gram = np.diag([1.0, 1e4])
    assert ver.flow_steps(gram, 1, 1.0, ver.OdeConfig(steps_per_unit=100)) == math.ceil(1e4 / 0.5)
    assert ver.flow_steps(np.eye(2), 10, 2.0, ver.OdeConfig(steps_per_unit=100)) == 200


def test_oracle_step_halving_converges():
    spec = dense_spec(2, 6, d_x=1)
    theta = random_theta(spec, 3)
    task = sample_task(SineSpec(n_support=5, n_query=10), 3)
    ref = ver.linearized_flow_oracle(spec, theta, task.support_x, task.support_y, task.query_x, 1.0)
    steps = ver.flow_steps(obj.make_kernel(spec, theta, "ntk", "full").gram(task.support_x), 5, 1.0, ver.OdeConfig())
    fine = ver.linearized_flow_oracle(spec, theta, task.support_x, task.support_y, task.query_x, 1.0,
                                      steps=2 * steps)
    assert ver.relative_error(ref, fine) <= 1e-6


def test_oracle_at_zero_time_is_network():
    spec = dense_spec(1, 5, d_x=1)
    theta = random_theta(spec, 0)
    x = np.linspace(-1, 1, 4)[:, None]
    np.testing.assert_array_equal(ver.linearized_flow_oracle(spec, theta, x, x, x, 0.0), nw.predict(spec, theta, x))


def test_finite_diff_grad_on_quadratic():
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    theta = np.array([0.5, -1.5])
    g = ver.finite_diff_grad(lambda v: 0.5 * v @ a @ v, theta)
    np.testing.assert_allclose(g, a @ theta, rtol=1e-9)


def test_relative_error():
    assert ver.relative_error([1.0, 0.0], [1.0, 0.0]) == 0.0
    assert ver.relative_error([0.0], [0.0]) == 0.0
    assert ver.relative_error([2.0], [1.0]) == pytest.approx(0.5)


def test_nonlinear_gap_is_small_for_short_flows():
    spec = dense_spec(1, 32, d_x=1)
    theta = random_theta(spec, 1)
    task = sample_task(SineSpec(n_support=5, n_query=5), 1)
    gap = ver.nonlinear_flow_gap(spec, theta, task.support_x, task.support_y, task.query_x, 0.01, lr=1e-4)
    assert gap < 1e-2


def test_in_regime_boundaries():
    spec = dense_spec(2, 4)
    assert ver.in_regime(spec, np.zeros(spec.n_params), 1.0)
    theta = random_theta(spec, 0)
    assert ver.in_regime(spec, theta, 0.0)
    assert not ver.in_regime(spec, theta, 1e6)


def test_self_query_scores_support():
    task = sample_task(SineSpec(n_support=3, n_query=7), 0)
    s = ver.self_query(task)
    np.testing.assert_array_equal(s.query_x, task.support_x)
    np.testing.assert_array_equal(s.query_y, task.support_y)


@pytest.mark.parametrize("depth", [1, 2])
def test_theorem_sweeps_dense(depth):
    rows, checks = ver.theorem_sweeps(NetworkSpec.mlp(1, [16] * depth, 1), range(3))
    assert checks["taylor_k1_identity"] and checks["rkhs_gap_t0"] and checks["rkhs_gap_monotone"]
    assert {r["sweep_name"] for r in rows} == {"taylor_gap", "rkhs_gap"}


def test_theorem_sweeps_conv_with_lift():
    spec = NetworkSpec(8, (Conv1d(1, 2, 3, 8), Dense(16, 8), Dense(8, 1)))
    _, checks = ver.theorem_sweeps(spec, range(2), lift=lambda t: tile_task(t, 8))
    assert checks["taylor_k1_identity"] and checks["rkhs_gap_t0"]


def test_tile_task_shapes():
    task = sample_task(SineSpec(n_support=3, n_query=2), 0)
    tiled = tile_task(task, 5)
    assert tiled.support_x.shape == (3, 5) and tiled.query_x.shape == (2, 5)
    np.testing.assert_array_equal(tiled.support_y, task.support_y)
