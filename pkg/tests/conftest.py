import os
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rkhsmeta import network as nw
from rkhsmeta.network import Conv1d, Dense, NetworkSpec

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance results collected by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_numpy():
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        yield


def dense_spec(depth=2, width=6, d_x=3, d_y=1):
    return NetworkSpec.mlp(d_x, [width] * depth, d_y)


def conv_spec(length=8, channels=2, width=3, hidden=6, d_y=1):
    return NetworkSpec(length, (Conv1d(1, channels, width, length), Dense(channels * length, hidden),
                                Dense(hidden, d_y)))


def random_theta(spec, seed, bias_std=0.3):
    return nw.init_params(spec, seed, bias_std=bias_std)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
