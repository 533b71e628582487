import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ctcm import ModelParams, UniformBox

settings.register_profile(
    "ctcm", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ctcm")


@pytest.fixture
def box():
    return UniformBox((1.0, 1.0), (1.0, 1.0))


@pytest.fixture
def params(box):
    return ModelParams(0.05, 0.2, 8, 2, box)


def assert_mean_within(samples, target, n_se=4.0):
    samples = np.asarray(samples, dtype=float)
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(len(samples))
    assert np.all(np.abs(mean - target) <= n_se * se), (mean, target, se)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
