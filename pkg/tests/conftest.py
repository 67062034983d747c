import numpy as np
import pytest

from pgcidl.data import SynthConfig, generate_synthetic
from pgcidl.model import init_params

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(SynthConfig(num_bags=30, seed=3))


@pytest.fixture
def small_params():
    return init_params(d_in=16, width=8, num_classes=3, rank=4, seed=1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
