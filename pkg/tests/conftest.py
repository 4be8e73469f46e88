import numpy as np
import pytest

from ha02.channel import etu_profile
from ha02.ofdm import FrameConfig

CI_SEEDS = tuple(range(10))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def frame():
    return FrameConfig()


@pytest.fixture(scope="session")
def etu():
    return etu_profile()


# pass/fail lines reported by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
