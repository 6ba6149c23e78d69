import numpy as np
import pytest

from amfkit.kernelgen import direction_set_13, kernel_bank


@pytest.fixture(scope="session")
def directions():
    return direction_set_13()


@pytest.fixture(scope="session")
def bank():
    return kernel_bank()


@pytest.fixture(scope="session")
def small_bank():
    return kernel_bank(size=5, sigma_major=2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance reporting -------------------------------------------------------
# test_acceptance.py records one line per criterion here; printed after the run.

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
