import numpy as np
import pytest

from ettfs import tensor as tc


@pytest.fixture
def f64():
    """Run the test with float64 as default dtype and a clean tape."""
    tc.get_tape().clear()
    with tc.precision(np.float64):
        yield
    tc.get_tape().clear()


@pytest.fixture(autouse=True)
def _clean_tape():
    tc.get_tape().clear()
    yield
    tc.get_tape().clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
