import numpy as np
import pytest

from ndphylo.transforms import procedural_source


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def source(rng):
    return procedural_source(rng, 64)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][3:])):
            terminalreporter.write_line(line)
