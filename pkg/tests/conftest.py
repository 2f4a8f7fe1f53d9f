import numpy as np
import pytest

from ldsf.core_types import RadarConfig


@pytest.fixture
def cfg8():
    return RadarConfig(nf=8, nphi=8)


@pytest.fixture
def cfg32():
    return RadarConfig(nf=32, nphi=32)


@pytest.fixture
def cfg64():
    return RadarConfig(nf=64, nphi=64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one verdict line per acceptance criterion, printed after the run
VERDICTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[k])
