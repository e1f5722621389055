import numpy as np
import pytest

from laa_detect.dataset import ScenarioBuilder, ScenarioConfig
from laa_detect.grid import default_network
from laa_detect.market import build_population


@pytest.fixture(scope="session")
def net():
    return default_network()


@pytest.fixture(scope="session")
def pop(net):
    return build_population(net, 0)


@pytest.fixture(scope="session")
def builder(net, pop):
    return ScenarioBuilder(net, pop, 0, ScenarioConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
