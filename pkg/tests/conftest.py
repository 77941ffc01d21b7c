import numpy as np
import pytest

from robhedge.instruments import BarrierOptionSpec
from robhedge.market_sim import HestonParams, TimeGrid


@pytest.fixture
def market():
    return HestonParams()


@pytest.fixture
def grid():
    return TimeGrid()


@pytest.fixture
def toy_grid():
    return TimeGrid(n_steps=2, maturity=1.0, trade_every=1)


@pytest.fixture(params=["knock_in", "knock_out"])
def option(request):
    return BarrierOptionSpec(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion for the run summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])
    return lines


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
