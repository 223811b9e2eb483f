import numpy as np
import pytest

from daepinn.dae_model import linear_test_dae, three_bus
from daepinn.global_config import GlobalConfig
from daepinn.network import build_assembly
from daepinn.pinn_loss import PinnProblem
from daepinn.tableau import gauss_legendre_tableau

# shrunk initial-condition box of the desk-scale runs
DESK_IC_RANGES = [(-0.5, 0.5), (-0.5, 0.5), (-0.1, 0.1), (-0.1, 0.1)]


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run desk-scale training experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="function")
def global_config():
    yield GlobalConfig
    GlobalConfig.reset()


@pytest.fixture(scope="function")
def output_root(tmp_path, global_config):
    global_config.output_root = str(tmp_path / "runs")
    yield tmp_path / "runs"


@pytest.fixture(scope="session")
def gauss2():
    yield gauss_legendre_tableau(2)


@pytest.fixture(scope="session")
def gauss3():
    yield gauss_legendre_tableau(3)


@pytest.fixture(scope="session")
def bus():
    yield three_bus()


@pytest.fixture(scope="session")
def linear():
    yield linear_test_dae()


@pytest.fixture(scope="session")
def desk_ic_ranges():
    yield DESK_IC_RANGES


@pytest.fixture(scope="function")
def small_assembly(gauss2, bus):
    yield build_assembly(
        bus.n, bus.m, gauss2, 0.1, y_width=8, y_depth=2, z_width=8, z_depth=2, ic_ranges=DESK_IC_RANGES
    )


@pytest.fixture(scope="function")
def small_problem(small_assembly, bus):
    yield PinnProblem(small_assembly, bus)


@pytest.fixture(scope="function")
def ic_batch():
    rng = np.random.default_rng(7)
    lo, hi = np.array(DESK_IC_RANGES).T
    yield rng.uniform(lo, hi, size=(4, 4))
