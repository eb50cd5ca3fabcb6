import numpy as np
import pytest


def pytest_terminal_summary(terminalreporter):
    """Echo the one-line acceptance verdicts at the end of the run."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)

from thermarank.architectures import Scenario, enumerate_single_split, node_features
from thermarank.endurance import OlocConfig
from thermarank.plant import PlantParams


@pytest.fixture(scope="session")
def plant():
    return PlantParams()


@pytest.fixture(scope="session")
def fast_oloc():
    """Small search budget used throughout the tests."""
    return OlocConfig(n_intervals=2, max_evals=120, restarts=1, seed=7)


@pytest.fixture(scope="session")
def archs3():
    return enumerate_single_split(3)


def random_scenarios(n_loads, count, seed, id_offset=0):
    rng = np.random.default_rng(seed)
    return [
        Scenario(id_offset + i, tuple(float(d) for d in rng.uniform(4, 16, n_loads)))
        for i in range(count)
    ]


@pytest.fixture(scope="session")
def feature_graphs3(archs3):
    scen = Scenario(0, (12.0, 10.0, 8.0))
    return [node_features(a, scen) for a in archs3]
