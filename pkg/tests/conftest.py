import numpy as np
import pytest

from owsga.data import AnalysisDataset
from owsga.simulation import ScenarioConfig, generate_dataset


def make_dataset(n=400, P=3, levels=(("g", 3), ("h", 2)), seed=0, y=None):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, P))
    z = rng.binomial(1, 0.4, n)
    z[:2] = (0, 1)
    subgroups = {name: rng.integers(0, k, n).astype(str) for name, k in levels}
    if y is None:
        y = X.sum(axis=1) + z + rng.normal(size=n)
    return AnalysisDataset.from_arrays(y, z, X, None, subgroups)


@pytest.fixture
def small_ds():
    return make_dataset()


@pytest.fixture(scope="session")
def sim_data():
    """One dataset from the default simulation scenario (N=3000, P=18)."""
    return generate_dataset(ScenarioConfig(), [20240101, 0])


INJECTED = {("v0", "1", 2), ("v3", "2", 5)}


def injected_imbalance_dataset(pairs=2000, shift=0.45, seed=0):
    """Treated/control pairs with identical covariates and subgroups, then a
    mean shift of ``shift`` added to treated units only in the cells listed
    in ``INJECTED`` (variable, level, covariate index)."""
    rng = np.random.default_rng(seed)
    sizes = {"v0": 3, "v1": 2, "v2": 2, "v3": 4}
    X = rng.normal(size=(pairs, 6))
    labels = {k: rng.integers(0, m, pairs).astype(str) for k, m in sizes.items()}
    X = np.vstack([X, X])
    z = np.r_[np.ones(pairs), np.zeros(pairs)]
    subgroups = {k: np.r_[v, v] for k, v in labels.items()}
    for var, level, p in INJECTED:
        hit = (subgroups[var] == level) & (z == 1)
        X[hit, p] += shift
    y = X.sum(axis=1) + z + rng.normal(size=2 * pairs)
    return AnalysisDataset.from_arrays(y, z, X, None, subgroups)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
