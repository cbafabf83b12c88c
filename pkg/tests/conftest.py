import numpy as np
import pytest

from gosgd.datagen import generate
from gosgd.numeric_core import RandomSource
from gosgd.objectives import Dataset, LogisticObjective, MLPObjective, QuadraticObjective

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return RandomSource(1234, 0)


@pytest.fixture(scope="session")
def moons():
    X, y = generate("two-moons", 300, 3)
    return Dataset(X, y)


@pytest.fixture(scope="session")
def clusters():
    X, y = generate("two-cluster", 300, 4)
    return Dataset(X, y)


@pytest.fixture
def quadratic():
    return QuadraticObjective(RandomSource(99, 0).normal(10))


@pytest.fixture
def logistic(clusters):
    return LogisticObjective(clusters, weight_decay=1e-4)


@pytest.fixture
def mlp(moons):
    return MLPObjective(moons, hidden=8, weight_decay=1e-4)


@pytest.fixture
def three_class():
    r = RandomSource(7, 0)
    X = r.normal((60, 3))
    y = np.argmax(X, axis=1)
    return Dataset(X, y)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
