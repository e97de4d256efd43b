import numpy as np
import pytest

from fpstar.problem import builtin_example, normalize
from fpstar.state import Discretization, Grid


@pytest.fixture(scope="session")
def ex1():
    return builtin_example(1)


@pytest.fixture(scope="session")
def ex2():
    return builtin_example(2)


@pytest.fixture(scope="session")
def grid1(ex1):
    return Grid.collocation(normalize(ex1), Discretization.make(2, 2))


@pytest.fixture(scope="session")
def grid2(ex2):
    return Grid.collocation(normalize(ex2), Discretization.make(2, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
