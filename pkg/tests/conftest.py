import numpy as np
import pytest

from porpi.environments import load_scenario, tiger, absorbing_toy
from porpi.prm import build_prm


@pytest.fixture(scope="session")
def tiger_model():
    return tiger()


@pytest.fixture(scope="session")
def toy_model():
    return absorbing_toy()


@pytest.fixture(scope="session")
def mini_maze():
    return load_scenario("mini_maze2d")


@pytest.fixture(scope="session")
def mini_roadmap(mini_maze):
    return build_prm(mini_maze, n_nodes=250, k_neighbors=8, seed=7)


@pytest.fixture(scope="session")
def maze3d():
    return load_scenario("maze3d")


@pytest.fixture(scope="session")
def rescue_scenario():
    return load_scenario("rescue")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
