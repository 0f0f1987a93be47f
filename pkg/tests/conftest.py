import numpy as np
import pytest

from fairsampling.dataset import InteractionMatrix
from fairsampling.synthworld import SyntheticConfig, generate_world

from helpers import ACCEPTANCE_LINES


@pytest.fixture
def tiny():
    #   items: 0 1 2 3 4
    # user 0:  1 1 0 0 0
    # user 1:  0 1 1 0 0
    # user 2:  1 0 0 1 0
    # user 3:  0 0 1 1 1
    users = [0, 0, 1, 1, 2, 2, 3, 3, 3]
    items = [0, 1, 1, 2, 0, 3, 2, 3, 4]
    return InteractionMatrix(users, items, 4, 5)


@pytest.fixture(scope="session")
def small_world():
    return generate_world(SyntheticConfig(n_users=60, n_items=80, seed=11))


@pytest.fixture
def random_matrix():
    def make(n_users=12, n_items=15, density=0.3, seed=0):
        rng = np.random.default_rng(seed)
        dense = rng.random((n_users, n_items)) < density
        u, i = np.nonzero(dense)
        return InteractionMatrix(u, i, n_users, n_items)
    return make


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
