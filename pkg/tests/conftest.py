import numpy as np
import pytest

from pomdp_ope.fixtures import default_fixture_set, generate_fixture


@pytest.fixture(scope="session")
def default_set():
    return default_fixture_set()


@pytest.fixture(scope="session")
def bandit():
    return generate_fixture("bandit")


@pytest.fixture(scope="session")
def bandit_alg(bandit):
    return bandit.algebra()


@pytest.fixture(scope="session")
def random_fixtures():
    """Fifty random fixtures with S, O, A <= 3 and H <= 4."""
    return [generate_fixture("random", seed=k) for k in range(50)]


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
