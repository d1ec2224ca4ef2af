import numpy as np
import pytest

from hmip.datasets import SplitSpec, generate_dataset, split_dataset
from hmip.problems import generate_family


@pytest.fixture(scope="session")
def tiny_knapsack():
    """J=4 blocks of k=5 items; 4 upper binaries, enumerable."""
    return generate_family("knapsack", {"J": 4, "k": 5}, seed=0)


@pytest.fixture(scope="session")
def micro_knapsack():
    """J=3, k=2: the smallest structured instance used for loss checks."""
    return generate_family("knapsack", {"J": 3, "k": 2}, seed=1)


@pytest.fixture(scope="session")
def tiny_facility():
    return generate_family("facility",
                           {"n_clients": 4, "n_sites": 4, "n_rows": 5},
                           seed=0)


@pytest.fixture(scope="session")
def tiny_knapsack_splits(tiny_knapsack):
    dataset = generate_dataset(tiny_knapsack, 40, seed=3)
    return split_dataset(dataset, SplitSpec(20, 8, 6, 6, seed=1))


@pytest.fixture(scope="session")
def tiny_facility_splits(tiny_facility):
    dataset = generate_dataset(tiny_facility, 24, seed=3)
    return split_dataset(dataset, SplitSpec(12, 4, 4, 4, seed=1))


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
