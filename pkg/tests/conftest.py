import os

import numpy as np
import pytest

DATA_CANDIDATES = [
    os.environ.get("JOINTPRUNE_DATA_DIR"),
    os.path.join(os.path.dirname(__file__), "..", "data"),
    "/root/data",
]


def find_data_dir():
    for cand in DATA_CANDIDATES:
        if cand and os.path.exists(os.path.join(cand, "train-images-idx3-ubyte")):
            return os.path.abspath(cand)
    return None


@pytest.fixture(scope="session")
def data_dir():
    path = find_data_dir()
    if path is None:
        pytest.skip("MNIST/CIFAR data directory not found "
                    "(set JOINTPRUNE_DATA_DIR)")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
