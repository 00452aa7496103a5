import pytest

from app.models import NeighborPair, RngSeed, TesterConfig


@pytest.fixture
def seed():
    """Fixed run seed"""
    return RngSeed(seed=20240601)


@pytest.fixture
def rng(seed):
    """Fresh generator on the fixed seed"""
    return seed.generator(99)


@pytest.fixture
def noiseless_config():
    """k=4 tester without noise or Poissonization"""
    return TesterConfig(k=4, alpha=0.5, epsilon=1.0, seed=7, noiseless_debug=True)


@pytest.fixture
def private_config():
    return TesterConfig(k=20, alpha=0.5, epsilon=1.0, seed=11)


@pytest.fixture
def bit_pair():
    """Single-bit neighbor pair"""
    return NeighborPair.from_streams([0], [1])


@pytest.fixture
def histogram_pair():
    """8-element neighbor pair over k=4, differing at position 5"""
    return NeighborPair.from_streams([0, 1, 2, 3, 0, 1, 2, 3], [0, 1, 2, 3, 2, 1, 2, 3])


@pytest.fixture
def results_dir(tmp_path):
    path = tmp_path / "results"
    path.mkdir()
    return path
