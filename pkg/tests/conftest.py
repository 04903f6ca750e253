# tests/conftest.py
import numpy as np
import pytest

from fofiv.config import ModelParams
from fofiv.graph import Network, sample_er


@pytest.fixture
def path3():
    """0 - 1 - 2"""
    return Network.from_pairs(3, [(0, 1), (1, 2)])


@pytest.fixture
def triangle():
    return Network.complete(3)


@pytest.fixture
def star5():
    """Hub 0 with four leaves; bipartite, spectrum symmetric about 0."""
    return Network.from_pairs(5, [(0, k) for k in range(1, 5)])


@pytest.fixture
def empty5():
    return Network.empty(5)


@pytest.fixture
def small_er():
    return sample_er(60, 0.08, np.random.default_rng(7))


@pytest.fixture
def params():
    return ModelParams()


def write_edges(tmp_path, text, name="edges.txt"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path
