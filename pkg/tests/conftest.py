import numpy as np
import pytest

from overlaplab.measures import CascadeSource, DiracSource
from overlaplab.rng import seed_root


@pytest.fixture
def seq():
    """Fresh deterministic seed sequence per test."""
    return seed_root(90210)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def dirac():
    return DiracSource(q_star=0.6, dimension=3)


@pytest.fixture
def one_level():
    return CascadeSource(zetas=(0.5,), overlaps=(0.0, 0.4), truncation=256,
                         dimension=4)


@pytest.fixture
def two_level():
    # dimension 8 keeps the embedding width constant for sampled triples
    return CascadeSource(zetas=(0.3, 0.7), overlaps=(0.1, 0.3, 0.6),
                         truncation=64, dimension=8)
