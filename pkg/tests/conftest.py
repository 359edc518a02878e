"""
Shared fixtures: the default codebook, a reduced-dimension codebook and the
scene enumerations.
"""

import os

import numpy as np
import pytest

from src.hdc import make_codebook
from src.scenes import SplitSpec, build_dataset, enumerate_scenes

DEFAULT_SEED = 2017


def pytest_collection_modifyitems(config, items):
    if os.getenv("HDVQA_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set HDVQA_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def cb():
    return make_codebook(DEFAULT_SEED, 1000)


@pytest.fixture(scope="session")
def tiny_cb():
    """D=64 codebook; the 0.15 cross-cosine bound cannot hold at this size."""
    return make_codebook(5, 64, max_cross_cosine=None)


@pytest.fixture(scope="session")
def all_scenes():
    return enumerate_scenes(dedupe=False)


@pytest.fixture(scope="session")
def unique_scenes():
    return enumerate_scenes(dedupe=True)


@pytest.fixture(scope="session")
def dataset(cb):
    return build_dataset(cb, SplitSpec())


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(123))


@pytest.fixture(scope="session")
def tiny_dataset(tiny_cb):
    return build_dataset(tiny_cb, SplitSpec())
