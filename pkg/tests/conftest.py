import os

import numpy as np
import pytest

from chainsdf.robot import load_robot
from chainsdf.sampler import SamplerConfig, generate_dataset

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ASSETS = os.path.join(REPO, "assets")


def asset(*parts):
    return os.path.join(ASSETS, *parts)


@pytest.fixture(scope="session")
def arm3():
    return load_robot(asset("robots", "arm3.robot.toml"))


@pytest.fixture(scope="session")
def sphere1():
    return load_robot(asset("robots", "sphere1.robot.toml"))


@pytest.fixture(scope="session")
def planar2():
    return load_robot(asset("robots", "planar2.robot.toml"))


@pytest.fixture(scope="session")
def finger2():
    return load_robot(asset("robots", "finger2.robot.toml"))


@pytest.fixture(scope="session")
def sphere_dataset(sphere1):
    cfg = SamplerConfig(configs_count=50, points_per_config=200, seed=3)
    return generate_dataset(sphere1, cfg)


@pytest.fixture(scope="session")
def arm3_small_dataset(arm3):
    cfg = SamplerConfig(configs_count=60, points_per_config=100, seed=5)
    return generate_dataset(arm3, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(np.random.PCG64(12345))
