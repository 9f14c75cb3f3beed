import pytest

from alertgame import DisturbanceModel, GameConfig, QueueParams


@pytest.fixture
def paper():
    return GameConfig.paper()


@pytest.fixture
def desk():
    return GameConfig.desk()


@pytest.fixture
def tiny():
    """N=24, X=240, lambda 90 / mu 96, E=120, M=60, fixed service."""
    return GameConfig.desk(horizon=24, defender_budget=240, attacker_budget=240,
                           queue=QueueParams(90.0, 96.0, DisturbanceModel.fixed()))


@pytest.fixture
def scaled_fixed():
    """rho = 0.9 fixed-service config used by the paired threshold-rule checks."""
    return GameConfig.desk(queue=QueueParams(90.0, 100.0, DisturbanceModel.fixed()))
