"""Adversarial alert-inspection game: queue simulator, policies, RL and bounds."""

from ._accel import BACKEND
from .game_env import GameConfig, GameState, RunSet, RunTrace, episode, simulate_runs
from .queue_core import DisturbanceModel, QueueParams

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DisturbanceModel",
    "GameConfig",
    "GameState",
    "QueueParams",
    "RunSet",
    "RunTrace",
    "episode",
    "simulate_runs",
    "__version__",
]
