"""Training algorithms over the driving environment."""

from .common import EpisodeRunner, FlatEnv, ReplayBuffer, RolloutBatch, collect_rollout, compute_gae
from .ddpg import DdpgAgent
from .ppo import PpoAgent
from .trpo import TrpoAgent, conjugate_gradient
from .train import TrainResult, train

__all__ = [
    "DdpgAgent",
    "EpisodeRunner",
    "FlatEnv",
    "PpoAgent",
    "ReplayBuffer",
    "RolloutBatch",
    "TrainResult",
    "TrpoAgent",
    "collect_rollout",
    "compute_gae",
    "conjugate_gradient",
    "train",
]
