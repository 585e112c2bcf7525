"""Roundabout driving micro-simulator, reward engine, and compact RL toolkit."""

__version__ = "0.1.0"

from .config import (
    ConfigError,
    EnvConfig,
    Hyperparams,
    RunConfig,
    ScenarioConfig,
    default_run_config,
    load_run_config,
)
from .env import ContinuousAction, DrivingEnv, MetaAction, StepResult
from .evaluation import (
    DEFAULT_INDICATOR_WEIGHTS,
    MetricReport,
    adaptability_report,
    ahp_weights,
    collision_rate_score,
    run_evaluation,
    score,
)
from .geometry import (
    Lane,
    LaneFrame,
    RoadNetwork,
    build_highway,
    build_merge,
    build_roundabout,
)
from .rewards import RewardBreakdown, RewardConfig, total_reward
from .vehicles import DynamicsConfig, IdmParams, VehicleState

__all__ = [
    "ConfigError",
    "ContinuousAction",
    "DEFAULT_INDICATOR_WEIGHTS",
    "DrivingEnv",
    "DynamicsConfig",
    "EnvConfig",
    "Hyperparams",
    "IdmParams",
    "Lane",
    "LaneFrame",
    "MetaAction",
    "MetricReport",
    "RewardBreakdown",
    "RewardConfig",
    "RoadNetwork",
    "RunConfig",
    "ScenarioConfig",
    "StepResult",
    "VehicleState",
    "adaptability_report",
    "ahp_weights",
    "build_highway",
    "build_merge",
    "build_roundabout",
    "collision_rate_score",
    "default_run_config",
    "load_run_config",
    "run_evaluation",
    "score",
    "total_reward",
]
