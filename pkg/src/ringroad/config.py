"""Strict configuration schema: YAML in, validated dataclasses out.

Every key in a config file must match a dataclass field; unknown keys are
rejected with the offending path so typos cannot silently fall back to
defaults. Dotted overrides ("hyperparams.policy_lr=3e-4") patch the raw
mapping before validation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .geometry import (
    HighwayGeometry,
    MergeGeometry,
    RoadNetwork,
    RoundaboutGeometry,
    build_highway,
    build_merge,
    build_roundabout,
)
from .rewards import RewardConfig, vsp_ceiling
from .vehicles import DynamicsConfig, IdmParams

SCENARIOS = ("roundabout", "highway", "merge")
ALGORITHMS = ("ddpg", "ppo", "trpo")


class ConfigError(ValueError):
    """Raised for malformed, unknown, or inconsistent configuration."""


@dataclass
class EnvConfig:
    """Episode settings that are not road geometry or vehicle dynamics."""

    ambient_vehicles: int = 5
    neighbors: int = 5  # observed vehicle slots beyond the ego row
    episode_seconds: float = 60.0
    initial_speed: float = 8.0
    offroad_lane_widths: float = 2.0  # |lateral| beyond this many widths ends the episode
    position_norm: float = 100.0
    spawn_attempts: int = 100
    spawn_margin: float = 5.0
    ambient_min_spawn_gap: float = 10.0
    ambient_speed_min_frac: float = 0.5
    ambient_speed_max_frac: float = 1.0
    ambient_gain_lateral: float = 0.2
    ambient_gain_heading: float = 1.0
    meta_speed_step: float = 2.0
    meta_throttle_gain: float = 0.5
    ttc_horizon: float = 60.0

    def validate(self):
        if self.ambient_vehicles < 0:
            raise ConfigError("env: ambient_vehicles must be >= 0")
        if self.neighbors < 1:
            raise ConfigError("env: neighbors must be >= 1")
        for name in ("episode_seconds", "position_norm", "offroad_lane_widths", "ttc_horizon"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"env: {name} must be positive")
        if self.initial_speed < 0:
            raise ConfigError("env: initial_speed must be >= 0")
        if not 0 < self.ambient_speed_min_frac <= self.ambient_speed_max_frac:
            raise ConfigError("env: ambient speed fractions must satisfy 0 < min <= max")
        if self.spawn_attempts < 1:
            raise ConfigError("env: spawn_attempts must be >= 1")


@dataclass
class GeometryConfig:
    roundabout: RoundaboutGeometry = field(default_factory=RoundaboutGeometry)
    highway: HighwayGeometry = field(default_factory=HighwayGeometry)
    merge: MergeGeometry = field(default_factory=MergeGeometry)


@dataclass
class Hyperparams:
    """Training knobs for all three algorithms; unused fields are ignored."""

    gamma: float = 0.99
    gae_lambda: float = 0.95
    hidden: tuple[int, int] = (64, 64)
    init_log_std: float = -0.5
    # on-policy (ppo/trpo)
    rollout_steps: int = 1024
    minibatch_size: int = 128
    ppo_epochs: int = 10
    ppo_clip: float = 0.2
    entropy_coef: float = 0.01
    kl_stop: float = 1.0
    policy_lr: float = 3e-4
    value_lr: float = 1e-3
    value_epochs: int = 10
    # trpo
    trpo_kl: float = 0.01
    cg_iters: int = 10
    cg_damping: float = 0.1
    line_search_shrink: float = 0.8
    line_search_tries: int = 10
    # ddpg
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    batch_size: int = 128
    buffer_capacity: int = 100_000
    warmup_steps: int = 1500
    update_every: int = 1
    noise_sigma: float = 0.1
    tau: float = 0.005

    def validate(self):
        positive = (
            "rollout_steps", "minibatch_size", "ppo_epochs", "policy_lr", "value_lr",
            "value_epochs", "trpo_kl", "cg_iters", "cg_damping", "line_search_tries",
            "actor_lr", "critic_lr", "batch_size", "buffer_capacity", "update_every",
            "kl_stop",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"hyperparams: {name} must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("hyperparams: gamma must be in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("hyperparams: gae_lambda must be in [0, 1]")
        if not 0.0 < self.ppo_clip < 1.0:
            raise ConfigError("hyperparams: ppo_clip must be in (0, 1)")
        if not 0.0 < self.line_search_shrink < 1.0:
            raise ConfigError("hyperparams: line_search_shrink must be in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("hyperparams: tau must be in (0, 1]")
        if self.noise_sigma < 0 or self.warmup_steps < 0 or self.entropy_coef < 0:
            raise ConfigError("hyperparams: noise_sigma, warmup_steps, entropy_coef must be >= 0")
        if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("hyperparams: hidden sizes must be positive")


@dataclass
class ScenarioConfig:
    """Everything the environment needs: scenario choice plus all sections."""

    scenario: str = "roundabout"
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    idm: IdmParams = field(default_factory=IdmParams)
    reward: RewardConfig = field(default_factory=RewardConfig)
    env: EnvConfig = field(default_factory=EnvConfig)

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        try:
            self.dynamics.validate()
            self.idm.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.env.validate()
        # the energy normalizer is defined by the dynamics limits
        self.reward.vsp_max = vsp_ceiling(self.dynamics.v_max, self.dynamics.a_max)
        if abs(self.reward.v_max - self.dynamics.v_max) > 1e-9:
            raise ConfigError("reward.v_max must equal dynamics.v_max")
        try:
            self.reward.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def build_network(self) -> RoadNetwork:
        if self.scenario == "roundabout":
            return build_roundabout(self.geometry.roundabout)
        if self.scenario == "highway":
            return build_highway(self.geometry.highway)
        if self.scenario == "merge":
            return build_merge(self.geometry.merge)
        raise ConfigError(f"unknown scenario {self.scenario!r}")


@dataclass
class RunConfig:
    """One training/evaluation run: scenario sections plus run-level settings."""

    algorithm: str = "ppo"
    seed: int = 0
    episodes: int = 400
    output_dir: str = "runs/latest"
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    hyperparams: Hyperparams = field(default_factory=Hyperparams)

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        self.scenario.validate()
        self.hyperparams.validate()


def _coerce_scalar(default, value, path: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        if len(value) != len(default):
            raise ConfigError(f"{path}: expected {len(default)} entries, got {len(value)}")
        return tuple(
            _coerce_scalar(d, v, f"{path}[{i}]") for i, (d, v) in enumerate(zip(default, value))
        )
    raise ConfigError(f"{path}: unsupported value {value!r}")


def _build_dataclass(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected a mapping")
    template = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        where = path or "top level"
        raise ConfigError(f"unknown key(s) {unknown} at {where}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(template, name)
        sub_path = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build_dataclass(type(default), value, sub_path)
        else:
            kwargs[name] = _coerce_scalar(default, value, sub_path)
    return dataclasses.replace(template, **kwargs)


def _apply_override(data: dict, dotted: str, raw_value: str):
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        nxt = node.get(key)
        if nxt is None:
            nxt = node[key] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {dotted!r}: {key!r} is not a section")
        node = nxt
    node[keys[-1]] = yaml.safe_load(raw_value)


def run_config_from_dict(data: dict, overrides: dict[str, str] | None = None) -> RunConfig:
    """Build and validate a RunConfig from a raw mapping.

    The top-level 'scenario' key is the scenario name; the geometry,
    dynamics, idm, reward, and env sections sit beside it.
    """
    data = dict(data or {})
    for dotted, raw in (overrides or {}).items():
        _apply_override(data, dotted, raw)
    scenario_sections = {}
    for key in ("geometry", "dynamics", "idm", "reward", "env"):
        if key in data:
            scenario_sections[key] = data.pop(key)
    name = data.pop("scenario", "roundabout")
    if not isinstance(name, str):
        raise ConfigError("scenario: expected a scenario name string")
    scenario_sections["scenario"] = name
    run_sections = dict(data)
    hyper = run_sections.pop("hyperparams", {})
    cfg = RunConfig(
        scenario=_build_dataclass(ScenarioConfig, scenario_sections, ""),
        hyperparams=_build_dataclass(Hyperparams, hyper, "hyperparams"),
        **{
            k: _coerce_scalar(getattr(RunConfig(), k), v, k)
            for k, v in run_sections.items()
            if k in ("algorithm", "seed", "episodes", "output_dir")
        },
    )
    unknown = sorted(set(run_sections) - {"algorithm", "seed", "episodes", "output_dir"})
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} at top level")
    cfg.validate()
    return cfg


def load_run_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return run_config_from_dict(data, overrides)


def _plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def run_config_to_dict(cfg: RunConfig) -> dict:
    """Resolved mapping that round-trips through run_config_from_dict."""
    scen = _plain(cfg.scenario)
    out = {
        "algorithm": cfg.algorithm,
        "seed": cfg.seed,
        "episodes": cfg.episodes,
        "output_dir": cfg.output_dir,
        "scenario": scen.pop("scenario"),
        "hyperparams": _plain(cfg.hyperparams),
    }
    out.update(scen)
    return out


def dump_run_config(cfg: RunConfig, path):
    Path(path).write_text(yaml.safe_dump(run_config_to_dict(cfg), sort_keys=True))


def default_run_config(algorithm: str = "ppo", scenario: str = "roundabout") -> RunConfig:
    cfg = RunConfig(algorithm=algorithm, scenario=ScenarioConfig(scenario=scenario))
    cfg.validate()
    return cfg
