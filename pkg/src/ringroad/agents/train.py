"""Seeded training orchestration, learning curves, and agent checkpoints."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import ALGORITHMS, Hyperparams, ScenarioConfig
from ..env import DrivingEnv
from ..nn import load_checkpoint, save_checkpoint
from .common import EpisodeRunner, FlatEnv, ReplayBuffer, collect_rollout
from .ddpg import DdpgAgent
from .ppo import PpoAgent
from .trpo import TrpoAgent

LOSS_COLUMNS = {
    "ddpg": ("critic_loss", "actor_loss"),
    "ppo": ("policy_surrogate", "value_loss", "kl"),
    "trpo": ("improvement", "kl", "accepted", "value_loss"),
}


@dataclass
class CurveRow:
    episode: int
    steps: int
    episode_return: float  # summed per-step totals over the episode
    mean_step_reward: float
    losses: dict[str, float] = field(default_factory=dict)


@dataclass
class TrainResult:
    algorithm: str
    agent: object
    curve: list[CurveRow]
    updates: list[dict]
    total_steps: int

    def trailing_mean(self, window: int = 20) -> float:
        if not self.curve:
            return float("nan")
        tail = self.curve[-window:]
        return float(np.mean([row.episode_return for row in tail]))

    def episodes_to_threshold(self, threshold: float, window: int = 20) -> int | None:
        """First episode index where the trailing-window mean return meets the bar."""
        returns = [row.episode_return for row in self.curve]
        for i in range(window - 1, len(returns)):
            if float(np.mean(returns[i - window + 1 : i + 1])) >= threshold:
                return i + 1
        return None


def make_agent(algorithm: str, obs_dim: int, act_dim: int, hp: Hyperparams, rng: np.random.Generator):
    if algorithm == "ddpg":
        return DdpgAgent(obs_dim, act_dim, hp, rng)
    if algorithm == "ppo":
        return PpoAgent(obs_dim, act_dim, hp, rng)
    if algorithm == "trpo":
        return TrpoAgent(obs_dim, act_dim, hp, rng)
    raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")


def _rngs(seed: int) -> dict[str, np.random.Generator]:
    """Named substreams so components can be varied independently."""
    root = np.random.SeedSequence(int(seed))
    names = ("init", "episodes", "explore", "update")
    return dict(zip(names, (np.random.default_rng(s) for s in root.spawn(len(names)))))


def train(
    algorithm: str,
    scenario_cfg: ScenarioConfig,
    hp: Hyperparams,
    seed: int,
    episodes: int,
    stop_threshold: float | None = None,
    stop_window: int = 20,
) -> TrainResult:
    """Train on the scenario for a number of episodes, fully seeded.

    With stop_threshold set, training ends early once the trailing
    stop_window episode returns average at or above the threshold.
    """
    hp.validate()
    rngs = _rngs(seed)
    env = DrivingEnv(scenario_cfg)
    flat = FlatEnv(env)
    agent = make_agent(algorithm, flat.obs_dim, flat.act_dim, hp, rngs["init"])
    result = TrainResult(algorithm, agent, [], [], 0)
    if episodes == 0:
        return result
    if algorithm == "ddpg":
        _train_ddpg(agent, flat, hp, rngs, episodes, result, stop_threshold, stop_window)
    else:
        _train_on_policy(agent, flat, hp, rngs, episodes, result, stop_threshold, stop_window)
    return result


def _record_episode(result: TrainResult, steps: int, ret: float, losses: dict[str, float]):
    result.curve.append(
        CurveRow(
            episode=len(result.curve) + 1,
            steps=steps,
            episode_return=ret,
            mean_step_reward=ret / steps if steps else 0.0,
            losses=dict(losses),
        )
    )


def _stop_hit(result: TrainResult, stop_threshold, stop_window) -> bool:
    return (
        stop_threshold is not None
        and len(result.curve) >= stop_window
        and result.trailing_mean(stop_window) >= stop_threshold
    )


def _train_on_policy(agent, flat, hp, rngs, episodes, result, stop_threshold, stop_window):
    runner = EpisodeRunner(flat, rngs["episodes"])
    while len(result.curve) < episodes:
        batch = collect_rollout(
            runner,
            agent.policy,
            agent.value_net,
            hp.rollout_steps,
            rngs["explore"],
            hp.gamma,
            hp.gae_lambda,
        )
        result.total_steps += hp.rollout_steps
        report = agent.update(batch, rngs["update"])
        result.updates.append(report)
        losses = {k: report.get(k, 0.0) for k in LOSS_COLUMNS[result.algorithm]}
        for steps, ret in batch.episodes:
            _record_episode(result, steps, ret, losses)
            if len(result.curve) >= episodes or _stop_hit(result, stop_threshold, stop_window):
                return


def _train_ddpg(agent, flat, hp, rngs, episodes, result, stop_threshold, stop_window):
    buffer = ReplayBuffer(hp.buffer_capacity, flat.obs_dim, flat.act_dim)
    episode_rng = rngs["episodes"]
    explore = rngs["explore"]
    update_rng = rngs["update"]
    min_buffer = max(hp.batch_size, hp.warmup_steps)
    for _ in range(episodes):
        obs = flat.reset(int(episode_rng.integers(0, 2**31 - 1)))
        done = False
        ret = 0.0
        steps = 0
        loss_sums: dict[str, float] = {}
        n_updates = 0
        while not done:
            if result.total_steps < hp.warmup_steps:
                action = explore.uniform(-1.0, 1.0, flat.act_dim)
            else:
                action = agent.act(obs, explore)
            next_obs, reward, done, _ = flat.step(action)
            buffer.push(obs, action, reward, next_obs, done)
            obs = next_obs
            ret += reward
            steps += 1
            result.total_steps += 1
            if len(buffer) >= min_buffer and result.total_steps % hp.update_every == 0:
                report = agent.update(buffer.sample(update_rng, hp.batch_size))
                result.updates.append(report)
                n_updates += 1
                for key, value in report.items():
                    loss_sums[key] = loss_sums.get(key, 0.0) + value
        losses = {k: v / n_updates for k, v in loss_sums.items()} if n_updates else {}
        _record_episode(result, steps, ret, losses)
        if _stop_hit(result, stop_threshold, stop_window):
            return


# ---------------------------------------------------------------------- curves


def write_curve_csv(path, result: TrainResult):
    loss_names = LOSS_COLUMNS[result.algorithm]
    lines = ["episode,steps,episode_return,mean_step_reward," + ",".join(loss_names)]
    for row in result.curve:
        cells = [
            str(row.episode),
            str(row.steps),
            repr(row.episode_return),
            repr(row.mean_step_reward),
        ]
        cells += [repr(float(row.losses.get(name, 0.0))) for name in loss_names]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------- io


def save_agent(path, agent, algorithm: str, extra_metadata: dict | None = None):
    """Write the binary checkpoint with an algorithm metadata block."""
    meta = {
        "algorithm": algorithm,
        "obs_dim": agent.obs_dim,
        "act_dim": agent.act_dim,
        "hyperparams": _hp_dict(agent.hp),
    }
    meta.update(extra_metadata or {})
    save_checkpoint(path, meta, agent.checkpoint_arrays())


def _hp_dict(hp: Hyperparams) -> dict:
    out = dataclasses.asdict(hp)
    out["hidden"] = list(hp.hidden)
    return out


def load_agent(path):
    """Reconstruct the trained agent; returns (agent, metadata)."""
    meta, arrays = load_checkpoint(path)
    hp_data = dict(meta.get("hyperparams", {}))
    if "hidden" in hp_data:
        hp_data["hidden"] = tuple(hp_data["hidden"])
    hp = Hyperparams(**hp_data)
    algorithm = meta["algorithm"]
    obs_dim = int(meta["obs_dim"])
    act_dim = int(meta["act_dim"])
    if algorithm == "ddpg":
        agent = DdpgAgent.from_arrays(arrays, obs_dim, act_dim, hp)
    elif algorithm == "ppo":
        agent = PpoAgent.from_arrays(arrays, obs_dim, act_dim, hp)
    elif algorithm == "trpo":
        agent = TrpoAgent.from_arrays(arrays, obs_dim, act_dim, hp)
    else:
        raise ValueError(f"checkpoint names unknown algorithm {algorithm!r}")
    return agent, meta
