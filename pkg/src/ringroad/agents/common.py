"""Shared trainer machinery: env adapters, replay, advantage estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..env import ContinuousAction, DrivingEnv


def squash(u: np.ndarray) -> np.ndarray:
    return np.tanh(u)


def squash_correction(u: np.ndarray) -> np.ndarray:
    """log|det d tanh(u)/du| summed over action dims, computed stably.

    log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)).
    """
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    per_dim = 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))
    return per_dim.sum(axis=1)


def squashed_log_prob(mean: np.ndarray, log_std: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Log density of a = tanh(u) when u is Gaussian: change of variables."""
    from ..nn import gaussian_log_prob

    lp = np.atleast_1d(gaussian_log_prob(mean, log_std, u))
    return lp - squash_correction(u)


class FlatEnv:
    """Adapter exposing flat float vectors: obs (D,), action (A,), scalar reward."""

    def __init__(self, env: DrivingEnv):
        self.env = env
        rows, cols = env.observation_shape
        self.obs_dim = rows * cols
        self.act_dim = 2

    def reset(self, seed: int) -> np.ndarray:
        return self.env.reset(seed).ravel()

    def step(self, action: np.ndarray):
        res = self.env.step(ContinuousAction(float(action[0]), float(action[1])))
        return res.observation.ravel(), res.reward.r_total, res.terminated, res.info


class EpisodeRunner:
    """Persistent stepping across rollout boundaries, with auto-reset.

    Per-episode seeds are drawn from a dedicated generator so the episode
    stream depends only on the root seed, not on how collection is chunked.
    """

    def __init__(self, env, seed_rng: np.random.Generator):
        self.env = env
        self._seed_rng = seed_rng
        self.obs = env.reset(self._next_seed())
        self.episode_return = 0.0
        self.episode_steps = 0
        self.completed: list[tuple[int, float]] = []  # (steps, summed step reward)

    def _next_seed(self) -> int:
        return int(self._seed_rng.integers(0, 2**31 - 1))

    def step(self, action: np.ndarray):
        obs, reward, done, info = self.env.step(action)
        self.episode_return += reward
        self.episode_steps += 1
        if done:
            self.completed.append((self.episode_steps, self.episode_return))
            self.episode_return = 0.0
            self.episode_steps = 0
            obs = self.env.reset(self._next_seed())
        self.obs = obs
        return reward, done

    def drain_completed(self) -> list[tuple[int, float]]:
        done, self.completed = self.completed, []
        return done


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform no-replacement batch sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, obs, action, reward, next_obs, done):
        i = self._next
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = float(done)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int) -> dict[str, np.ndarray]:
        if batch > self._size:
            raise ValueError("not enough transitions buffered")
        idx = rng.choice(self._size, size=batch, replace=False)
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "dones": self.dones[idx],
        }


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    last_value: float,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over a flat rollout with done flags.

    lam=1 reduces to discounted Monte-Carlo minus the value baseline;
    lam=0 to the one-step TD residual. Returns (advantages, returns) where
    returns = advantages + values.
    """
    n = len(rewards)
    adv = np.zeros(n)
    gae = 0.0
    next_value = last_value
    for t in range(n - 1, -1, -1):
        mask = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * mask - values[t]
        gae = delta + gamma * lam * mask * gae
        adv[t] = gae
        next_value = values[t]
    return adv, adv + values


@dataclass
class RolloutBatch:
    """One on-policy collection window plus frozen old-policy statistics."""

    obs: np.ndarray
    actions_pre: np.ndarray  # pre-squash Gaussian samples
    log_probs: np.ndarray
    means: np.ndarray
    log_std: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    episodes: list[tuple[int, float]] = field(default_factory=list)


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    centered = adv - adv.mean()
    return centered / (std + 1e-8)


def collect_rollout(
    runner: EpisodeRunner,
    policy,
    value_net,
    steps: int,
    rng: np.random.Generator,
    gamma: float,
    lam: float,
) -> RolloutBatch:
    """Sample `steps` transitions with tanh-squashed Gaussian actions."""
    from ..nn import gaussian_log_prob

    obs_dim = runner.obs.shape[0]
    act_dim = policy.log_std.shape[0]
    obs = np.zeros((steps, obs_dim))
    actions = np.zeros((steps, act_dim))
    means = np.zeros((steps, act_dim))
    rewards = np.zeros(steps)
    dones = np.zeros(steps)
    std = np.exp(policy.log_std)
    for t in range(steps):
        obs[t] = runner.obs
        mu = policy.mean(obs[t])
        u = mu + std * rng.standard_normal(act_dim)
        reward, done = runner.step(np.tanh(u))
        actions[t] = u
        means[t] = mu
        rewards[t] = reward
        dones[t] = float(done)
    values = value_net.forward(obs)[:, 0]
    last_value = float(value_net.forward(runner.obs[None, :])[0, 0])
    adv, rets = compute_gae(rewards, values, dones, last_value, gamma, lam)
    log_probs = gaussian_log_prob(means, policy.log_std, actions)
    return RolloutBatch(
        obs=obs,
        actions_pre=actions,
        log_probs=log_probs,
        means=means,
        log_std=policy.log_std.copy(),
        rewards=rewards,
        dones=dones,
        values=values,
        advantages=normalize_advantages(adv),
        returns=rets,
        episodes=runner.drain_completed(),
    )


def fit_value_net(value_net, value_adam, obs, targets, lr, epochs, minibatch, rng):
    """Adam regression of the value net onto returns; returns the last loss."""
    from ..nn import adam_step

    n = len(obs)
    last = 0.0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, minibatch):
            idx = order[start : start + minibatch]
            pred, cache = value_net.forward_cached(obs[idx])
            err = pred[:, 0] - targets[idx]
            last = float(np.mean(err**2))
            gy = (2.0 * err / len(idx))[:, None]
            grad, _ = value_net.backward(cache, gy)
            value_net.set_from_flat(adam_step(value_net.flatten(), grad, value_adam, lr))
    return last
