"""Deterministic actor-critic with replay and soft target tracking."""

from __future__ import annotations

import numpy as np

from ..config import Hyperparams
from ..nn import AdamState, Mlp, adam_step, mlp_arrays, mlp_from_arrays


class DdpgAgent:
    """tanh actor, action-value critic, and their slow-moving target copies."""

    def __init__(self, obs_dim: int, act_dim: int, hp: Hyperparams, rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hp = hp
        hidden = tuple(hp.hidden)
        self.actor = Mlp.create((obs_dim, *hidden, act_dim), rng, "tanh", out_scale=0.1)
        self.critic = Mlp.create((obs_dim + act_dim, *hidden, 1), rng, "identity")
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self._actor_adam = AdamState(self.actor.n_params)
        self._critic_adam = AdamState(self.critic.n_params)

    # ------------------------------------------------------------------ acting

    def act(self, obs: np.ndarray, noise_rng: np.random.Generator | None = None) -> np.ndarray:
        action = self.actor.forward(np.asarray(obs, dtype=np.float64))
        if noise_rng is not None and self.hp.noise_sigma > 0:
            action = action + self.hp.noise_sigma * noise_rng.standard_normal(self.act_dim)
        return np.clip(action, -1.0, 1.0)

    # ------------------------------------------------------------------ updates

    def targets_for(self, batch: dict[str, np.ndarray]) -> np.ndarray:
        """Bootstrap targets r + gamma * (1 - done) * Q'(s', mu'(s'))."""
        next_actions = self.target_actor.forward(batch["next_obs"])
        q_next = self.target_critic.forward(
            np.concatenate([batch["next_obs"], next_actions], axis=1)
        )[:, 0]
        return batch["rewards"] + self.hp.gamma * (1.0 - batch["dones"]) * q_next

    def update(self, batch: dict[str, np.ndarray]) -> dict[str, float]:
        n = len(batch["rewards"])
        y = self.targets_for(batch)
        q, cache = self.critic.forward_cached(
            np.concatenate([batch["obs"], batch["actions"]], axis=1)
        )
        td = q[:, 0] - y
        critic_loss = float(np.mean(td**2))
        if not np.isfinite(critic_loss):
            raise RuntimeError(
                f"ddpg: critic loss diverged (loss={critic_loss}, |q|max={np.abs(q).max()})"
            )
        grad, _ = self.critic.backward(cache, (2.0 * td / n)[:, None])
        self.critic.set_from_flat(
            adam_step(self.critic.flatten(), grad, self._critic_adam, self.hp.critic_lr)
        )

        actions, cache_a = self.actor.forward_cached(batch["obs"])
        q_a, cache_q = self.critic.forward_cached(
            np.concatenate([batch["obs"], actions], axis=1)
        )
        actor_loss = float(-np.mean(q_a))
        if not np.isfinite(actor_loss):
            raise RuntimeError(f"ddpg: actor objective diverged (loss={actor_loss})")
        _, gx = self.critic.backward(cache_q, np.full((n, 1), -1.0 / n))
        grad_a, _ = self.actor.backward(cache_a, gx[:, self.obs_dim :])
        self.actor.set_from_flat(
            adam_step(self.actor.flatten(), grad_a, self._actor_adam, self.hp.actor_lr)
        )

        self.soft_update()
        return {"critic_loss": critic_loss, "actor_loss": actor_loss}

    def soft_update(self, tau: float | None = None):
        tau = self.hp.tau if tau is None else tau
        for online, target in ((self.actor, self.target_actor), (self.critic, self.target_critic)):
            target.set_from_flat(tau * online.flatten() + (1.0 - tau) * target.flatten())

    # ------------------------------------------------------------------ io

    def checkpoint_arrays(self) -> list[tuple[str, np.ndarray]]:
        return (
            mlp_arrays("actor", self.actor)
            + mlp_arrays("critic", self.critic)
            + mlp_arrays("target_actor", self.target_actor)
            + mlp_arrays("target_critic", self.target_critic)
        )

    @classmethod
    def from_arrays(
        cls, arrays: dict[str, np.ndarray], obs_dim: int, act_dim: int, hp: Hyperparams
    ) -> "DdpgAgent":
        agent = cls.__new__(cls)
        agent.obs_dim = obs_dim
        agent.act_dim = act_dim
        agent.hp = hp
        agent.actor = mlp_from_arrays("actor", arrays, "tanh")
        agent.critic = mlp_from_arrays("critic", arrays, "identity")
        agent.target_actor = mlp_from_arrays("target_actor", arrays, "tanh")
        agent.target_critic = mlp_from_arrays("target_critic", arrays, "identity")
        agent._actor_adam = AdamState(agent.actor.n_params)
        agent._critic_adam = AdamState(agent.critic.n_params)
        return agent

    def policy_fn(self):
        """Deterministic test-time policy: obs -> action in [-1, 1]^A."""
        return lambda obs: self.actor.forward(np.asarray(obs, dtype=np.float64).ravel())
