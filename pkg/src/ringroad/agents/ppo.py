"""Clipped-surrogate policy optimization with a fitted value baseline."""

from __future__ import annotations

import numpy as np

from ..config import Hyperparams
from ..nn import (
    AdamState,
    GaussianPolicy,
    Mlp,
    adam_step,
    diag_gaussian_kl,
    gaussian_log_prob,
    mlp_arrays,
    mlp_from_arrays,
)
from .common import RolloutBatch, fit_value_net


def clipped_surrogate(
    policy: GaussianPolicy, batch: RolloutBatch, idx: np.ndarray, clip: float
):
    """Surrogate value and its gradient w.r.t. the flat policy parameters.

    min(rho * A, clip(rho) * A) has gradient rho * A * dlogp wherever the
    unclipped branch is active, and zero otherwise (the clipped branch is
    constant in the parameters when it is strictly smaller).
    """
    obs = batch.obs[idx]
    u = batch.actions_pre[idx]
    adv = batch.advantages[idx]
    old_lp = batch.log_probs[idx]
    mu, cache = policy.mean_net.forward_cached(obs)
    lp = gaussian_log_prob(mu, policy.log_std, u)
    ratio = np.exp(lp - old_lp)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    value = float(np.mean(np.minimum(surr1, surr2)))
    n = len(idx)
    coef = np.where(surr1 <= surr2, ratio * adv, 0.0) / n
    var = np.exp(2.0 * policy.log_std)
    z = (u - mu) / var
    grad_mean, _ = policy.mean_net.backward(cache, coef[:, None] * z)
    zsq = ((u - mu) ** 2) / var
    grad_log_std = (coef[:, None] * (zsq - 1.0)).sum(axis=0)
    return value, np.concatenate([grad_mean, grad_log_std])


class PpoAgent:
    """Gaussian policy (tanh-squashed at the env boundary) plus value net."""

    def __init__(self, obs_dim: int, act_dim: int, hp: Hyperparams, rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hp = hp
        hidden = tuple(hp.hidden)
        self.policy = GaussianPolicy.create(
            obs_dim, act_dim, rng, hidden=hidden, init_log_std=hp.init_log_std
        )
        self.value_net = Mlp.create((obs_dim, *hidden, 1), rng, "identity")
        self._policy_adam = AdamState(self.policy.n_params)
        self._value_adam = AdamState(self.value_net.n_params)

    def update(self, batch: RolloutBatch, rng: np.random.Generator) -> dict[str, float]:
        hp = self.hp
        n = len(batch.rewards)
        epochs_run = 0
        kl = 0.0
        surrogate_start = surrogate_end = 0.0
        monotone_epochs = 0
        for epoch in range(hp.ppo_epochs):
            order = rng.permutation(n)
            epoch_before, _ = clipped_surrogate(self.policy, batch, order, hp.ppo_clip)
            for start in range(0, n, hp.minibatch_size):
                idx = order[start : start + hp.minibatch_size]
                value, grad = clipped_surrogate(self.policy, batch, idx, hp.ppo_clip)
                # ascend surrogate plus entropy bonus
                grad[-self.act_dim :] += hp.entropy_coef
                flat = adam_step(
                    self.policy.flatten(), -grad, self._policy_adam, hp.policy_lr
                )
                self.policy.set_from_flat(flat)
            epoch_after, _ = clipped_surrogate(self.policy, batch, order, hp.ppo_clip)
            if epoch == 0:
                surrogate_start = epoch_before
            surrogate_end = epoch_after
            if epoch_after >= epoch_before - 1e-12:
                monotone_epochs += 1
            epochs_run += 1
            kl = float(
                np.mean(
                    diag_gaussian_kl(
                        batch.means,
                        batch.log_std,
                        self.policy.mean_net.forward(batch.obs),
                        self.policy.log_std,
                    )
                )
            )
            if kl > hp.kl_stop:
                break
        value_loss = fit_value_net(
            self.value_net,
            self._value_adam,
            batch.obs,
            batch.returns,
            hp.value_lr,
            hp.ppo_epochs,
            hp.minibatch_size,
            rng,
        )
        return {
            "policy_surrogate": surrogate_end,
            "surrogate_gain": surrogate_end - surrogate_start,
            "value_loss": value_loss,
            "kl": kl,
            "epochs": float(epochs_run),
            "monotone_epochs": float(monotone_epochs),
        }

    # ------------------------------------------------------------------ io

    def checkpoint_arrays(self) -> list[tuple[str, np.ndarray]]:
        return (
            mlp_arrays("policy_mean", self.policy.mean_net)
            + [("policy_log_std", self.policy.log_std)]
            + mlp_arrays("value", self.value_net)
        )

    @classmethod
    def from_arrays(
        cls, arrays: dict[str, np.ndarray], obs_dim: int, act_dim: int, hp: Hyperparams
    ) -> "PpoAgent":
        agent = cls.__new__(cls)
        agent.obs_dim = obs_dim
        agent.act_dim = act_dim
        agent.hp = hp
        agent.policy = GaussianPolicy(
            mlp_from_arrays("policy_mean", arrays, "identity"), arrays["policy_log_std"]
        )
        agent.value_net = mlp_from_arrays("value", arrays, "identity")
        agent._policy_adam = AdamState(agent.policy.n_params)
        agent._value_adam = AdamState(agent.value_net.n_params)
        return agent

    def policy_fn(self):
        """Deterministic test-time policy: squashed mean action."""
        return lambda obs: np.tanh(self.policy.mean(np.asarray(obs, dtype=np.float64).ravel()))
