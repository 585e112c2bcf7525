"""Trust-region policy optimization: natural gradient steps under a KL bound."""

from __future__ import annotations

import numpy as np

from ..config import Hyperparams
from ..nn import (
    AdamState,
    GaussianPolicy,
    Mlp,
    diag_gaussian_kl,
    gaussian_log_prob,
    mlp_arrays,
    mlp_from_arrays,
)
from .common import RolloutBatch, fit_value_net


def conjugate_gradient(matvec, b: np.ndarray, max_iter: int = 10, tol: float = 1e-10):
    """Solve A x = b for symmetric positive definite A given only matvec.

    Returns (x, ok); ok is False on a non-positive-curvature breakdown, in
    which case x holds the progress made so far (possibly zero).
    """
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    for _ in range(max_iter):
        if np.sqrt(rs) < tol:
            break
        ap = matvec(p)
        pap = float(p @ ap)
        if pap <= 0.0 or not np.isfinite(pap):
            return x, False
        alpha = rs / pap
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, True


def surrogate(policy: GaussianPolicy, batch: RolloutBatch) -> float:
    """Importance-weighted advantage objective mean(rho * A)."""
    lp = gaussian_log_prob(policy.mean_net.forward(batch.obs), policy.log_std, batch.actions_pre)
    return float(np.mean(np.exp(lp - batch.log_probs) * batch.advantages))


def surrogate_gradient(policy: GaussianPolicy, batch: RolloutBatch) -> np.ndarray:
    """Gradient of the surrogate at the rollout policy (where rho = 1)."""
    obs = batch.obs
    u = batch.actions_pre
    mu, cache = policy.mean_net.forward_cached(obs)
    lp = gaussian_log_prob(mu, policy.log_std, u)
    coef = np.exp(lp - batch.log_probs) * batch.advantages / len(u)
    var = np.exp(2.0 * policy.log_std)
    grad_mean, _ = policy.mean_net.backward(cache, coef[:, None] * (u - mu) / var)
    zsq = ((u - mu) ** 2) / var
    grad_log_std = (coef[:, None] * (zsq - 1.0)).sum(axis=0)
    return np.concatenate([grad_mean, grad_log_std])


def fisher_vector_product(
    policy: GaussianPolicy, obs: np.ndarray, v: np.ndarray, damping: float
) -> np.ndarray:
    """(F + damping I) v for the mean KL over `obs`.

    For a diagonal Gaussian the KL Hessian at the rollout policy is the
    Gauss-Newton form J^T M J with M = diag(1/sigma^2) on the mean head and
    2 per dimension on the state-independent log stds, so one forward-mode
    and one reverse-mode pass give the exact product.
    """
    n_mean = policy.mean_net.n_params
    v_mean, v_log_std = v[:n_mean], v[n_mean:]
    _, cache = policy.mean_net.forward_cached(obs)
    tangent = policy.mean_net.jvp(obs, v_mean)
    weighted = tangent / np.exp(2.0 * policy.log_std)
    f_mean, _ = policy.mean_net.backward(cache, weighted / len(obs))
    f_log_std = 2.0 * v_log_std
    return np.concatenate([f_mean, f_log_std]) + damping * v


def mean_kl(policy: GaussianPolicy, batch: RolloutBatch) -> float:
    return float(
        np.mean(
            diag_gaussian_kl(
                batch.means,
                batch.log_std,
                policy.mean_net.forward(batch.obs),
                policy.log_std,
            )
        )
    )


class TrpoAgent:
    """KL-constrained natural-gradient policy updates with a fitted baseline."""

    def __init__(self, obs_dim: int, act_dim: int, hp: Hyperparams, rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hp = hp
        hidden = tuple(hp.hidden)
        self.policy = GaussianPolicy.create(
            obs_dim, act_dim, rng, hidden=hidden, init_log_std=hp.init_log_std
        )
        self.value_net = Mlp.create((obs_dim, *hidden, 1), rng, "identity")
        self._value_adam = AdamState(self.value_net.n_params)

    def update(self, batch: RolloutBatch, rng: np.random.Generator) -> dict[str, float]:
        """One constrained step; a rejected line search leaves the policy unchanged."""
        hp = self.hp
        old_flat = self.policy.flatten()
        before = surrogate(self.policy, batch)
        grad = surrogate_gradient(self.policy, batch)
        report = {
            "accepted": 0.0,
            "kl": 0.0,
            "improvement": 0.0,
            "cg_fallback": 0.0,
            "backtracks": 0.0,
            "value_loss": 0.0,
        }
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm > 1e-12:
            matvec = lambda v: fisher_vector_product(self.policy, batch.obs, v, hp.cg_damping)
            direction, ok = conjugate_gradient(matvec, grad, hp.cg_iters)
            if not ok and np.linalg.norm(direction) < 1e-12:
                direction = grad  # curvature breakdown before any progress
            report["cg_fallback"] = 0.0 if ok else 1.0
            shs = float(direction @ matvec(direction))
            if shs > 0:
                full_step = np.sqrt(2.0 * hp.trpo_kl / shs) * direction
                scale = 1.0
                for attempt in range(hp.line_search_tries):
                    self.policy.set_from_flat(old_flat + scale * full_step)
                    improvement = surrogate(self.policy, batch) - before
                    kl = mean_kl(self.policy, batch)
                    if improvement > 0.0 and kl <= hp.trpo_kl:
                        report.update(
                            accepted=1.0,
                            kl=kl,
                            improvement=improvement,
                            backtracks=float(attempt),
                        )
                        break
                    scale *= hp.line_search_shrink
                else:
                    self.policy.set_from_flat(old_flat)
        report["value_loss"] = fit_value_net(
            self.value_net,
            self._value_adam,
            batch.obs,
            batch.returns,
            hp.value_lr,
            hp.value_epochs,
            hp.minibatch_size,
            rng,
        )
        return report

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
    ) -> "TrpoAgent":
        agent = cls.__new__(cls)
        agent.obs_dim = obs_dim
        agent.act_dim = act_dim
        agent.hp = hp
        agent.policy = GaussianPolicy(
            mlp_from_arrays("policy_mean", arrays, "identity"), arrays["policy_log_std"]
        )
        agent.value_net = mlp_from_arrays("value", arrays, "identity")
        agent._value_adam = AdamState(agent.value_net.n_params)
        return agent

    def policy_fn(self):
        return lambda obs: np.tanh(self.policy.mean(np.asarray(obs, dtype=np.float64).ravel()))
