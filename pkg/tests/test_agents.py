import math

import numpy as np
import pytest

from ringroad.config import Hyperparams, ScenarioConfig
from ringroad.agents.common import (
    EpisodeRunner,
    FlatEnv,
    ReplayBuffer,
    collect_rollout,
    compute_gae,
    squashed_log_prob,
)
from ringroad.agents.ddpg import DdpgAgent
from ringroad.agents.ppo import PpoAgent, clipped_surrogate
from ringroad.agents.trpo import TrpoAgent, conjugate_gradient, fisher_vector_product
from ringroad.agents.train import make_agent, train
from ringroad.env import DrivingEnv
from ringroad.nn import GaussianPolicy, Mlp, gaussian_log_prob


class BanditEnv:
    """Single-state, single-step episodes; reward 1 iff the action is positive."""

    obs_dim = 1
    act_dim = 1

    def reset(self, seed):
        return np.zeros(1)

    def step(self, action):
        return np.zeros(1), float(action[0] > 0.0), True, {}


def small_hp(**kw):
    hp = Hyperparams(hidden=(16, 16), rollout_steps=256, minibatch_size=64)
    for key, value in kw.items():
        setattr(hp, key, value)
    return hp


# --------------------------------------------------------------------- GAE


def test_gae_lambda_one_is_discounted_monte_carlo():
    rewards = np.array([1.0, 0.5, -0.2, 2.0, 0.3])
    values = np.array([0.3, -0.1, 0.4, 0.2, 0.9])
    dones = np.zeros(5)
    last_value = 0.7
    gamma = 0.9
    adv, rets = compute_gae(rewards, values, dones, last_value, gamma, 1.0)
    ext = np.append(rewards, last_value)
    for t in range(5):
        g = sum(gamma ** (k - t) * ext[k] for k in range(t, 5)) + gamma ** (5 - t) * last_value
        assert adv[t] == pytest.approx(g - values[t], abs=1e-12)
        assert rets[t] == pytest.approx(g, abs=1e-12)


def test_gae_lambda_zero_is_td_residual():
    rewards = np.array([1.0, 0.5, -0.2, 2.0, 0.3])
    values = np.array([0.3, -0.1, 0.4, 0.2, 0.9])
    dones = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
    last_value = 0.7
    gamma = 0.95
    adv, _ = compute_gae(rewards, values, dones, last_value, gamma, 0.0)
    next_values = np.append(values[1:], last_value)
    for t in range(5):
        delta = rewards[t] + gamma * next_values[t] * (1 - dones[t]) - values[t]
        assert adv[t] == pytest.approx(delta, abs=1e-12)


def test_gae_respects_episode_boundaries():
    rewards = np.array([1.0, 1.0, 1.0, 1.0])
    values = np.zeros(4)
    dones = np.array([0.0, 1.0, 0.0, 0.0])
    adv, _ = compute_gae(rewards, values, dones, 10.0, 0.9, 1.0)
    # the first episode must not see rewards after its terminal step
    assert adv[0] == pytest.approx(1.0 + 0.9 * 1.0, abs=1e-12)
    assert adv[1] == pytest.approx(1.0, abs=1e-12)


# --------------------------------------------------------------------- replay


def test_replay_buffer_ring_and_sampling():
    buf = ReplayBuffer(capacity=8, obs_dim=2, act_dim=1)
    for i in range(12):
        buf.push(np.full(2, i), np.full(1, i), float(i), np.full(2, i + 1), i % 3 == 0)
    assert len(buf) == 8
    rng = np.random.default_rng(0)
    batch = buf.sample(rng, 8)
    rewards = sorted(batch["rewards"].tolist())
    assert rewards == [4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0]  # oldest overwritten
    assert len(set(rewards)) == 8  # no replacement within the batch
    with pytest.raises(ValueError):
        buf.sample(rng, 9)


# --------------------------------------------------------------------- squash


def test_squashed_log_prob_integrates_to_one():
    # quadrature over a = tanh(u) for a 1-d Gaussian with non-trivial mean/std
    mean = np.array([0.4])
    log_std = np.array([-0.3])
    u = np.linspace(-12, 12, 200_001)[:, None]
    a = np.tanh(u[:, 0])
    dens = np.exp(squashed_log_prob(mean, log_std, u))
    integral = np.trapezoid(dens, a)  # non-uniform grid in a
    assert integral == pytest.approx(1.0, abs=1e-6)


# --------------------------------------------------------------------- ddpg


def make_ddpg(hp=None):
    hp = hp or small_hp()
    return DdpgAgent(4, 2, hp, np.random.default_rng(0))


def fake_batch(n=32, obs_dim=4, act_dim=2, seed=1):
    rng = np.random.default_rng(seed)
    return {
        "obs": rng.standard_normal((n, obs_dim)),
        "actions": rng.uniform(-1, 1, (n, act_dim)),
        "rewards": rng.standard_normal(n),
        "next_obs": rng.standard_normal((n, obs_dim)),
        "dones": (rng.uniform(size=n) < 0.2).astype(float),
    }


def test_ddpg_tau_one_copies_targets():
    agent = make_ddpg()
    agent.update(fake_batch())
    agent.soft_update(tau=1.0)
    assert np.array_equal(agent.actor.flatten(), agent.target_actor.flatten())
    assert np.array_equal(agent.critic.flatten(), agent.target_critic.flatten())


def test_ddpg_gamma_zero_targets_equal_rewards():
    agent = make_ddpg(small_hp(gamma=0.0))
    batch = fake_batch()
    assert np.allclose(agent.targets_for(batch), batch["rewards"], atol=1e-12)


def test_ddpg_target_distance_contracts_geometrically():
    agent = make_ddpg()
    agent.update(fake_batch())  # desync targets from online nets
    tau = agent.hp.tau
    dist = np.linalg.norm(agent.actor.flatten() - agent.target_actor.flatten())
    assert dist > 0
    for _ in range(5):
        agent.soft_update()
        new_dist = np.linalg.norm(agent.actor.flatten() - agent.target_actor.flatten())
        assert new_dist == pytest.approx((1 - tau) * dist, rel=1e-9)
        dist = new_dist


def test_ddpg_update_reports_finite_losses():
    agent = make_ddpg()
    report = agent.update(fake_batch())
    assert math.isfinite(report["critic_loss"])
    assert math.isfinite(report["actor_loss"])


# --------------------------------------------------------------------- ppo


def test_ppo_gradient_at_old_policy_is_vanilla_pg():
    rng = np.random.default_rng(2)
    hp = small_hp()
    agent = PpoAgent(3, 2, hp, np.random.default_rng(1))
    n = 64
    obs = rng.standard_normal((n, 3))
    mu = agent.policy.mean_net.forward(obs)
    std = np.exp(agent.policy.log_std)
    u = mu + std * rng.standard_normal((n, 2))
    adv = rng.standard_normal(n)
    from ringroad.agents.common import RolloutBatch

    batch = RolloutBatch(
        obs=obs,
        actions_pre=u,
        log_probs=gaussian_log_prob(mu, agent.policy.log_std, u),
        means=mu,
        log_std=agent.policy.log_std.copy(),
        rewards=np.zeros(n),
        dones=np.zeros(n),
        values=np.zeros(n),
        advantages=adv,
        returns=np.zeros(n),
    )
    value, grad = clipped_surrogate(agent.policy, batch, np.arange(n), hp.ppo_clip)
    assert value == pytest.approx(float(adv.mean()), abs=1e-12)  # rho = 1
    # vanilla policy gradient of mean(A * logp)
    var = std**2
    _, cache = agent.policy.mean_net.forward_cached(obs)
    g_mean, _ = agent.policy.mean_net.backward(cache, (adv / n)[:, None] * (u - mu) / var)
    g_ls = ((adv / n)[:, None] * (((u - mu) ** 2) / var - 1.0)).sum(axis=0)
    vanilla = np.concatenate([g_mean, g_ls])
    assert np.allclose(grad, vanilla, atol=1e-12)


def test_ppo_zero_advantages_leave_policy_unchanged():
    hp = small_hp(entropy_coef=0.0)
    agent = PpoAgent(1, 1, hp, np.random.default_rng(3))
    runner = EpisodeRunner(BanditEnv(), np.random.default_rng(0))
    batch = collect_rollout(
        runner, agent.policy, agent.value_net, 128, np.random.default_rng(1), hp.gamma, hp.gae_lambda
    )
    batch.advantages[:] = 0.0
    before = agent.policy.flatten()
    agent.update(batch, np.random.default_rng(2))
    assert np.array_equal(agent.policy.flatten(), before)


def test_ppo_bandit_probability_increases_monotonically():
    # small lr keeps the run in the clean ascent phase for the whole window
    hp = small_hp(rollout_steps=512, minibatch_size=128, ppo_epochs=10, policy_lr=5e-5)
    agent = PpoAgent(1, 1, hp, np.random.default_rng(4))
    runner = EpisodeRunner(BanditEnv(), np.random.default_rng(5))
    explore = np.random.default_rng(6)
    update_rng = np.random.default_rng(7)
    obs = np.zeros(1)

    def p_positive():
        mu = float(agent.policy.mean(obs)[0])
        sigma = float(np.exp(agent.policy.log_std[0]))
        return 0.5 * (1 + math.erf(mu / (sigma * math.sqrt(2))))

    probs = [p_positive()]
    monotone = 0
    total_epochs = 0
    for _ in range(50):
        batch = collect_rollout(
            runner, agent.policy, agent.value_net, hp.rollout_steps, explore, hp.gamma, hp.gae_lambda
        )
        report = agent.update(batch, update_rng)
        monotone += report["monotone_epochs"]
        total_epochs += report["epochs"]
        probs.append(p_positive())
    assert all(b >= a - 1e-12 for a, b in zip(probs, probs[1:]))
    assert probs[-1] > 0.9
    # clipped surrogate is non-decreasing across epochs in >= 95% of them
    assert monotone / total_epochs >= 0.95


# --------------------------------------------------------------------- trpo


def test_conjugate_gradient_matches_dense_solve():
    rng = np.random.default_rng(8)
    for _ in range(5):
        b_mat = rng.standard_normal((20, 20))
        a = b_mat.T @ b_mat + 0.5 * np.eye(20)
        rhs = rng.standard_normal(20)
        x, ok = conjugate_gradient(lambda v: a @ v, rhs, max_iter=200, tol=1e-14)
        assert ok
        direct = np.linalg.solve(a, rhs)
        assert np.max(np.abs(x - direct)) < 1e-8


def test_conjugate_gradient_flags_indefinite_system():
    a = np.diag([1.0, -1.0, 2.0])
    x, ok = conjugate_gradient(lambda v: a @ v, np.array([0.0, 1.0, 0.0]), max_iter=10)
    assert not ok


def test_fisher_vector_product_matches_explicit_jacobian():
    rng = np.random.default_rng(9)
    policy = GaussianPolicy(Mlp.create((2, 3, 1), rng, "identity", out_scale=1.0), np.array([-0.2]))
    obs = rng.standard_normal((6, 2))
    n_mean = policy.mean_net.n_params
    n = policy.n_params
    # explicit Jacobian of the mean head by central differences
    theta0 = policy.mean_net.flatten()
    jac = np.zeros((6, n_mean))
    h = 1e-6
    for i in range(n_mean):
        up, dn = theta0.copy(), theta0.copy()
        up[i] += h
        dn[i] -= h
        policy.mean_net.set_from_flat(up)
        f_up = policy.mean_net.forward(obs)[:, 0]
        policy.mean_net.set_from_flat(dn)
        f_dn = policy.mean_net.forward(obs)[:, 0]
        jac[:, i] = (f_up - f_dn) / (2 * h)
    policy.mean_net.set_from_flat(theta0)
    var = float(np.exp(2 * policy.log_std[0]))
    f_mean_block = jac.T @ jac / var / 6
    v = rng.standard_normal(n)
    expected = np.concatenate([f_mean_block @ v[:n_mean], 2.0 * v[n_mean:]])
    got = fisher_vector_product(policy, obs, v, damping=0.0)
    assert np.max(np.abs(got - expected)) < 1e-6


def test_trpo_zero_advantages_no_change():
    hp = small_hp()
    agent = TrpoAgent(1, 1, hp, np.random.default_rng(10))
    runner = EpisodeRunner(BanditEnv(), np.random.default_rng(11))
    batch = collect_rollout(
        runner, agent.policy, agent.value_net, 128, np.random.default_rng(12), hp.gamma, hp.gae_lambda
    )
    batch.advantages[:] = 0.0
    before = agent.policy.flatten()
    report = agent.update(batch, np.random.default_rng(13))
    assert np.array_equal(agent.policy.flatten(), before)
    assert report["accepted"] == 0.0


def test_trpo_accepted_steps_respect_kl_bound():
    hp = small_hp(rollout_steps=512)
    agent = TrpoAgent(1, 1, hp, np.random.default_rng(14))
    runner = EpisodeRunner(BanditEnv(), np.random.default_rng(15))
    explore = np.random.default_rng(16)
    update_rng = np.random.default_rng(17)
    accepted = 0
    for _ in range(15):
        batch = collect_rollout(
            runner, agent.policy, agent.value_net, hp.rollout_steps, explore, hp.gamma, hp.gae_lambda
        )
        report = agent.update(batch, update_rng)
        if report["accepted"]:
            accepted += 1
            assert report["kl"] <= hp.trpo_kl + 1e-12
            assert report["improvement"] > 0.0
    assert accepted >= 10  # the bandit is easy; most steps should be accepted


# --------------------------------------------------------------------- rollouts and train


def test_collect_rollout_is_deterministic():
    hp = small_hp()

    def collect():
        agent = PpoAgent(1, 1, hp, np.random.default_rng(20))
        runner = EpisodeRunner(BanditEnv(), np.random.default_rng(21))
        return collect_rollout(
            runner, agent.policy, agent.value_net, 64, np.random.default_rng(22), 0.99, 0.95
        )

    a, b = collect(), collect()
    assert np.array_equal(a.actions_pre, b.actions_pre)
    assert np.array_equal(a.rewards, b.rewards)
    assert np.array_equal(a.advantages, b.advantages)


def test_rollout_advantages_are_normalized():
    hp = small_hp()
    agent = PpoAgent(1, 1, hp, np.random.default_rng(23))
    runner = EpisodeRunner(BanditEnv(), np.random.default_rng(24))
    batch = collect_rollout(
        runner, agent.policy, agent.value_net, 256, np.random.default_rng(25), 0.99, 0.95
    )
    assert batch.advantages.mean() == pytest.approx(0.0, abs=1e-9)
    assert batch.advantages.std() == pytest.approx(1.0, abs=1e-6)
    assert len(batch.episodes) == 256  # bandit episodes are single-step


def empty_ring_cfg():
    cfg = ScenarioConfig()
    cfg.env.ambient_vehicles = 0
    return cfg


def test_train_zero_episodes_returns_initialization():
    hp = small_hp()
    result = train("ppo", empty_ring_cfg(), hp, seed=0, episodes=0)
    fresh = make_agent("ppo", 42, 2, hp, np.random.default_rng(np.random.SeedSequence(0).spawn(4)[0]))
    assert np.array_equal(result.agent.policy.flatten(), fresh.policy.flatten())
    assert result.curve == []


def test_train_fixed_seed_reproduces_curve():
    hp = small_hp(rollout_steps=128, ppo_epochs=2, value_epochs=2)
    a = train("ppo", empty_ring_cfg(), hp, seed=5, episodes=3)
    b = train("ppo", empty_ring_cfg(), hp, seed=5, episodes=3)
    assert [r.episode_return for r in a.curve] == [r.episode_return for r in b.curve]
    assert [r.steps for r in a.curve] == [r.steps for r in b.curve]
    assert np.array_equal(a.agent.policy.flatten(), b.agent.policy.flatten())


def test_train_ddpg_runs_and_is_deterministic():
    hp = small_hp(batch_size=32, warmup_steps=64, update_every=4, buffer_capacity=4096)
    cfg = empty_ring_cfg()
    cfg.env.episode_seconds = 6.0
    a = train("ddpg", cfg, hp, seed=2, episodes=3)
    b = train("ddpg", cfg, hp, seed=2, episodes=3)
    assert [r.episode_return for r in a.curve] == [r.episode_return for r in b.curve]
    assert np.array_equal(a.agent.actor.flatten(), b.agent.actor.flatten())
    assert len(a.curve) == 3


def test_checkpoint_round_trip_through_train(tmp_path):
    from ringroad.agents.train import load_agent, save_agent

    hp = small_hp(rollout_steps=128, ppo_epochs=2, value_epochs=2)
    result = train("trpo", empty_ring_cfg(), hp, seed=1, episodes=2)
    path = tmp_path / "ckpt.bin"
    save_agent(path, result.agent, "trpo", {"scenario": "roundabout"})
    agent, meta = load_agent(path)
    assert meta["algorithm"] == "trpo"
    assert meta["scenario"] == "roundabout"
    assert np.array_equal(agent.policy.flatten(), result.agent.policy.flatten())
    obs = np.zeros(42)
    assert np.array_equal(agent.policy_fn()(obs), result.agent.policy_fn()(obs))
