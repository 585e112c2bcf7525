"""Deterministic test-time evaluation: indicators, weighting, adaptability probes.

A policy is scored over seeded rounds; per-step sub-rewards aggregate into
five indicators in [0, 1], which a weight vector (criteria weights derived by
pairwise comparison, or user supplied) folds into one total score.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .env import DrivingEnv
from .util import clamp

INDICATOR_NAMES = ("collision_rate", "lane_centering", "efficiency", "comfort", "energy")
DEFAULT_INDICATOR_WEIGHTS = (0.4764, 0.2853, 0.1428, 0.0634, 0.0320)
# Saaty random-index table for reciprocal matrices of size n
RANDOM_INDEX = {3: 0.58, 4: 0.90, 5: 1.12, 6: 1.24, 7: 1.32, 8: 1.41, 9: 1.45}


def collision_rate_score(num_collision: int, total_steps: int) -> float:
    """Collisions per step scaled by 1000, mapped to a 0-1 score (clamped at 0)."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if num_collision < 0:
        raise ValueError("num_collision must be >= 0")
    return max(0.0, 1.0 - (num_collision / total_steps) * 1e3)


def score(indicators, weights=None) -> float:
    """Weighted sum of the five indicators."""
    w = DEFAULT_INDICATOR_WEIGHTS if weights is None else tuple(weights)
    ind = tuple(indicators)
    if len(ind) != len(w):
        raise ValueError(f"expected {len(w)} indicators, got {len(ind)}")
    return float(sum(wi * xi for wi, xi in zip(w, ind)))


@dataclass
class AhpResult:
    weights: np.ndarray
    lambda_max: float
    consistency_index: float
    consistency_ratio: float
    consistent: bool  # False flags CR > 0.1


def ahp_weights(matrix, tol: float = 1e-10, max_iter: int = 10_000) -> AhpResult:
    """Criterion weights as the principal eigenvector of a reciprocal matrix.

    Power iteration on the positive matrix, normalized to sum 1; the
    consistency ratio compares (lambda_max - n)/(n - 1) against the random
    index for the matrix size. Inconsistent judgments (CR > 0.1) are returned
    with the `consistent` flag cleared rather than rejected.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("pairwise matrix must be square")
    n = m.shape[0]
    if not 3 <= n <= 9:
        raise ValueError("pairwise matrix size must be between 3 and 9")
    if np.any(m <= 0):
        raise ValueError("pairwise matrix entries must be positive")
    if np.any(np.abs(np.diag(m) - 1.0) > 1e-9):
        raise ValueError("pairwise matrix diagonal must be 1")
    if np.any(np.abs(m * m.T - 1.0) > 1e-6):
        raise ValueError("pairwise matrix violates reciprocity (a_ij * a_ji must be 1)")
    v = np.full(n, 1.0 / n)
    converged = False
    for _ in range(max_iter):
        w = m @ v
        v_new = w / w.sum()
        if np.max(np.abs(v_new - v)) < tol:
            v = v_new
            converged = True
            break
        v = v_new
    if not converged:
        raise RuntimeError("power iteration did not converge")
    lambda_max = float((m @ v).sum())  # v sums to 1
    ci = (lambda_max - n) / (n - 1)
    cr = ci / RANDOM_INDEX[n]
    return AhpResult(
        weights=v,
        lambda_max=lambda_max,
        consistency_index=ci,
        consistency_ratio=cr,
        consistent=cr <= 0.1,
    )


@dataclass
class MetricReport:
    """The five indicators, their weighted total, and the run bookkeeping."""

    collision_rate_score: float
    lane_centering: float
    efficiency: float
    comfort: float
    energy: float
    total_score: float
    rounds: int
    total_steps: int
    collisions: int
    weights: tuple

    def indicators(self) -> tuple[float, float, float, float, float]:
        return (
            self.collision_rate_score,
            self.lane_centering,
            self.efficiency,
            self.comfort,
            self.energy,
        )

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "total_steps": self.total_steps,
            "collisions": self.collisions,
            "indicators": dict(zip(INDICATOR_NAMES, self.indicators())),
            "weights": list(self.weights),
            "total_score": self.total_score,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        ind = data["indicators"]
        return cls(
            collision_rate_score=ind["collision_rate"],
            lane_centering=ind["lane_centering"],
            efficiency=ind["efficiency"],
            comfort=ind["comfort"],
            energy=ind["energy"],
            total_score=data["total_score"],
            rounds=data["rounds"],
            total_steps=data["total_steps"],
            collisions=data["collisions"],
            weights=tuple(data["weights"]),
        )


def round_seed(seed: int, round_index: int) -> int:
    """Stable per-round reset seed so evaluations split and merge exactly."""
    return int(np.random.SeedSequence([int(seed), int(round_index)]).generate_state(1)[0])


@dataclass
class _Tally:
    steps: int = 0
    collisions: int = 0
    lc: float = 0.0
    eff: float = 0.0
    com: float = 0.0
    en: float = 0.0
    abs_lateral: float = 0.0
    speed: float = 0.0
    lane_changes: int = 0
    min_ttc: list = None
    causes: dict = None


def _run_rounds(policy_fn, env: DrivingEnv, rounds: int, seed: int, start_round: int) -> _Tally:
    tally = _Tally(min_ttc=[], causes={})
    network = env.network
    for r in range(start_round, start_round + rounds):
        obs = env.reset(round_seed(seed, r))
        prev_lane = env.ego.lane
        round_min_ttc = math.inf
        while not env.terminated:
            res = env.step(np.asarray(policy_fn(obs.ravel()), dtype=np.float64))
            obs = res.observation
            rew = res.reward
            tally.steps += 1
            tally.lc += clamp(rew.r_lc, 0.0, 1.0)
            tally.eff += clamp(rew.r_efficient, 0.0, 1.0)
            tally.com += rew.r_comfort
            tally.en += rew.r_energy
            tally.abs_lateral += abs(res.info["lateral"])
            tally.speed += res.info["speed"]
            round_min_ttc = min(round_min_ttc, res.info["ttc"])
            lane = res.info["lane"]
            if lane != prev_lane and lane not in network.lane(prev_lane).successors:
                tally.lane_changes += 1
            prev_lane = lane
        cause = env.termination_cause
        tally.causes[cause] = tally.causes.get(cause, 0) + 1
        if cause == "collision":
            tally.collisions += 1
        tally.min_ttc.append(round_min_ttc)
    return tally


def _report_from_tally(tally: _Tally, rounds: int, weights) -> MetricReport:
    t = max(tally.steps, 1)
    indicators = (
        collision_rate_score(tally.collisions, tally.steps),
        tally.lc / t,
        tally.eff / t,
        tally.com / t,
        tally.en / t,
    )
    w = DEFAULT_INDICATOR_WEIGHTS if weights is None else tuple(weights)
    return MetricReport(
        *indicators,
        total_score=score(indicators, w),
        rounds=rounds,
        total_steps=tally.steps,
        collisions=tally.collisions,
        weights=w,
    )


def evaluate_policy(
    policy_fn,
    env: DrivingEnv,
    rounds: int,
    seed: int = 0,
    weights=None,
    start_round: int = 0,
) -> MetricReport:
    """Score a deterministic policy over seeded rounds."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    tally = _run_rounds(policy_fn, env, rounds, seed, start_round)
    return _report_from_tally(tally, rounds, weights)


def run_evaluation(
    checkpoint,
    scenario_cfg: ScenarioConfig,
    rounds: int = 50,
    seed: int = 0,
    weights=None,
    start_round: int = 0,
) -> MetricReport:
    """Evaluate a checkpoint (path or loaded agent) on a scenario."""
    agent, meta = _resolve_agent(checkpoint)
    env = DrivingEnv(scenario_cfg)
    _check_obs_dim(agent, meta, env)
    return evaluate_policy(agent.policy_fn(), env, rounds, seed, weights, start_round)


def _resolve_agent(checkpoint):
    from .agents.train import load_agent

    if isinstance(checkpoint, (str, Path)):
        return load_agent(checkpoint)
    return checkpoint, {}


def _check_obs_dim(agent, meta, env: DrivingEnv):
    rows, cols = env.observation_shape
    expected = rows * cols
    actual = int(meta.get("obs_dim", getattr(agent, "obs_dim", expected)))
    if actual != expected:
        raise ValueError(
            f"checkpoint expects observation dim {actual}, scenario produces {expected}"
        )


def merge_reports(a: MetricReport, b: MetricReport, weights=None) -> MetricReport:
    """Step-weighted merge of two disjoint evaluation runs."""
    steps = a.total_steps + b.total_steps
    collisions = a.collisions + b.collisions

    def merged(xa: float, xb: float) -> float:
        return (xa * a.total_steps + xb * b.total_steps) / steps

    indicators = (
        collision_rate_score(collisions, steps),
        merged(a.lane_centering, b.lane_centering),
        merged(a.efficiency, b.efficiency),
        merged(a.comfort, b.comfort),
        merged(a.energy, b.energy),
    )
    w = DEFAULT_INDICATOR_WEIGHTS if weights is None else tuple(weights)
    return MetricReport(
        *indicators,
        total_score=score(indicators, w),
        rounds=a.rounds + b.rounds,
        total_steps=steps,
        collisions=collisions,
        weights=w,
    )


def adaptability_report(
    checkpoint,
    scenario_cfgs: dict[str, ScenarioConfig],
    rounds: int = 20,
    seed: int = 0,
) -> dict:
    """Automated cross-scenario proxies: lane keeping, car following, lane changing.

    No subjective scoring: the report carries mean |lateral offset|, the
    per-round minimum-TTC distribution with the collision count, lane-change
    counts, and a speed-tracking proxy.
    """
    agent, meta = _resolve_agent(checkpoint)
    out = {}
    for name in sorted(scenario_cfgs):
        cfg = scenario_cfgs[name]
        env = DrivingEnv(cfg)
        _check_obs_dim(agent, meta, env)
        tally = _run_rounds(agent.policy_fn(), env, rounds, seed, 0)
        t = max(tally.steps, 1)
        finite = sorted(v for v in tally.min_ttc if math.isfinite(v))
        out[name] = {
            "rounds": rounds,
            "total_steps": tally.steps,
            "lane_keeping_mean_abs_lateral": tally.abs_lateral / t,
            "car_following": {
                "collision_count": tally.collisions,
                "min_ttc_finite": finite,
                "min_ttc_unbounded_rounds": len(tally.min_ttc) - len(finite),
            },
            "lane_change_count": tally.lane_changes,
            "efficiency_proxy": tally.eff / t,
            "mean_speed": tally.speed / t,
            "termination_causes": dict(sorted(tally.causes.items())),
        }
    return out


def random_policy_baseline(
    scenario_cfg: ScenarioConfig, episodes: int = 50, seed: int = 0
) -> tuple[float, list[float]]:
    """Mean episodic return of uniform random actions; the improvement yardstick."""
    env = DrivingEnv(scenario_cfg)
    returns = []
    for ep in range(episodes):
        env.reset(round_seed(seed, ep))
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), ep, 1]))
        total = 0.0
        while not env.terminated:
            total += env.step(rng.uniform(-1.0, 1.0, 2)).reward.r_total
        returns.append(total)
    return float(np.mean(returns)), returns


def indicators_csv(reports: list[tuple[str, MetricReport]]) -> str:
    """CSV rows compatible with the score command."""
    lines = ["label," + ",".join(INDICATOR_NAMES)]
    for label, rep in reports:
        lines.append(label + "," + ",".join(repr(v) for v in rep.indicators()))
    return "\n".join(lines) + "\n"
