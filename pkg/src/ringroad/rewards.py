"""Multi-objective driving reward: safety, efficiency, comfort, energy, arrival.

Every function is pure arithmetic on scalars so the terms can be unit-tested
exactly and recomputed offline from trace files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .util import clamp


def vsp_ceiling(v_max: float, a_max: float) -> float:
    """Peak vehicle-specific power, used to normalize the energy term."""
    return v_max * (1.1 * a_max + 0.132) + 0.000302 * v_max**3


@dataclass
class RewardConfig:
    """Constants of the reward terms and their fixed combination weights."""

    ttc_threshold: float = 3.0
    safety_weights: tuple[float, float] = (0.7, 0.3)  # (ttc, lane centering)
    total_weights: tuple[float, float, float, float] = (0.6, 0.25, 0.1, 0.05)
    v_limit: float = 10.0
    v_max: float = 20.0
    vsp_max: float = vsp_ceiling(20.0, 5.0)
    r_ttc_floor: float = -10.0
    r_lc_floor: float = -1.0

    def validate(self):
        if self.vsp_max <= 0:
            raise ValueError("reward: vsp_max must be positive")
        if not 0 < self.v_limit < self.v_max:
            raise ValueError("reward: need 0 < v_limit < v_max")
        if self.ttc_threshold <= 0:
            raise ValueError("reward: ttc_threshold must be positive")
        if abs(sum(self.total_weights) - 1.0) > 1e-6:
            raise ValueError("reward: total_weights must sum to 1")


@dataclass
class RewardBreakdown:
    """All sub-rewards and the weighted total for one decision step."""

    r_lc: float
    r_ttc: float
    r_safe: float
    r_efficient: float
    r_comfort: float
    r_energy: float
    r_arrive: float
    r_total: float
    vsp: float

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


def lane_centering_reward(l_lateral: float, l_width: float, floor: float = -1.0) -> float:
    """1 - (offset / half-width)^2, clamped below at `floor`."""
    if l_width <= 0:
        raise ValueError("lane width must be positive")
    return max(floor, 1.0 - (l_lateral / (l_width / 2.0)) ** 2)


def ttc_reward(ttc: float, threshold: float = 3.0, floor: float = -10.0) -> float:
    """1 - threshold/ttc, clamped to [floor, 1]; an open road (inf) scores 1."""
    if ttc < 0:
        raise ValueError("ttc must be non-negative")
    if math.isinf(ttc):
        return 1.0
    if ttc == 0.0:
        return floor
    return clamp(1.0 - threshold / ttc, floor, 1.0)


def safety_reward(r_ttc: float, r_lc: float, weights: tuple[float, float] = (0.7, 0.3)) -> float:
    return weights[0] * r_ttc + weights[1] * r_lc


def efficiency_reward(v_ego: float, v_limit: float, v_max: float) -> float:
    """Speed tracking: ramps up to 1 at the limit, back down to 0 at v_max."""
    if not 0 < v_limit < v_max:
        raise ValueError("need 0 < v_limit < v_max")
    if v_ego <= v_limit:
        return v_ego / v_limit
    return 1.0 - (v_ego - v_limit) / (v_max - v_limit)


def comfort_reward(
    throttle: float, prev_throttle: float, steer: float, prev_steer: float
) -> float:
    """1 minus the summed per-decision action changes over their 4-unit span."""
    diff_throttle = abs(throttle - prev_throttle)
    diff_steering = abs(steer - prev_steer)
    return 1.0 - (diff_throttle + diff_steering) / 4.0


def vsp(v: float, a: float) -> float:
    """Vehicle-specific power in kW/t for speed v and acceleration a."""
    if v < 0:
        raise ValueError("speed must be non-negative")
    return v * (1.1 * a + 0.132) + 0.000302 * v**3


def energy_reward(vsp_value: float, vsp_max: float) -> float:
    """1 at zero power demand down to 0 at vsp_max; braking counts as zero demand."""
    if vsp_max <= 0:
        raise ValueError("vsp_max must be positive")
    return 1.0 - clamp(vsp_value, 0.0, vsp_max) / vsp_max


def arrival_reward(arrived: bool) -> float:
    return 1.0 if arrived else 0.0


def total_reward(
    cfg: RewardConfig,
    l_lateral: float,
    l_width: float,
    ttc: float,
    v_ego: float,
    throttle: float,
    prev_throttle: float,
    steer: float,
    prev_steer: float,
    accel: float,
    arrived: bool,
    v_limit: float | None = None,
) -> RewardBreakdown:
    """Assemble all sub-rewards and the weighted step total.

    `v_limit` defaults to the configured value; the environment passes the
    current lane's limit. `accel` is the commanded acceleration used by the
    specific-power term.
    """
    r_lc = lane_centering_reward(l_lateral, l_width, cfg.r_lc_floor)
    r_ttc = ttc_reward(ttc, cfg.ttc_threshold, cfg.r_ttc_floor)
    r_safe = safety_reward(r_ttc, r_lc, cfg.safety_weights)
    r_eff = efficiency_reward(v_ego, cfg.v_limit if v_limit is None else v_limit, cfg.v_max)
    r_com = comfort_reward(throttle, prev_throttle, steer, prev_steer)
    power = vsp(v_ego, accel)
    r_en = energy_reward(power, cfg.vsp_max)
    r_arr = arrival_reward(arrived)
    w = cfg.total_weights
    r_total = w[0] * r_safe + w[1] * r_eff + w[2] * r_com + w[3] * r_en + r_arr
    return RewardBreakdown(
        r_lc=r_lc,
        r_ttc=r_ttc,
        r_safe=r_safe,
        r_efficient=r_eff,
        r_comfort=r_com,
        r_energy=r_en,
        r_arrive=r_arr,
        r_total=r_total,
        vsp=power,
    )
