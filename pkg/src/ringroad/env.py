"""Episode lifecycle: reset, step, observe, terminate.

One environment instance is single-threaded and fully deterministic given
(seed, action sequence); independent instances can run concurrently. Actions
are held for one decision interval and integrated over several simulation
substeps; ambient vehicles re-plan every substep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .config import ScenarioConfig
from .rewards import RewardBreakdown, total_reward
from .util import clamp, wrap_angle
from .vehicles import (
    VehicleState,
    ambient_policy,
    detect_collision,
    step_kinematics,
    time_to_collision,
)

OBS_FEATURES = 7  # presence, x, y, v_x, v_y, heading difference, lane distance


class MetaAction(Enum):
    """High-level maneuvers expanded into low-level controls by the env."""

    LANE_LEFT = 0
    IDLE = 1
    LANE_RIGHT = 2
    FASTER = 3
    SLOWER = 4


@dataclass(frozen=True)
class ContinuousAction:
    throttle: float
    steer: float


@dataclass
class StepResult:
    observation: np.ndarray
    reward: RewardBreakdown
    terminated: bool
    termination_cause: str | None
    info: dict


class DrivingEnv:
    """Roundabout / highway / merge driving with ambient traffic."""

    def __init__(self, cfg: ScenarioConfig):
        cfg.validate()
        self.cfg = cfg
        self.network = cfg.build_network()
        self._ambient_lanes = self._spawnable_lanes()
        self._ego: VehicleState | None = None
        self._terminated = True
        self._cause: str | None = None

    # ------------------------------------------------------------------ setup

    def _spawnable_lanes(self) -> list[str]:
        if self.cfg.scenario == "roundabout":
            return sorted(l for l in self.network.lanes if l.startswith("ring_"))
        if self.cfg.scenario == "merge":
            return sorted(l for l in self.network.lanes if l.startswith("main_"))
        return sorted(self.network.lanes)

    @property
    def observation_shape(self) -> tuple[int, int]:
        return (1 + self.cfg.env.neighbors, OBS_FEATURES)

    @property
    def decisions_per_episode(self) -> int:
        return round(self.cfg.env.episode_seconds * self.cfg.dynamics.decisions_per_second)

    @property
    def terminated(self) -> bool:
        return self._terminated

    @property
    def termination_cause(self) -> str | None:
        return self._cause

    @property
    def ego(self) -> VehicleState:
        return self._ego

    @property
    def ambient(self) -> list[VehicleState]:
        return list(self._amb)

    @property
    def target_exit(self) -> tuple[str, float] | None:
        """Lane id and terminal arc position of the sampled destination (roundabout)."""
        return self._ego_target

    def reset(self, seed: int = 0) -> np.ndarray:
        """Seeded spawn of the ego and ambient traffic; returns the first observation."""
        rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
        env_cfg = self.cfg.env
        dyn = self.cfg.dynamics

        entries = sorted(self.network.entries)
        if self.cfg.scenario == "merge":
            entry_leg, entry_lane = entries[0]  # the ramp is the merge entry
        else:
            entry_leg, entry_lane = entries[int(rng.integers(len(entries)))]
        lane = self.network.lane(entry_lane)
        x, y = lane.point_at(0.0)
        heading = lane.tangent_at(0.0)
        self._ego = VehicleState(
            x=x,
            y=y,
            speed=clamp(env_cfg.initial_speed, 0.0, dyn.v_max),
            heading=heading,
            lane=entry_lane,
        )
        if self.cfg.scenario == "roundabout":
            others = [e for e in self.network.exits if e[0] != entry_leg]
            leg, lane_id, terminal = others[int(rng.integers(len(others)))]
            self._ego_target = (lane_id, terminal)
            self._targets = {lane_id: terminal}
        else:
            self._ego_target = None
            self._targets = {lane_id: terminal for _, lane_id, terminal in self.network.exits}

        self._amb: list[VehicleState] = []
        self._amb_routes: list[list[str]] = []
        self._amb_route_idx: list[int] = []
        self._amb_idm = []
        for _ in range(env_cfg.ambient_vehicles):
            self._spawn_ambient(rng)

        self._t = 0.0
        self._decisions = 0
        self._terminated = False
        self._cause = None
        self._prev_action: ContinuousAction | None = None
        self._meta_lane = entry_lane
        self._meta_speed = self._ego.speed
        self._update_ego_frame()
        return self.observe()

    def _spawn_ambient(self, rng: np.random.Generator):
        env_cfg = self.cfg.env
        for _ in range(env_cfg.spawn_attempts):
            lane_id = self._ambient_lanes[int(rng.integers(len(self._ambient_lanes)))]
            lane = self.network.lane(lane_id)
            lo = min(env_cfg.spawn_margin, lane.length / 4.0)
            s = float(rng.uniform(lo, lane.length - lo))
            frac = float(
                rng.uniform(env_cfg.ambient_speed_min_frac, env_cfg.ambient_speed_max_frac)
            )
            desired = frac * self.cfg.idm.desired_speed
            x, y = lane.point_at(s)
            cand = VehicleState(
                x=x, y=y, speed=desired, heading=lane.tangent_at(s), lane=lane_id
            )
            ok = not detect_collision(cand, self._ego) and self._arc_gap_ok(cand, lane_id, s)
            if ok and all(
                not detect_collision(cand, other) for other in self._amb if other.present
            ):
                self._amb.append(cand)
                self._amb_idm.append(replace(self.cfg.idm, desired_speed=desired))
                self._amb_routes.append(self._sample_route(lane_id, rng))
                self._amb_route_idx.append(0)
                return
        raise ValueError(
            "could not place ambient traffic without overlap; the scenario is overcrowded"
        )

    def _arc_gap_ok(self, cand: VehicleState, lane_id: str, s: float) -> bool:
        for other in self._amb:
            if other.present and other.lane == lane_id:
                o_s, _, _, _ = self.network.lane(lane_id).project(other.x, other.y)
                if abs(o_s - s) < self.cfg.env.ambient_min_spawn_gap:
                    return False
        return True

    def _sample_route(self, lane_id: str, rng: np.random.Generator) -> list[str]:
        horizon = self.cfg.dynamics.v_max * self.cfg.env.episode_seconds + 200.0
        route = [lane_id]
        total = self.network.lane(lane_id).length
        while total < horizon:
            succ = self.network.lane(route[-1]).successors
            if not succ:
                break
            nxt = succ[int(rng.integers(len(succ)))]
            route.append(nxt)
            total += self.network.lane(nxt).length
        return route

    # ------------------------------------------------------------------ stepping

    def step(self, action) -> StepResult:
        """Hold one action for a decision interval and advance the world."""
        if self._terminated:
            raise RuntimeError("step() called on a terminated episode; call reset() first")
        act = self._to_continuous(action)
        if self._prev_action is None:
            self._prev_action = act  # first decision: zero action deltas
        dyn = self.cfg.dynamics
        cause = None
        for _ in range(dyn.substeps_per_decision):
            self._advance_substep(act)
            self._t += dyn.sim_dt
            if any(
                other.present and detect_collision(self._ego, other) for other in self._amb
            ):
                cause = "collision"
                break
        self._decisions += 1
        lane = self.network.lane(self._ego.lane)
        if cause is None:
            terminal = self._targets.get(self._ego.lane)
            if terminal is not None and self._ego_s >= terminal:
                cause = "arrived"
            elif abs(self._ego_lat) > self.cfg.env.offroad_lane_widths * lane.width:
                cause = "off_road"
            elif self._decisions >= self.decisions_per_episode:
                cause = "timeout"
        arrived = cause == "arrived"
        ttc = time_to_collision(
            self._ego, self._amb, self.network, self.cfg.env.ttc_horizon
        )
        breakdown = total_reward(
            self.cfg.reward,
            self._ego_lat,
            lane.width,
            ttc,
            self._ego.speed,
            act.throttle,
            self._prev_action.throttle,
            act.steer,
            self._prev_action.steer,
            act.throttle * dyn.a_max,
            arrived,
            v_limit=lane.speed_limit,
        )
        self._prev_action = act
        self._terminated = cause is not None
        self._cause = cause
        info = {
            "t": self._t,
            "ttc": ttc,
            "lateral": self._ego_lat,
            "speed": self._ego.speed,
            "vsp": breakdown.vsp,
            "lane": self._ego.lane,
            "s": self._ego_s,
        }
        return StepResult(self.observe(), breakdown, self._terminated, cause, info)

    def _advance_substep(self, act: ContinuousAction):
        dyn = self.cfg.dynamics
        env_cfg = self.cfg.env
        states = [self._ego] + [v for v in self._amb if v.present]
        controls = []
        for i, veh in enumerate(self._amb):
            if not veh.present:
                controls.append(None)
                continue
            controls.append(
                ambient_policy(
                    veh,
                    self.network,
                    states,
                    self._amb_idm[i],
                    dyn,
                    env_cfg.ambient_gain_lateral,
                    env_cfg.ambient_gain_heading,
                )
            )
        self._ego = step_kinematics(self._ego, act.throttle, act.steer, dyn)
        for i, veh in enumerate(self._amb):
            if not veh.present:
                continue
            throttle, steer = controls[i]
            self._amb[i] = step_kinematics(veh, throttle, steer, dyn)
            self._advance_route(i)
        self._update_ego_frame()

    def _advance_route(self, i: int):
        veh = self._amb[i]
        route = self._amb_routes[i]
        idx = self._amb_route_idx[i]
        lane = self.network.lane(route[idx])
        s, _, _, _ = lane.project(veh.x, veh.y)
        while s >= lane.length - 1e-9:
            if idx + 1 < len(route):
                idx += 1
                lane = self.network.lane(route[idx])
                s, _, _, _ = lane.project(veh.x, veh.y)
            else:
                self._amb[i] = replace(veh, present=False)  # left the network
                return
        self._amb_route_idx[i] = idx
        self._amb[i] = replace(veh, lane=route[idx])

    def _update_ego_frame(self):
        lane_id, frame = self.network.project(
            self._ego.x, self._ego.y, self._ego.heading, hint=self._ego.lane
        )
        self._ego = replace(self._ego, lane=lane_id)
        self._ego_s = frame.longitudinal
        self._ego_lat = frame.lateral_offset
        self._ego_err = frame.heading_error

    # ------------------------------------------------------------------ actions

    def _to_continuous(self, action) -> ContinuousAction:
        if isinstance(action, MetaAction):
            return self._expand_meta(action)
        if isinstance(action, ContinuousAction):
            throttle, steer = action.throttle, action.steer
        else:
            arr = np.asarray(action, dtype=np.float64).ravel()
            if arr.shape != (2,):
                raise ValueError("continuous action must have two components")
            throttle, steer = float(arr[0]), float(arr[1])
        if not (math.isfinite(throttle) and math.isfinite(steer)):
            raise ValueError("continuous action must be finite")
        return ContinuousAction(clamp(throttle), clamp(steer))

    def _expand_meta(self, action: MetaAction) -> ContinuousAction:
        env_cfg = self.cfg.env
        ego_lane = self.network.lane(self._ego.lane)
        if self._meta_lane != self._ego.lane and self._meta_lane not in (
            ego_lane.left_id,
            ego_lane.right_id,
        ):
            self._meta_lane = self._ego.lane  # resync after seam crossings
        if action is MetaAction.FASTER:
            self._meta_speed = clamp(
                self._meta_speed + env_cfg.meta_speed_step, 0.0, self.cfg.dynamics.v_max
            )
        elif action is MetaAction.SLOWER:
            self._meta_speed = clamp(
                self._meta_speed - env_cfg.meta_speed_step, 0.0, self.cfg.dynamics.v_max
            )
        elif action is MetaAction.LANE_LEFT:
            target = self.network.lane(self._meta_lane).left_id
            if target is not None:
                self._meta_lane = target
        elif action is MetaAction.LANE_RIGHT:
            target = self.network.lane(self._meta_lane).right_id
            if target is not None:
                self._meta_lane = target
        lane = self.network.lane(self._meta_lane)
        _, lat, _, tang = lane.project(self._ego.x, self._ego.y)
        err = wrap_angle(self._ego.heading - tang)
        steer = clamp(-(env_cfg.ambient_gain_lateral * lat + env_cfg.ambient_gain_heading * err))
        throttle = clamp(env_cfg.meta_throttle_gain * (self._meta_speed - self._ego.speed))
        return ContinuousAction(throttle, steer)

    # ------------------------------------------------------------------ observation

    def observe(self) -> np.ndarray:
        """(1 + K) x 7 feature matrix; ego first, neighbors by ascending distance."""
        if self._ego is None:
            raise RuntimeError("observe() before reset()")
        env_cfg = self.cfg.env
        dyn = self.cfg.dynamics
        pn = env_cfg.position_norm
        rows = np.zeros(self.observation_shape)
        ego = self._ego
        ego_vx = ego.speed * math.cos(ego.heading)
        ego_vy = ego.speed * math.sin(ego.heading)
        ego_lane = self.network.lane(ego.lane)
        rows[0] = (
            1.0,
            ego.x / pn,
            ego.y / pn,
            ego_vx / dyn.v_max,
            ego_vy / dyn.v_max,
            self._ego_err / math.pi,
            self._ego_lat / ego_lane.width,
        )
        present = [v for v in self._amb if v.present]
        present.sort(key=lambda v: (v.x - ego.x) ** 2 + (v.y - ego.y) ** 2)
        for j, veh in enumerate(present[: env_cfg.neighbors]):
            lid, frame = self.network.project(veh.x, veh.y, veh.heading, hint=veh.lane)
            vx = veh.speed * math.cos(veh.heading)
            vy = veh.speed * math.sin(veh.heading)
            rows[1 + j] = (
                1.0,
                (veh.x - ego.x) / pn,
                (veh.y - ego.y) / pn,
                (vx - ego_vx) / dyn.v_max,
                (vy - ego_vy) / dyn.v_max,
                frame.heading_error / math.pi,
                frame.lateral_offset / self.network.lane(lid).width,
            )
        return rows
