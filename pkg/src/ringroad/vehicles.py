"""Vehicle kinematics, car following, ambient control, and collision tests.

All motion is explicit Euler at the simulation step. Control conventions:
throttle in [-1, 1] scales peak acceleration, steer in [-1, 1] scales the
peak road-wheel angle, and positive steer turns left (consistent with the
left-positive lateral offset in :mod:`ringroad.geometry`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .geometry import RoadNetwork
from .util import clamp, wrap_angle


@dataclass
class DynamicsConfig:
    """Shared motion limits and the two-frequency stepping scheme."""

    v_max: float = 20.0
    a_max: float = 5.0
    steer_max: float = 0.6  # peak road-wheel angle, rad
    wheelbase: float = 2.5
    sim_dt: float = 1.0 / 15.0
    decisions_per_second: float = 5.0

    def validate(self):
        for name in ("v_max", "a_max", "steer_max", "wheelbase", "sim_dt", "decisions_per_second"):
            if getattr(self, name) <= 0:
                raise ValueError(f"dynamics: {name} must be positive")
        exact = 1.0 / (self.sim_dt * self.decisions_per_second)
        if exact < 1.0 - 1e-6 or abs(exact - round(exact)) > 1e-2 * max(exact, 1.0):
            raise ValueError("simulation frequency must be an integer multiple of the decision frequency")

    @property
    def substeps_per_decision(self) -> int:
        return max(1, round(1.0 / (self.sim_dt * self.decisions_per_second)))


@dataclass
class IdmParams:
    """Car-following parameters for the ambient traffic."""

    desired_speed: float = 8.0
    time_headway: float = 1.5
    min_gap: float = 6.0
    accel: float = 3.0
    decel: float = 5.0
    exponent: int = 4

    def validate(self):
        for name in ("desired_speed", "time_headway", "min_gap", "accel", "decel", "exponent"):
            if getattr(self, name) <= 0:
                raise ValueError(f"idm: {name} must be positive")


@dataclass
class VehicleState:
    """Pose, speed, geometry, and last applied action of one vehicle."""

    x: float
    y: float
    speed: float
    heading: float
    length: float = 5.0
    width: float = 2.0
    lane: str | None = None
    last_throttle: float = 0.0
    last_steer: float = 0.0
    present: bool = True


def step_kinematics(
    state: VehicleState, throttle: float, steer: float, cfg: DynamicsConfig
) -> VehicleState:
    """One explicit-Euler step of the kinematic bicycle model.

    The slip angle beta = atan(0.5 * tan(steer_angle)) points the velocity
    between heading and the front wheels; heading rate is
    (speed / wheelbase) * sin(beta). Position and heading advance with the
    pre-update speed; speed then integrates commanded acceleration and is
    clamped to [0, v_max].
    """
    if not all(
        math.isfinite(v)
        for v in (throttle, steer, state.x, state.y, state.speed, state.heading)
    ):
        raise ValueError("step_kinematics: non-finite input")
    throttle = clamp(throttle)
    steer = clamp(steer)
    accel = throttle * cfg.a_max
    beta = math.atan(0.5 * math.tan(steer * cfg.steer_max))
    dt = cfg.sim_dt
    direction = state.heading + beta
    x = state.x + state.speed * math.cos(direction) * dt
    y = state.y + state.speed * math.sin(direction) * dt
    heading = wrap_angle(state.heading + (state.speed / cfg.wheelbase) * math.sin(beta) * dt)
    speed = clamp(state.speed + accel * dt, 0.0, cfg.v_max)
    return replace(
        state, x=x, y=y, speed=speed, heading=heading, last_throttle=throttle, last_steer=steer
    )


def idm_acceleration(ego_speed: float, gap: float, lead_speed: float, p: IdmParams) -> float:
    """Intelligent-driver-model acceleration against an optional leader.

    Pass gap = inf for free flow. A non-positive gap returns the emergency
    value -decel. The result is clamped to [-decel, accel].
    """
    if gap <= 0.0:
        return -p.decel
    free = (ego_speed / p.desired_speed) ** p.exponent
    if math.isinf(gap):
        interaction = 0.0
    else:
        dv = ego_speed - lead_speed
        s_star = p.min_gap + ego_speed * p.time_headway + ego_speed * dv / (
            2.0 * math.sqrt(p.accel * p.decel)
        )
        interaction = (s_star / gap) ** 2
    return clamp(p.accel * (1.0 - free - interaction), -p.decel, p.accel)


def vehicles_ahead(
    network: RoadNetwork,
    lane_id: str,
    s_from: float,
    others: list[tuple[VehicleState, str, float]],
    horizon: float = 60.0,
) -> list[tuple[float, VehicleState]]:
    """Center-to-center gaps to vehicles ahead along the successor chain.

    `others` holds (state, lane id, arc position) triples. Returns
    (gap, vehicle) pairs sorted by increasing gap, restricted to the horizon.
    """
    by_lane: dict[str, list[tuple[float, VehicleState]]] = {}
    for veh, lid, s in others:
        if veh.present:
            by_lane.setdefault(lid, []).append((s, veh))
    found: list[tuple[float, VehicleState]] = []
    queue = [(lane_id, -s_from)]
    seen = {lane_id: -s_from}
    while queue:
        lid, base = queue.pop(0)
        for s, veh in by_lane.get(lid, ()):
            gap = base + s
            if 0.0 < gap <= horizon:
                found.append((gap, veh))
        lane = network.lanes[lid]
        nxt_base = base + lane.length
        if nxt_base <= horizon:
            for sid in lane.successors:
                if sid not in seen or nxt_base < seen[sid]:
                    seen[sid] = nxt_base
                    queue.append((sid, nxt_base))
    found.sort(key=lambda item: item[0])
    return found


def lead_vehicle(
    network: RoadNetwork,
    state: VehicleState,
    lane_id: str,
    s: float,
    others: list[tuple[VehicleState, str, float]],
    horizon: float = 80.0,
) -> tuple[float, float]:
    """Bumper-to-bumper gap and speed of the nearest leader, or (inf, 0)."""
    for gap, veh in vehicles_ahead(network, lane_id, s, others, horizon):
        return gap - 0.5 * (state.length + veh.length), veh.speed
    return math.inf, 0.0


def ambient_policy(
    vehicle: VehicleState,
    network: RoadNetwork,
    neighbors: list[VehicleState],
    idm: IdmParams,
    dyn: DynamicsConfig,
    gain_lateral: float = 0.2,
    gain_heading: float = 1.0,
) -> tuple[float, float]:
    """Surrounding-vehicle controller: IDM along the lane, proportional centering.

    The vehicle tracks its assigned lane (vehicle.lane); steering pushes
    lateral offset and heading error to zero, so an offset to the left
    produces a negative (rightward) steer command.
    """
    lane = network.lane(vehicle.lane)
    s, lateral, _, tangent = lane.project(vehicle.x, vehicle.y)
    heading_error = wrap_angle(vehicle.heading - tangent)
    tracked = []
    for other in neighbors:
        if other is vehicle or not other.present:
            continue
        lid, frame = network.project(other.x, other.y, other.heading, hint=other.lane)
        tracked.append((other, lid, frame.longitudinal))
    gap, lead_speed = lead_vehicle(network, vehicle, vehicle.lane, s, tracked)
    accel = idm_acceleration(vehicle.speed, gap, lead_speed, idm)
    throttle = clamp(accel / dyn.a_max)
    steer = clamp(-(gain_lateral * lateral + gain_heading * heading_error))
    return throttle, steer


def _corners(v: VehicleState) -> list[tuple[float, float]]:
    c, s = math.cos(v.heading), math.sin(v.heading)
    hl, hw = 0.5 * v.length, 0.5 * v.width
    return [
        (v.x + c * dx - s * dy, v.y + s * dx + c * dy)
        for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))
    ]


def detect_collision(a: VehicleState, b: VehicleState) -> bool:
    """Oriented-rectangle overlap via the separating-axis test."""
    # cheap reject on bounding circles
    reach = 0.5 * (math.hypot(a.length, a.width) + math.hypot(b.length, b.width))
    if (a.x - b.x) ** 2 + (a.y - b.y) ** 2 > reach * reach:
        return False
    ca, cb = _corners(a), _corners(b)
    for heading in (a.heading, b.heading):
        for ax, ay in ((math.cos(heading), math.sin(heading)), (-math.sin(heading), math.cos(heading))):
            pa = [ax * x + ay * y for x, y in ca]
            pb = [ax * x + ay * y for x, y in cb]
            if max(pa) < min(pb) or max(pb) < min(pa):
                return False
    return True


def time_to_collision(
    ego: VehicleState,
    others: list[VehicleState],
    network: RoadNetwork,
    horizon: float = 60.0,
) -> float:
    """Lane-wise time to collision under constant speeds, or inf.

    Candidates are vehicles ahead on the ego lane or its successor chain
    within the horizon; each contributes bumper gap / closing speed when
    closing, and 0 when the bumpers already overlap.
    """
    if not ego.present:
        raise ValueError("time_to_collision: ego not present")
    lane_id, frame = network.project(ego.x, ego.y, ego.heading, hint=ego.lane)
    tracked = []
    for other in others:
        if other is ego or not other.present:
            continue
        lid, oframe = network.project(other.x, other.y, other.heading, hint=other.lane)
        tracked.append((other, lid, oframe.longitudinal))
    best = math.inf
    for gap, veh in vehicles_ahead(network, lane_id, frame.longitudinal, tracked, horizon):
        bumper = gap - 0.5 * (ego.length + veh.length)
        if bumper <= 0.0:
            return 0.0
        closing = ego.speed - veh.speed
        if closing > 0.0:
            best = min(best, bumper / closing)
    return best
