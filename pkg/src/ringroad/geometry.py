"""Parametric road networks and lane-frame projection.

Lanes are piecewise centerlines (line segments and circular arcs) with an
arc-length parameter. Sign conventions, fixed project-wide: lateral offset is
positive to the LEFT of the travel direction; heading error lives in
(-pi, pi]; positive arc sweep turns left (counterclockwise).
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

from .util import TWO_PI, wrap_angle

_END_EPS = 1e-9
_JOIN_TOL = 1e-6


@dataclass(frozen=True)
class LineSegment:
    """Straight centerline piece from (x0, y0) to (x1, y1)."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def length(self) -> float:
        return math.hypot(self.x1 - self.x0, self.y1 - self.y0)

    def start(self) -> tuple[float, float]:
        return self.x0, self.y0

    def end(self) -> tuple[float, float]:
        return self.x1, self.y1

    def point_at(self, s: float) -> tuple[float, float]:
        f = s / self.length
        return self.x0 + f * (self.x1 - self.x0), self.y0 + f * (self.y1 - self.y0)

    def tangent_at(self, s: float) -> float:
        return math.atan2(self.y1 - self.y0, self.x1 - self.x0)

    def project(self, x: float, y: float) -> tuple[float, float, float, float]:
        """Closest point on the piece: (s, lateral, distance, tangent heading).

        `lateral` is the signed perpendicular offset (positive left);
        `distance` is Euclidean to the clamped closest point, so it includes
        longitudinal overshoot past the ends.
        """
        length = self.length
        ux = (self.x1 - self.x0) / length
        uy = (self.y1 - self.y0) / length
        dx = x - self.x0
        dy = y - self.y0
        s = min(max(dx * ux + dy * uy, 0.0), length)
        rx = x - (self.x0 + s * ux)
        ry = y - (self.y0 + s * uy)
        lateral = ux * ry - uy * rx
        return s, lateral, math.hypot(rx, ry), math.atan2(uy, ux)


@dataclass(frozen=True)
class Arc:
    """Circular centerline piece; sweep > 0 turns left (counterclockwise)."""

    cx: float
    cy: float
    radius: float
    ang0: float
    sweep: float

    @property
    def length(self) -> float:
        return self.radius * abs(self.sweep)

    def _angle_at(self, s: float) -> float:
        return self.ang0 + math.copysign(s / self.radius, self.sweep)

    def start(self) -> tuple[float, float]:
        return self.point_at(0.0)

    def end(self) -> tuple[float, float]:
        return self.point_at(self.length)

    def point_at(self, s: float) -> tuple[float, float]:
        a = self._angle_at(s)
        return self.cx + self.radius * math.cos(a), self.cy + self.radius * math.sin(a)

    def tangent_at(self, s: float) -> float:
        return wrap_angle(self._angle_at(s) + math.copysign(math.pi / 2.0, self.sweep))

    def project(self, x: float, y: float) -> tuple[float, float, float, float]:
        vx = x - self.cx
        vy = y - self.cy
        r = math.hypot(vx, vy)
        if r < 1e-12:
            rel = 0.0  # degenerate: the exact center projects to the arc start
        else:
            rel = (math.atan2(vy, vx) - self.ang0) * math.copysign(1.0, self.sweep)
            rel %= TWO_PI
        span = abs(self.sweep)
        if rel > span:
            # outside the angular span: clamp to the closer end
            s = self.length if (rel - span) <= (TWO_PI - rel) else 0.0
            px, py = self.point_at(s)
            tang = self.tangent_at(s)
            rx, ry = x - px, y - py
            lateral = math.cos(tang) * ry - math.sin(tang) * rx
            return s, lateral, math.hypot(rx, ry), tang
        s = rel * self.radius
        lateral = (self.radius - r) if self.sweep > 0 else (r - self.radius)
        return s, lateral, abs(self.radius - r), self.tangent_at(s)


@dataclass(frozen=True)
class LaneFrame:
    """Pose of a point relative to a lane centerline."""

    lateral_offset: float
    heading_error: float
    longitudinal: float


@dataclass
class Lane:
    """A drivable lane: centerline pieces, width, speed limit, topology links."""

    lane_id: str
    elements: list
    width: float
    speed_limit: float
    successors: list[str] = field(default_factory=list)
    left_id: str | None = None
    right_id: str | None = None

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError(f"lane {self.lane_id}: width must be positive, got {self.width}")
        if self.speed_limit <= 0:
            raise ValueError(f"lane {self.lane_id}: speed_limit must be positive")
        if not self.elements:
            raise ValueError(f"lane {self.lane_id}: empty centerline")
        cum = [0.0]
        prev_end = None
        for el in self.elements:
            if el.length <= 0:
                raise ValueError(f"lane {self.lane_id}: zero-length centerline piece")
            if prev_end is not None:
                sx, sy = el.start()
                if math.hypot(sx - prev_end[0], sy - prev_end[1]) > _JOIN_TOL:
                    raise ValueError(f"lane {self.lane_id}: centerline is not C0-continuous")
            prev_end = el.end()
            cum.append(cum[-1] + el.length)
        self._cum = cum
        self.length = cum[-1]

    def _locate(self, s: float) -> tuple[int, float]:
        s = min(max(s, 0.0), self.length)
        i = bisect_right(self._cum, s) - 1
        i = min(i, len(self.elements) - 1)
        return i, s - self._cum[i]

    def point_at(self, s: float) -> tuple[float, float]:
        i, ds = self._locate(s)
        return self.elements[i].point_at(ds)

    def tangent_at(self, s: float) -> float:
        i, ds = self._locate(s)
        return self.elements[i].tangent_at(ds)

    def place(self, s: float, lateral: float) -> tuple[float, float]:
        """Point at arc position `s`, offset `lateral` to the left of travel."""
        x, y = self.point_at(s)
        t = self.tangent_at(s)
        return x - lateral * math.sin(t), y + lateral * math.cos(t)

    def project(self, x: float, y: float) -> tuple[float, float, float, float]:
        """Closest point over all pieces: (s, lateral, distance, tangent heading)."""
        best = None
        for i, el in enumerate(self.elements):
            s, lat, dist, tang = el.project(x, y)
            if best is None or dist < best[2]:
                best = (self._cum[i] + s, lat, dist, tang)
        return best


@dataclass
class RoadNetwork:
    """Immutable collection of lanes with entry/exit anchors."""

    lanes: dict[str, Lane]
    entries: list[tuple[int, str]]
    exits: list[tuple[int, str, float]]

    def __post_init__(self):
        for lane in self.lanes.values():
            for sid in lane.successors:
                if sid not in self.lanes:
                    raise ValueError(f"lane {lane.lane_id}: unknown successor {sid!r}")
            lane.successors.sort()
            for nid in (lane.left_id, lane.right_id):
                if nid is not None and nid not in self.lanes:
                    raise ValueError(f"lane {lane.lane_id}: unknown neighbor {nid!r}")
        self._sorted_ids = sorted(self.lanes)
        for _, lid in self.entries:
            self.lane(lid)
        for _, lid, term in self.exits:
            lane = self.lane(lid)
            if not 0.0 < term <= lane.length + _END_EPS:
                raise ValueError(f"exit terminal {term} outside lane {lid}")

    def lane(self, lane_id: str) -> Lane:
        try:
            return self.lanes[lane_id]
        except KeyError:
            raise ValueError(f"unknown lane {lane_id!r}") from None

    def project(
        self, x: float, y: float, heading: float, hint: str | None = None
    ) -> tuple[str, LaneFrame]:
        """Nearest-lane frame for a pose; hint lane and its successors first.

        The hint wins while the point sits inside it and has not run off its
        far end; its successors are tried next so a vehicle crossing a lane
        seam keeps a progressing frame. Otherwise the globally nearest lane is
        returned; ties go to the smallest lane id.
        """
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(heading)):
            raise ValueError("position and heading must be finite")
        if hint is not None and hint in self.lanes:
            lane = self.lanes[hint]
            s, lat, dist, tang = lane.project(x, y)
            if dist <= lane.width / 2.0 and s < lane.length - _END_EPS:
                return hint, LaneFrame(lat, wrap_angle(heading - tang), s)
            for sid in lane.successors:
                nxt = self.lanes[sid]
                s, lat, dist, tang = nxt.project(x, y)
                if dist <= nxt.width / 2.0:
                    return sid, LaneFrame(lat, wrap_angle(heading - tang), s)
        best = None
        for lid in self._sorted_ids:
            s, lat, dist, tang = self.lanes[lid].project(x, y)
            if best is None or dist < best[0]:
                best = (dist, lid, s, lat, tang)
        _, lid, s, lat, tang = best
        return lid, LaneFrame(lat, wrap_angle(heading - tang), s)

    def route(self, src: str, dst: str) -> list[str] | None:
        """Shortest successor chain from src to dst (lane count), or None."""
        self.lane(src)
        self.lane(dst)
        if src == dst:
            return [src]
        prev = {src: None}
        queue = [src]
        while queue:
            cur = queue.pop(0)
            for sid in self.lanes[cur].successors:
                if sid in prev:
                    continue
                prev[sid] = cur
                if sid == dst:
                    path = [dst]
                    while prev[path[-1]] is not None:
                        path.append(prev[path[-1]])
                    return path[::-1]
                queue.append(sid)
        return None


@dataclass
class RoundaboutGeometry:
    """Two-lane ring with four tangential legs at 90 degree spacing."""

    ring_radius: float = 20.0  # inner edge of the inner circulating lane
    lane_width: float = 4.0
    leg_length: float = 80.0
    speed_limit: float = 10.0
    exit_terminal: float = 10.0  # arc position on the exit lane that counts as arrived

    def validate(self):
        if self.ring_radius <= 0:
            raise ValueError("ring_radius must be positive")
        if self.lane_width <= 0:
            raise ValueError("lane_width must be positive")
        if self.leg_length <= 0:
            raise ValueError("leg_length must be positive")
        if not 0 < self.exit_terminal <= self.leg_length:
            raise ValueError("exit_terminal must lie on the exit leg")


@dataclass
class HighwayGeometry:
    """Straight multi-lane carriageway along +x."""

    lanes: int = 3
    length: float = 500.0
    lane_width: float = 4.0
    speed_limit: float = 12.0

    def validate(self):
        if self.lanes < 1:
            raise ValueError("highway needs at least one lane")
        if self.length <= 0 or self.lane_width <= 0:
            raise ValueError("length and lane_width must be positive")


@dataclass
class MergeGeometry:
    """Highway plus an acceleration ramp joining the rightmost lane at a gore point."""

    main_lanes: int = 2
    length: float = 500.0
    lane_width: float = 4.0
    speed_limit: float = 12.0
    gore_x: float = 200.0
    taper_length: float = 30.0

    def validate(self):
        if self.main_lanes < 1:
            raise ValueError("merge needs at least one main lane")
        if not 0 < self.taper_length < self.gore_x < self.length:
            raise ValueError("need 0 < taper_length < gore_x < length")
        if self.lane_width <= 0:
            raise ValueError("lane_width must be positive")


def build_roundabout(cfg: RoundaboutGeometry | None = None) -> RoadNetwork:
    """Closed 2-lane ring with 4 entry and 4 exit connector lanes joined tangentially.

    Legs sit at angles k*90deg; each entry runs along the ring tangent and
    feeds the outer circulating lane, whose quadrant ends offer either the
    next quadrant or the leg's exit.
    """
    cfg = cfg or RoundaboutGeometry()
    cfg.validate()
    w = cfg.lane_width
    r_in = cfg.ring_radius + 0.5 * w
    r_out = cfg.ring_radius + 1.5 * w
    lanes: dict[str, Lane] = {}
    for k in range(4):
        a0 = k * math.pi / 2.0
        lanes[f"ring_in_{k}"] = Lane(
            f"ring_in_{k}",
            [Arc(0.0, 0.0, r_in, a0, math.pi / 2.0)],
            w,
            cfg.speed_limit,
            successors=[f"ring_in_{(k + 1) % 4}"],
            right_id=f"ring_out_{k}",
        )
        lanes[f"ring_out_{k}"] = Lane(
            f"ring_out_{k}",
            [Arc(0.0, 0.0, r_out, a0, math.pi / 2.0)],
            w,
            cfg.speed_limit,
            successors=[f"ring_out_{(k + 1) % 4}", f"exit_{(k + 1) % 4}"],
            left_id=f"ring_in_{k}",
        )
        tx, ty = r_out * math.cos(a0), r_out * math.sin(a0)
        hx, hy = -math.sin(a0), math.cos(a0)  # ccw ring tangent at the touch point
        lanes[f"entry_{k}"] = Lane(
            f"entry_{k}",
            [LineSegment(tx - cfg.leg_length * hx, ty - cfg.leg_length * hy, tx, ty)],
            w,
            cfg.speed_limit,
            successors=[f"ring_out_{k}"],
        )
        lanes[f"exit_{k}"] = Lane(
            f"exit_{k}",
            [LineSegment(tx, ty, tx + cfg.leg_length * hx, ty + cfg.leg_length * hy)],
            w,
            cfg.speed_limit,
        )
    return RoadNetwork(
        lanes=lanes,
        entries=[(k, f"entry_{k}") for k in range(4)],
        exits=[(k, f"exit_{k}", cfg.exit_terminal) for k in range(4)],
    )


def build_highway(cfg: HighwayGeometry | None = None) -> RoadNetwork:
    """Straight multi-lane road; lane 0 is leftmost, lane i centered at y = -i*width."""
    cfg = cfg or HighwayGeometry()
    cfg.validate()
    w = cfg.lane_width
    lanes: dict[str, Lane] = {}
    for i in range(cfg.lanes):
        y = -i * w
        lanes[f"lane_{i}"] = Lane(
            f"lane_{i}",
            [LineSegment(0.0, y, cfg.length, y)],
            w,
            cfg.speed_limit,
            left_id=f"lane_{i - 1}" if i > 0 else None,
            right_id=f"lane_{i + 1}" if i < cfg.lanes - 1 else None,
        )
    return RoadNetwork(
        lanes=lanes,
        entries=[(i, f"lane_{i}") for i in range(cfg.lanes)],
        exits=[(i, f"lane_{i}", cfg.length) for i in range(cfg.lanes)],
    )


def build_merge(cfg: MergeGeometry | None = None) -> RoadNetwork:
    """Main carriageway plus a ramp whose acceleration lane ends at the gore point.

    The rightmost main lane is split at the gore so arc-length chains stay
    exact across the junction: both the upstream piece and the ramp feed the
    downstream piece.
    """
    cfg = cfg or MergeGeometry()
    cfg.validate()
    w = cfg.lane_width
    n = cfg.main_lanes
    r = n - 1
    y_right = -r * w
    lanes: dict[str, Lane] = {}
    for i in range(r):
        y = -i * w
        lanes[f"main_{i}"] = Lane(
            f"main_{i}",
            [LineSegment(0.0, y, cfg.length, y)],
            w,
            cfg.speed_limit,
            left_id=f"main_{i - 1}" if i > 0 else None,
            right_id=f"main_{i + 1}" if i < r - 1 else (f"main_{r}a" if r > 0 else None),
        )
    left_of_right = f"main_{r - 1}" if r > 0 else None
    lanes[f"main_{r}a"] = Lane(
        f"main_{r}a",
        [LineSegment(0.0, y_right, cfg.gore_x, y_right)],
        w,
        cfg.speed_limit,
        successors=[f"main_{r}b"],
        left_id=left_of_right,
    )
    lanes[f"main_{r}b"] = Lane(
        f"main_{r}b",
        [LineSegment(cfg.gore_x, y_right, cfg.length, y_right)],
        w,
        cfg.speed_limit,
        left_id=left_of_right,
    )
    y_ramp = y_right - w
    lanes["ramp"] = Lane(
        "ramp",
        [
            LineSegment(0.0, y_ramp, cfg.gore_x - cfg.taper_length, y_ramp),
            LineSegment(cfg.gore_x - cfg.taper_length, y_ramp, cfg.gore_x, y_right),
        ],
        w,
        cfg.speed_limit,
        successors=[f"main_{r}b"],
        left_id=f"main_{r}a",
    )
    exits = [(i, f"main_{i}", cfg.length) for i in range(r)]
    exits.append((r, f"main_{r}b", cfg.length - cfg.gore_x))
    return RoadNetwork(
        lanes=lanes,
        entries=[(0, "ramp")] + [(i + 1, f"main_{i}") for i in range(r)]
        + [(n, f"main_{r}a")],
        exits=exits,
    )
