"""Routes over the lane graph: sampling by driving condition, progress
tracking, and the versioned route-file format."""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from minidrive.geometry import Pose2
from minidrive.worldsim.network import RoadNetwork, SCHEMA_VERSION
from minidrive.worldsim.polyline import Polyline
from minidrive.worldsim.world import Command, TURN_TO_COMMAND


@dataclass(frozen=True)
class JunctionSpan:
    s_start: float  # route arc length where the junction lane begins
    s_end: float
    command: Command
    intersection_id: int


class Route:
    """An ordered traversal of adjacent lanes with trimmed endpoints."""

    def __init__(self, network: RoadNetwork, lane_ids: list[int], start_s: float, end_s: float):
        self.network = network
        self.lane_ids = list(lane_ids)
        self.start_s = float(start_s)
        self.end_s = float(end_s)
        self._build()

    def _build(self):
        net = self.network
        for a, b in zip(self.lane_ids[:-1], self.lane_ids[1:]):
            if b not in net.successors[a]:
                raise ValueError(f"lanes {a} -> {b} are not adjacent in the graph")
        pts: list[np.ndarray] = []
        spans: list[JunctionSpan] = []
        offset = 0.0
        for k, lane_id in enumerate(self.lane_ids):
            lane = net.lanes[lane_id]
            lo = self.start_s if k == 0 else 0.0
            hi = self.end_s if k == len(self.lane_ids) - 1 else lane.length
            seg = [lane.line.point_at(s) for s in np.arange(lo, hi, 1.0)] + [lane.line.point_at(hi)]
            seg = np.array(seg)
            if pts:
                seg = seg[1:] if np.linalg.norm(seg[0] - pts[-1][-1]) < 1e-6 else seg
            pts.append(seg)
            if lane.kind == "junction":
                spans.append(
                    JunctionSpan(
                        s_start=offset,
                        s_end=offset + (hi - lo),
                        command=TURN_TO_COMMAND[lane.turn],
                        intersection_id=lane.intersection_id,
                    )
                )
            offset += hi - lo
        self.line = Polyline(np.concatenate(pts, axis=0))
        self.spans = spans
        self.turn_count = sum(1 for s in spans if s.command in (Command.LEFT, Command.RIGHT))
        self._span_starts = [s.s_start for s in spans]

    @property
    def length(self) -> float:
        return self.line.length

    @property
    def start_pose(self) -> Pose2:
        p = self.line.point_at(0.0)
        return Pose2(p[0], p[1], self.line.heading_at(0.0))

    @property
    def goal(self) -> np.ndarray:
        return self.line.point_at(self.length)

    def command_at_progress(self, s: float, activation: float = 25.0) -> Command:
        """Active command at route arc length s.

        The turn command switches on ``activation`` meters before the junction
        lane and latches until the junction lane is fully traversed.
        """
        i = bisect_right(self._span_starts, s + activation) - 1
        if i >= 0 and s < self.spans[i].s_end:
            return self.spans[i].command
        # A later span may still be within activation range (short lanes).
        for span in self.spans[max(i, 0):]:
            if span.s_start - activation <= s < span.s_end:
                return span.command
        return Command.FOLLOW

    def to_dict(self) -> dict:
        return {
            "lanes": self.lane_ids,
            "start_s": round(self.start_s, 4),
            "end_s": round(self.end_s, 4),
        }


class RouteTracker:
    """Monotone progress estimate of a pose along a route."""

    def __init__(self, route: Route, goal_radius: float = 4.0):
        self.route = route
        self.goal_radius = goal_radius
        self._hint: int | None = None  # global search on first update
        self.s = 0.0
        self.lateral = 0.0

    def update(self, pose: Pose2) -> tuple[float, float]:
        s, lateral, idx = self.route.line.project(pose.position, hint=self._hint)
        self._hint = idx
        self.s = s
        self.lateral = lateral
        return s, lateral

    @property
    def reached_goal(self) -> bool:
        near_end = self.s >= self.route.length - max(self.goal_radius, 1.0)
        pos = self.route.line.point_at(self.s)
        return bool(near_end and np.linalg.norm(pos - self.route.goal) <= self.goal_radius)


# -- sampling --------------------------------------------------------------------


def sample_route(
    network: RoadNetwork,
    rng: np.random.Generator,
    kind: str = "navigation",
    length_range: tuple[float, float] = (400.0, 1200.0),
    max_attempts: int = 400,
) -> Route:
    """Random route matching a driving condition.

    kind: "straight" (no turns), "one_turn" (exactly one left/right),
    "navigation" (two or more turns).
    """
    lo, hi = length_range
    road_lanes = [l.lane_id for l in network.lanes.values() if l.kind == "road" and l.length > 30.0]
    for _ in range(max_attempts):
        lane_id = int(rng.choice(road_lanes))
        lanes = [lane_id]
        start_s = 5.0
        total = network.lanes[lane_id].length - start_s
        turns = 0
        target = float(rng.uniform(lo, min(hi, lo + (hi - lo) * 0.7)))
        ok = False
        while total < hi:
            options = network.successors[lanes[-1]]
            if not options:
                break
            if kind == "straight":
                options = [o for o in options
                           if network.lanes[o].kind != "junction"
                           or network.lanes[o].turn == "straight"]
                if not options:
                    break
            nxt = int(options[int(rng.integers(0, len(options)))])
            lane = network.lanes[nxt]
            if lane.kind == "junction" and lane.turn in ("left", "right"):
                if kind == "straight" or (kind == "one_turn" and turns >= 1):
                    # resample among straights if possible
                    straights = [o for o in options if network.lanes[o].turn == "straight"]
                    if not straights:
                        break
                    nxt = int(straights[int(rng.integers(0, len(straights)))])
                    lane = network.lanes[nxt]
                else:
                    turns += 1
            lanes.append(nxt)
            total += lane.length
            if lane.kind == "road" and total >= target:
                ok = True
                break
        if not ok:
            continue
        last = network.lanes[lanes[-1]]
        end_s = last.length - max(total - target, 0.0)
        end_s = min(max(end_s, 15.0), last.length - 1.0)
        route = Route(network, lanes, start_s, end_s)
        if not lo <= route.length <= hi:
            continue
        if kind == "straight" and route.turn_count != 0:
            continue
        if kind == "one_turn" and route.turn_count != 1:
            continue
        if kind == "navigation" and route.turn_count < 2:
            continue
        return route
    raise RuntimeError(f"could not sample a '{kind}' route in {max_attempts} attempts")


def sample_routes(network, rng, n: int, kind: str = "navigation",
                  length_range=(400.0, 1200.0)) -> list[Route]:
    return [sample_route(network, rng, kind, length_range) for _ in range(n)]


def save_routes(routes: list[Route], town: str, path: str | Path) -> None:
    data = {
        "schema_version": SCHEMA_VERSION,
        "kind": "route_set",
        "town": town,
        "routes": [r.to_dict() for r in routes],
    }
    Path(path).write_text(json.dumps(data, indent=1))


def load_routes(path_or_data: str | Path | dict, network: RoadNetwork) -> list[Route]:
    if isinstance(path_or_data, dict):
        data = path_or_data
    else:
        data = json.loads(Path(path_or_data).read_text())
    if data.get("schema_version") != SCHEMA_VERSION or data.get("kind") != "route_set":
        raise ValueError("unrecognized route file")
    if data.get("town") != network.name:
        raise ValueError(f"route set is for town {data.get('town')}, not {network.name}")
    return [Route(network, r["lanes"], r["start_s"], r["end_s"]) for r in data["routes"]]
