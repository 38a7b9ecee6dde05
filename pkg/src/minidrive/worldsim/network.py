"""Road network: directed lanes, intersections with turn-labeled connections,
stop lines with light groups, and procedural grid towns.

Layout conventions: right-hand traffic, one lane per direction offset
``LANE_OFFSET`` right of the road axis. Road lanes stop at the junction box
boundary; junction lanes (turn arcs / straight links) connect them. Traffic
lights cycle green -> yellow -> red with the two approach groups (by world
axis) in anti-phase.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from minidrive.worldsim.polyline import Polyline, quad_bezier, resample

SCHEMA_VERSION = 1

LANE_WIDTH = 4.0
LANE_OFFSET = 2.0
JUNCTION_HALF = 8.0
SAMPLE_SPACING = 1.0

GREEN_S = 10.0
YELLOW_S = 2.0
CYCLE_S = 2.0 * (GREEN_S + YELLOW_S)

TURN_STRAIGHT = "straight"
TURN_LEFT = "left"
TURN_RIGHT = "right"


@dataclass
class Lane:
    lane_id: int
    line: Polyline
    width: float = LANE_WIDTH
    kind: str = "road"  # "road" | "junction"
    turn: str | None = None  # junction lanes carry their turn label
    intersection_id: int | None = None

    @property
    def length(self) -> float:
        return self.line.length


@dataclass
class Intersection:
    node_id: int
    center: np.ndarray
    half_size: float
    incoming: list[int] = field(default_factory=list)
    outgoing: list[int] = field(default_factory=list)
    has_light: bool = True
    phase_offset: float = 0.0

    def contains(self, point: np.ndarray, margin: float = 0.0) -> bool:
        d = np.abs(np.asarray(point) - self.center)
        return bool(np.all(d <= self.half_size + margin))


@dataclass
class StopLine:
    stop_id: int
    lane_id: int  # incoming road lane this line gates
    intersection_id: int
    position: np.ndarray  # center of the line (end of the incoming lane)
    direction: np.ndarray  # travel direction across the line
    group: int  # 0 or 1; opposite groups never green together

    @property
    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        perp = np.array([-self.direction[1], self.direction[0]])
        half = LANE_WIDTH / 2.0
        return self.position - perp * half, self.position + perp * half


class RoadNetwork:
    def __init__(self, name: str):
        self.name = name
        self.lanes: dict[int, Lane] = {}
        self.intersections: dict[int, Intersection] = {}
        self.stop_lines: list[StopLine] = []
        # lane_id -> list of (successor lane_id). Turn labels live on
        # junction lanes; road lanes have exactly the junction lanes leaving
        # their end intersection as successors.
        self.successors: dict[int, list[int]] = {}
        self.stop_line_by_lane: dict[int, StopLine] = {}
        self.blocks: list[np.ndarray] = []  # building footprints, render only
        self._segment_index: dict[tuple[int, int], list[tuple[int, int]]] | None = None
        self._index_cell = 8.0

    # -- construction helpers --------------------------------------------------

    def add_lane(self, points: np.ndarray, kind: str = "road", turn: str | None = None,
                 intersection_id: int | None = None, width: float = LANE_WIDTH) -> int:
        lane_id = len(self.lanes)
        self.lanes[lane_id] = Lane(lane_id, Polyline(points), width, kind, turn, intersection_id)
        self.successors[lane_id] = []
        return lane_id

    def connect(self, from_lane: int, to_lane: int):
        self.successors[from_lane].append(to_lane)

    # -- queries ----------------------------------------------------------------

    def light_phase(self, intersection_id: int, group: int, t: float) -> str:
        inter = self.intersections[intersection_id]
        if not inter.has_light:
            return "green"
        tau = (t + inter.phase_offset) % CYCLE_S
        if group == 1:
            tau = (tau + CYCLE_S / 2.0) % CYCLE_S
        if tau < GREEN_S:
            return "green"
        if tau < GREEN_S + YELLOW_S:
            return "yellow"
        return "red"

    def stop_line_for(self, lane_id: int) -> StopLine | None:
        return self.stop_line_by_lane.get(lane_id)

    def _build_segment_index(self):
        """Spatial hash: cell -> vectorized (anchor, direction, length) arrays
        of every lane segment near that cell."""
        buckets: dict[tuple[int, int], list[tuple[np.ndarray, np.ndarray, float]]] = {}
        cell = self._index_cell
        for lane in self.lanes.values():
            pts = lane.line.points
            dirs = lane.line.seg_dir
            lens = np.diff(lane.line.cum)
            for i in range(len(pts) - 1):
                mid = (pts[i] + pts[i + 1]) / 2.0
                for dx in (-1, 0, 1):
                    for dy in (-1, 0, 1):
                        key = (int(mid[0] // cell) + dx, int(mid[1] // cell) + dy)
                        buckets.setdefault(key, []).append((pts[i], dirs[i], float(lens[i])))
        self._segment_index = {
            key: (
                np.array([e[0] for e in entries]),
                np.array([e[1] for e in entries]),
                np.array([e[2] for e in entries]),
            )
            for key, entries in buckets.items()
        }

    def nearest_lane_distance(self, point: np.ndarray) -> float:
        """Distance from a point to the closest lane centerline segment."""
        if self._segment_index is None:
            self._build_segment_index()
        key = (int(point[0] // self._index_cell), int(point[1] // self._index_cell))
        entry = self._segment_index.get(key)
        if entry is None:
            return math.inf
        a, d, seg_len = entry
        rel = point - a
        t = np.clip(rel[:, 0] * d[:, 0] + rel[:, 1] * d[:, 1], 0.0, seg_len)
        fx = rel[:, 0] - t * d[:, 0]
        fy = rel[:, 1] - t * d[:, 1]
        return float(np.sqrt(np.min(fx * fx + fy * fy)))

    def on_road(self, point: np.ndarray, margin: float = 0.6) -> bool:
        """True if the point lies on the drivable footprint."""
        if self.nearest_lane_distance(point) <= LANE_WIDTH / 2.0 + margin:
            return True
        for inter in self.intersections.values():
            if inter.contains(point, margin):
                return True
        return False

    def validate(self):
        """Constructor contract: labels present, widths sane, connectivity."""
        for lane in self.lanes.values():
            if lane.width <= 1.8:  # must exceed vehicle width
                raise ValueError(f"lane {lane.lane_id} narrower than a vehicle")
            if lane.kind == "junction" and lane.turn not in (TURN_STRAIGHT, TURN_LEFT, TURN_RIGHT):
                raise ValueError(f"junction lane {lane.lane_id} missing turn label")
        # Strong connectivity over the directed lane graph.
        ids = list(self.lanes)
        if not ids:
            raise ValueError("empty network")
        fwd = self._reachable(ids[0], self.successors)
        rev_adj: dict[int, list[int]] = {i: [] for i in ids}
        for a, outs in self.successors.items():
            for b in outs:
                rev_adj[b].append(a)
        rev = self._reachable(ids[0], rev_adj)
        if len(fwd) != len(ids) or len(rev) != len(ids):
            raise ValueError("lane graph is not strongly connected")

    @staticmethod
    def _reachable(start: int, adj: dict[int, list[int]]) -> set[int]:
        seen = {start}
        stack = [start]
        while stack:
            node = stack.pop()
            for nxt in adj.get(node, ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen


# -- procedural grid towns -----------------------------------------------------


def _classify_turn(d_in: np.ndarray, d_out: np.ndarray) -> str | None:
    """Turn label from approach/exit directions; None for U-turns."""
    angle = math.atan2(d_out[1], d_out[0]) - math.atan2(d_in[1], d_in[0])
    angle = (angle + math.pi) % (2.0 * math.pi) - math.pi
    deg = math.degrees(angle)
    if abs(deg) <= 35.0:
        return TURN_STRAIGHT
    if 35.0 < deg < 145.0:
        return TURN_LEFT
    if -145.0 < deg < -35.0:
        return TURN_RIGHT
    return None


def _grid_town(
    name: str,
    nx: int,
    ny: int,
    spacing_x: float,
    spacing_y: float,
    removed_edges: set[tuple[tuple[int, int], tuple[int, int]]],
    node_shift: dict[tuple[int, int], tuple[float, float]],
    seed: int,
) -> RoadNetwork:
    net = RoadNetwork(name)
    rng = np.random.default_rng(seed)

    nodes: dict[tuple[int, int], np.ndarray] = {}
    for i in range(nx):
        for j in range(ny):
            shift = node_shift.get((i, j), (0.0, 0.0))
            nodes[(i, j)] = np.array([i * spacing_x + shift[0], j * spacing_y + shift[1]])

    def norm_edge(a, b):
        return (a, b) if a <= b else (b, a)

    edges = []
    for i in range(nx):
        for j in range(ny):
            for di, dj in ((1, 0), (0, 1)):
                a, b = (i, j), (i + di, j + dj)
                if b in nodes and norm_edge(a, b) not in removed_edges:
                    edges.append((a, b))

    node_ids = {key: idx for idx, key in enumerate(sorted(nodes))}
    for key, idx in node_ids.items():
        net.intersections[idx] = Intersection(
            node_id=idx,
            center=nodes[key],
            half_size=JUNCTION_HALF,
            phase_offset=float(rng.integers(0, int(CYCLE_S))),
        )

    # Directed road lanes (both directions per edge), trimmed at junction boxes.
    incoming_at: dict[int, list[int]] = {idx: [] for idx in node_ids.values()}
    outgoing_at: dict[int, list[int]] = {idx: [] for idx in node_ids.values()}
    lane_end_node: dict[int, int] = {}
    lane_start_node: dict[int, int] = {}
    for a, b in edges:
        pa, pb = nodes[a], nodes[b]
        direction = (pb - pa) / np.linalg.norm(pb - pa)
        for src_node, dst_node, d in ((a, b, direction), (b, a, -direction)):
            ps, pe = nodes[src_node], nodes[dst_node]
            r = np.array([d[1], -d[0]])
            start = ps + d * JUNCTION_HALF + r * LANE_OFFSET
            end = pe - d * JUNCTION_HALF + r * LANE_OFFSET
            pts = resample(np.array([start, end]), SAMPLE_SPACING)
            lane_id = net.add_lane(pts, kind="road")
            lane_start_node[lane_id] = node_ids[src_node]
            lane_end_node[lane_id] = node_ids[dst_node]
            outgoing_at[node_ids[src_node]].append(lane_id)
            incoming_at[node_ids[dst_node]].append(lane_id)

    # Junction lanes: connect each incoming lane to every legal outgoing lane.
    for node, inc_list in incoming_at.items():
        inter = net.intersections[node]
        inter.incoming = list(inc_list)
        inter.outgoing = list(outgoing_at[node])
        for lin in inc_list:
            lane_in = net.lanes[lin]
            p_in = lane_in.line.points[-1]
            d_in = lane_in.line.seg_dir[-1]
            for lout in outgoing_at[node]:
                lane_out = net.lanes[lout]
                # Skip the reverse lane of the same road (no U-turns).
                if lane_end_node[lin] == lane_start_node[lout] and lane_start_node[lin] == lane_end_node[lout]:
                    continue
                p_out = lane_out.line.points[0]
                d_out = lane_out.line.seg_dir[0]
                turn = _classify_turn(d_in, d_out)
                if turn is None:
                    continue
                if turn == TURN_STRAIGHT:
                    pts = resample(np.array([p_in, p_out]), SAMPLE_SPACING)
                else:
                    # Control point where the entry/exit tangents meet.
                    denom = float(d_in[0] * d_out[1] - d_in[1] * d_out[0])
                    rel = p_out - p_in
                    t = float(rel[0] * d_out[1] - rel[1] * d_out[0]) / denom
                    ctrl = p_in + d_in * t
                    pts = quad_bezier(p_in, ctrl, p_out, SAMPLE_SPACING)
                jid = net.add_lane(pts, kind="junction", turn=turn, intersection_id=node)
                net.connect(lin, jid)
                net.connect(jid, lout)

    # Stop lines for every lit approach; group from the dominant world axis.
    for node, inc_list in incoming_at.items():
        for lin in inc_list:
            lane_in = net.lanes[lin]
            d_in = lane_in.line.seg_dir[-1]
            group = 0 if abs(d_in[1]) >= abs(d_in[0]) else 1
            sl = StopLine(
                stop_id=len(net.stop_lines),
                lane_id=lin,
                intersection_id=node,
                position=lane_in.line.points[-1].copy(),
                direction=d_in.copy(),
                group=group,
            )
            net.stop_lines.append(sl)
            net.stop_line_by_lane[lin] = sl

    # Building blocks fill grid cells, inset from the road edges (render only).
    inset = JUNCTION_HALF + 6.0
    for i in range(nx - 1):
        for j in range(ny - 1):
            corners = [nodes.get((i, j)), nodes.get((i + 1, j)),
                       nodes.get((i + 1, j + 1)), nodes.get((i, j + 1))]
            if any(c is None for c in corners):
                continue
            lo = np.minimum.reduce(corners) + inset
            hi = np.maximum.reduce(corners) - inset
            if np.all(hi > lo):
                net.blocks.append(np.array([
                    [lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]
                ]))

    net.validate()
    return net


def build_towns() -> tuple[RoadNetwork, RoadNetwork]:
    """(train town, test town). The split is structural: the test town has a
    different grid pitch, an interior T-junction, and one skewed intersection
    whose approach angles occur nowhere in the train town."""
    train = _grid_town(
        "town-a", nx=5, ny=4, spacing_x=100.0, spacing_y=90.0,
        removed_edges=set(), node_shift={}, seed=11,
    )
    test = _grid_town(
        "town-b", nx=4, ny=4, spacing_x=110.0, spacing_y=85.0,
        removed_edges={((1, 1), (2, 1))},
        node_shift={(2, 2): (18.0, 14.0)},
        seed=23,
    )
    return train, test


# -- serialization ---------------------------------------------------------------


def save_network(net: RoadNetwork, path: str | Path) -> None:
    data = {
        "schema_version": SCHEMA_VERSION,
        "kind": "road_network",
        "name": net.name,
        "lanes": [
            {
                "id": lane.lane_id,
                "kind": lane.kind,
                "turn": lane.turn,
                "intersection": lane.intersection_id,
                "width": lane.width,
                "points": [[round(float(x), 4), round(float(y), 4)] for x, y in lane.line.points],
            }
            for lane in net.lanes.values()
        ],
        "successors": {str(k): v for k, v in net.successors.items()},
        "intersections": [
            {
                "id": inter.node_id,
                "center": [float(inter.center[0]), float(inter.center[1])],
                "half_size": inter.half_size,
                "incoming": inter.incoming,
                "outgoing": inter.outgoing,
                "has_light": inter.has_light,
                "phase_offset": inter.phase_offset,
            }
            for inter in net.intersections.values()
        ],
        "stop_lines": [
            {
                "id": sl.stop_id,
                "lane": sl.lane_id,
                "intersection": sl.intersection_id,
                "position": [float(sl.position[0]), float(sl.position[1])],
                "direction": [float(sl.direction[0]), float(sl.direction[1])],
                "group": sl.group,
            }
            for sl in net.stop_lines
        ],
        "blocks": [[[float(x), float(y)] for x, y in blk] for blk in net.blocks],
    }
    Path(path).write_text(json.dumps(data, indent=1))


def load_network(path_or_data: str | Path | dict) -> RoadNetwork:
    if isinstance(path_or_data, dict):
        data = path_or_data
    else:
        data = json.loads(Path(path_or_data).read_text())
    if data.get("schema_version") != SCHEMA_VERSION or data.get("kind") != "road_network":
        raise ValueError("unrecognized road network file")
    net = RoadNetwork(data["name"])
    for lane in data["lanes"]:
        lid = net.add_lane(
            np.array(lane["points"]), kind=lane["kind"], turn=lane["turn"],
            intersection_id=lane["intersection"], width=lane["width"],
        )
        assert lid == lane["id"], "lane ids must be dense and ordered"
    for k, v in data["successors"].items():
        net.successors[int(k)] = list(v)
    for inter in data["intersections"]:
        net.intersections[inter["id"]] = Intersection(
            node_id=inter["id"],
            center=np.array(inter["center"]),
            half_size=inter["half_size"],
            incoming=inter["incoming"],
            outgoing=inter["outgoing"],
            has_light=inter["has_light"],
            phase_offset=inter["phase_offset"],
        )
    for sl in data["stop_lines"]:
        stop = StopLine(
            stop_id=sl["id"],
            lane_id=sl["lane"],
            intersection_id=sl["intersection"],
            position=np.array(sl["position"]),
            direction=np.array(sl["direction"]),
            group=sl["group"],
        )
        net.stop_lines.append(stop)
        net.stop_line_by_lane[sl["lane"]] = stop
    net.blocks = [np.array(blk) for blk in data.get("blocks", [])]
    return net
