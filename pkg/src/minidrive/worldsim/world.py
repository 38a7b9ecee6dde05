"""World state and deterministic stepping.

The ego follows a kinematic bicycle model integrated *exactly* over each
piecewise-constant control slice (circular arcs / clothoid-free closed form),
so advancing by dt twice equals advancing by 2*dt. Scripted traffic refreshes
its control decisions only on the fixed 0.1 s decision grid; ``step`` slices
its interval at those boundaries, which keeps the same property for any call
pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from minidrive.geometry import Pose2, normalize_angle
from minidrive.worldsim.network import LANE_WIDTH, RoadNetwork
from minidrive.worldsim.polyline import Polyline

# Vehicle / dynamics constants
WHEELBASE = 2.8
MAX_STEER_ANGLE = math.radians(35.0)
MAX_ACCEL = 3.0
BRAKE_DECEL = 6.0
MAX_SPEED = 10.0
VEHICLE_LENGTH = 4.4
VEHICLE_WIDTH = 1.8
WALKER_RADIUS = 0.35
WALKER_SPEED = 1.2

DECISION_TICK = 0.1
NPC_CRUISE = 6.0
NPC_GAP = 7.0
NPC_ACCEL = 2.0
NPC_BRAKE = 4.5


class Command(IntEnum):
    FOLLOW = 0
    LEFT = 1
    RIGHT = 2
    STRAIGHT = 3


TURN_TO_COMMAND = {"left": Command.LEFT, "right": Command.RIGHT, "straight": Command.STRAIGHT}


@dataclass(frozen=True)
class ControlOutput:
    steer: float
    throttle: float
    brake: int

    def __post_init__(self):
        if not -1.0 <= self.steer <= 1.0:
            raise ValueError(f"steer out of range: {self.steer}")
        if not 0.0 <= self.throttle <= 1.0:
            raise ValueError(f"throttle out of range: {self.throttle}")
        if self.brake not in (0, 1):
            raise ValueError(f"brake must be 0 or 1: {self.brake}")
        if self.brake and self.throttle > 0.0:
            raise ValueError("brake and throttle must not be positive together")


class OffRouteError(Exception):
    pass


@dataclass
class EgoState:
    pose: Pose2
    speed: float = 0.0
    steer: float = 0.0  # last applied steer command, for telemetry


@dataclass
class NPCVehicle:
    npc_id: int
    lane_id: int
    s: float
    speed: float
    accel: float = 0.0  # decided at ticks
    decision_counter: int = 0


@dataclass
class WalkerState:
    walker_id: int
    path: Polyline
    s: float
    direction: int = 1  # ping-pong along the path
    speed: float = WALKER_SPEED


@dataclass(frozen=True)
class TrafficLightView:
    """Per-approach light snapshot (position at the stop line)."""

    stop_line_id: int
    position: np.ndarray
    phase: str
    group: int
    intersection_id: int


class TrafficLevel:
    EMPTY = "empty"
    REGULAR = "regular"
    DENSE = "dense"
    COUNTS = {"empty": (0, 0), "regular": (10, 10), "dense": (30, 30)}


@dataclass
class WorldState:
    network: RoadNetwork
    time: float
    ego: EgoState
    npcs: list[NPCVehicle]
    walkers: list[WalkerState]
    rng_stream: int = 0

    def npc_pose(self, npc: NPCVehicle) -> Pose2:
        lane = self.network.lanes[npc.lane_id]
        p = lane.line.point_at(npc.s)
        h = lane.line.heading_at(npc.s)
        return Pose2(p[0], p[1], h)

    def walker_position(self, w: WalkerState) -> np.ndarray:
        return w.path.point_at(w.s)

    def lights(self) -> list[TrafficLightView]:
        out = []
        for sl in self.network.stop_lines:
            out.append(
                TrafficLightView(
                    stop_line_id=sl.stop_id,
                    position=sl.position.copy(),
                    phase=self.network.light_phase(sl.intersection_id, sl.group, self.time),
                    group=sl.group,
                    intersection_id=sl.intersection_id,
                )
            )
        return out

    def copy(self) -> "WorldState":
        return WorldState(
            network=self.network,
            time=self.time,
            ego=EgoState(self.ego.pose, self.ego.speed, self.ego.steer),
            npcs=[replace(n) for n in self.npcs],
            walkers=[replace(w) for w in self.walkers],
            rng_stream=self.rng_stream,
        )


def _mix(*values: int) -> int:
    """Deterministic integer hash (splitmix-style), stable across runs."""
    h = 0x9E3779B97F4A7C15
    for v in values:
        h ^= (v & 0xFFFFFFFFFFFFFFFF) * 0xBF58476D1CE4E5B9
        h &= 0xFFFFFFFFFFFFFFFF
        h ^= h >> 31
        h *= 0x94D049BB133111EB
        h &= 0xFFFFFFFFFFFFFFFF
    return h


def _integrate_arc(pose: Pose2, v0: float, accel: float, curvature: float, h: float
                   ) -> tuple[Pose2, float]:
    """Exact bicycle-model update for constant accel and curvature over h.

    The path is a circle of radius 1/curvature regardless of the speed
    profile, so position depends only on traveled arc length. Speed clamps at
    0 and MAX_SPEED split the interval analytically.
    """
    # Traveled arc length with clamping at v=0 and v=MAX_SPEED.
    s = 0.0
    t_rem = h
    v = v0
    if accel < 0.0:
        t_stop = v / -accel if accel != 0 else math.inf
        t_run = min(t_rem, t_stop)
        s += v * t_run + 0.5 * accel * t_run * t_run
        v = max(v + accel * t_run, 0.0)
        t_rem -= t_run
        # stopped for the remainder
    elif accel > 0.0:
        t_cap = (MAX_SPEED - v) / accel if v < MAX_SPEED else 0.0
        t_run = min(t_rem, t_cap)
        s += v * t_run + 0.5 * accel * t_run * t_run
        v = min(v + accel * t_run, MAX_SPEED)
        t_rem -= t_run
        s += v * t_rem
    else:
        s += v * t_rem
    s = max(s, 0.0)

    if abs(curvature) < 1e-9:
        nx = pose.x + s * math.cos(pose.heading)
        ny = pose.y + s * math.sin(pose.heading)
        return Pose2(nx, ny, pose.heading), v
    r = 1.0 / curvature
    dth = s * curvature
    nx = pose.x + r * (math.sin(pose.heading + dth) - math.sin(pose.heading))
    ny = pose.y - r * (math.cos(pose.heading + dth) - math.cos(pose.heading))
    return Pose2(nx, ny, normalize_angle(pose.heading + dth)), v


def _decide_all_npcs(world: WorldState) -> None:
    """Refresh every NPC's target acceleration (car following + red lights).

    Front-gap checks are vectorized over all vehicle/walker pairs.
    """
    npcs = world.npcs
    if not npcs:
        return
    net = world.network
    n = len(npcs)
    pos = np.empty((n, 2))
    dirs = np.empty((n, 2))
    for i, npc in enumerate(npcs):
        line = net.lanes[npc.lane_id].line
        pos[i] = line.point_at(npc.s)
        dirs[i] = line.direction_at(npc.s)

    obstacles = np.vstack([pos, world.ego.pose.position[None, :]])
    rel = obstacles[None, :, :] - pos[:, None, :]
    fwd = rel[:, :, 0] * dirs[:, None, 0] + rel[:, :, 1] * dirs[:, None, 1]
    lat = dirs[:, None, 0] * rel[:, :, 1] - dirs[:, None, 1] * rel[:, :, 0]
    mask = (fwd > 0.5) & (fwd < 30.0) & (np.abs(lat) < 2.2)
    mask[np.arange(n), np.arange(n)] = False
    gaps = np.where(mask, fwd - VEHICLE_LENGTH, np.inf).min(axis=1)

    if world.walkers:
        wpos = np.array([w.path.point_at(w.s) for w in world.walkers])
        relw = wpos[None, :, :] - pos[:, None, :]
        fww = relw[:, :, 0] * dirs[:, None, 0] + relw[:, :, 1] * dirs[:, None, 1]
        latw = dirs[:, None, 0] * relw[:, :, 1] - dirs[:, None, 1] * relw[:, :, 0]
        mw = (fww > 0.0) & (fww < 12.0) & (np.abs(latw) < 2.0)
        wgaps = np.where(mw, fww - VEHICLE_LENGTH / 2.0, np.inf).min(axis=1)
        gaps = np.minimum(gaps, wgaps)

    for i, npc in enumerate(npcs):
        lane = net.lanes[npc.lane_id]
        v_target = NPC_CRUISE

        sl = net.stop_line_by_lane.get(npc.lane_id)
        if sl is not None:
            phase = net.light_phase(sl.intersection_id, sl.group, world.time)
            dist = lane.length - npc.s
            if phase in ("red", "yellow") and dist < 22.0:
                v_target = min(v_target, math.sqrt(max(2.0 * 2.5 * (dist - 2.0), 0.0)))

        if gaps[i] < math.inf:
            v_target = min(v_target, math.sqrt(max(2.0 * 2.5 * (gaps[i] - NPC_GAP), 0.0)))

        if lane.kind == "junction":
            v_target = min(v_target, 3.5)

        err = v_target - npc.speed
        npc.accel = min(err * 1.5, NPC_ACCEL) if err >= 0 else max(err * 2.5, -NPC_BRAKE)


def _advance_npc(world: WorldState, npc: NPCVehicle, h: float):
    # Arc-length advance with speed clamped at zero.
    v0 = npc.speed
    a = npc.accel
    t_stop = v0 / -a if a < 0 else math.inf
    t_run = min(h, t_stop)
    ds = v0 * t_run + 0.5 * a * t_run * t_run
    npc.speed = max(v0 + a * t_run, 0.0)
    if a > 0:
        npc.speed = min(npc.speed, NPC_CRUISE)
    npc.s += max(ds, 0.0)
    lane = world.network.lanes[npc.lane_id]
    while npc.s >= lane.length:
        options = world.network.successors[npc.lane_id]
        if not options:
            npc.s = lane.length
            npc.speed = 0.0
            return
        pick = _mix(world.rng_stream, npc.npc_id, npc.decision_counter) % len(options)
        npc.decision_counter += 1
        npc.s -= lane.length
        npc.lane_id = options[pick]
        lane = world.network.lanes[npc.lane_id]


def _advance_walker(w: WalkerState, h: float):
    remaining = w.speed * h
    while remaining > 0.0:
        if w.direction > 0:
            room = w.path.length - w.s
        else:
            room = w.s
        took = min(room, remaining)
        w.s += w.direction * took
        remaining -= took
        if remaining > 0.0:
            w.direction = -w.direction
        if w.path.length <= 1e-9:
            return


def step(world: WorldState, control: ControlOutput, dt: float) -> WorldState:
    """Advance the world by dt under a constant ego control.

    dt must lie in (0, 0.2]. Returns a new WorldState; the input is not
    mutated.
    """
    if not 0.0 < dt <= 0.2:
        raise ValueError(f"dt out of range (0, 0.2]: {dt}")
    out = world.copy()

    if control.brake:
        accel = -BRAKE_DECEL
    elif control.throttle > 0.0:
        accel = control.throttle * MAX_ACCEL
    else:
        accel = 0.0
    curvature = math.tan(control.steer * MAX_STEER_ANGLE) / WHEELBASE

    t_end = world.time + dt
    eps = 1e-9
    while out.time < t_end - eps:
        # Refresh scripted decisions when on (or crossing onto) the grid.
        tick_phase = out.time / DECISION_TICK
        on_tick = abs(tick_phase - round(tick_phase)) < 1e-7
        if on_tick:
            _decide_all_npcs(out)
        next_tick = (math.floor(out.time / DECISION_TICK + 1e-7) + 1) * DECISION_TICK
        h = min(t_end, next_tick) - out.time
        h = max(h, eps)

        pose, v = _integrate_arc(out.ego.pose, out.ego.speed, accel, curvature, h)
        out.ego.pose = pose
        out.ego.speed = v
        out.ego.steer = control.steer
        for npc in out.npcs:
            _advance_npc(out, npc, h)
        for w in out.walkers:
            _advance_walker(w, h)
        # Quantize to microseconds so repeated stepping stays on the grid.
        out.time = round((out.time + h) * 1e6) / 1e6
    return out


# -- world construction -----------------------------------------------------------


def _walker_loop(net: RoadNetwork, lane_id: int, rng: np.random.Generator) -> Polyline:
    """Sidewalk loop around one road: out on one side, cross, return, cross."""
    lane = net.lanes[lane_id]
    pts = lane.line.points
    d0 = lane.line.seg_dir[0]
    side_off = LANE_WIDTH + 1.6  # past both lanes' halves onto the sidewalk
    right = np.array([d0[1], -d0[0]])
    out_side = pts + right * side_off
    back_side = (pts - right * side_off)[::-1]
    loop = np.concatenate([out_side, back_side, out_side[:1]], axis=0)
    return Polyline(loop)


def make_world(
    network: RoadNetwork,
    start_pose: Pose2,
    traffic: str = TrafficLevel.EMPTY,
    seed: int = 0,
    keep_clear: np.ndarray | None = None,
) -> WorldState:
    """Spawn a world with scripted traffic; deterministic per seed."""
    n_veh, n_walk = TrafficLevel.COUNTS[traffic]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD01E]))
    road_lanes = [l.lane_id for l in network.lanes.values() if l.kind == "road"]

    npcs: list[NPCVehicle] = []
    occupied: list[tuple[int, float]] = []
    guard = start_pose.position if keep_clear is None else keep_clear
    attempts = 0
    while len(npcs) < n_veh and attempts < n_veh * 60:
        attempts += 1
        lane_id = int(rng.choice(road_lanes))
        lane = network.lanes[lane_id]
        if lane.length < 20.0:
            continue
        s = float(rng.uniform(5.0, lane.length - 5.0))
        pos = lane.line.point_at(s)
        if np.linalg.norm(pos - guard) < 25.0:
            continue
        if any(lid == lane_id and abs(os - s) < 12.0 for lid, os in occupied):
            continue
        npcs.append(NPCVehicle(npc_id=len(npcs), lane_id=lane_id, s=s,
                               speed=float(rng.uniform(2.0, 5.0))))
        occupied.append((lane_id, s))

    walkers: list[WalkerState] = []
    for wid in range(n_walk):
        lane_id = int(rng.choice(road_lanes))
        path = _walker_loop(network, lane_id, rng)
        walkers.append(
            WalkerState(
                walker_id=wid,
                path=path,
                s=float(rng.uniform(0.0, path.length)),
                direction=1,
                speed=float(rng.uniform(0.9, 1.5)),
            )
        )

    return WorldState(
        network=network,
        time=0.0,
        ego=EgoState(pose=start_pose, speed=0.0),
        npcs=npcs,
        walkers=walkers,
        rng_stream=seed,
    )
