"""Hand-crafted expert autopilot with full access to the world state.

Pure-pursuit steering along the route centerline; speed target is the
minimum of cruise, curvature, red-light, lead-vehicle, walker, and
goal-approach profiles. Used both to generate demonstrations and as the
benchmark ceiling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from minidrive.geometry import Pose2, normalize_angle
from minidrive.worldsim.routes import Route, RouteTracker
from minidrive.worldsim.world import (
    Command,
    ControlOutput,
    MAX_STEER_ANGLE,
    OffRouteError,
    VEHICLE_LENGTH,
    WHEELBASE,
    WorldState,
)

OFF_ROUTE_LATERAL = 5.0
COMMAND_ACTIVATION = 25.0


def command_at(route: Route, pose: Pose2, activation: float = COMMAND_ACTIVATION,
               tracker: RouteTracker | None = None) -> Command:
    """Navigation command for a pose on the route (FOLLOW away from
    junctions, the route's turn label inside the activation window)."""
    if tracker is not None:
        s = tracker.s
    else:
        s, _, _ = route.line.project(pose.position)
    return route.command_at_progress(s, activation)


@dataclass
class ExpertConfig:
    cruise_speed: float = 6.0
    lookahead_gain: float = 1.1
    lookahead_min: float = 3.0
    lookahead_max: float = 9.0
    lateral_accel: float = 2.2
    comfort_decel: float = 2.5
    light_decel: float = 1.4
    light_horizon: float = 25.0
    vehicle_horizon: float = 28.0
    vehicle_gap: float = 7.0
    walker_horizon: float = 16.0
    walker_gap: float = 5.5
    speed_kp: float = 1.4


class ExpertAutopilot:
    """Closed-loop controller for one episode on one route."""

    def __init__(self, route: Route, config: ExpertConfig | None = None):
        self.route = route
        self.cfg = config or ExpertConfig()
        self.tracker = RouteTracker(route)
        self._stop_line_positions = self._route_stop_lines()

    def _route_stop_lines(self) -> list[tuple[float, int, int]]:
        """(route_s at the stop line, intersection_id, group) per lit approach."""
        out = []
        offset = 0.0
        net = self.route.network
        for k, lane_id in enumerate(self.route.lane_ids):
            lane = net.lanes[lane_id]
            lo = self.route.start_s if k == 0 else 0.0
            hi = self.route.end_s if k == len(self.route.lane_ids) - 1 else lane.length
            sl = net.stop_line_by_lane.get(lane_id)
            if sl is not None and hi >= lane.length - 1e-6:
                out.append((offset + (lane.length - lo), sl.intersection_id, sl.group))
            offset += hi - lo
        return out

    def command(self, world: WorldState) -> Command:
        return self.route.command_at_progress(self.tracker.s, COMMAND_ACTIVATION)

    def control(self, world: WorldState) -> ControlOutput:
        cfg = self.cfg
        ego = world.ego
        s, lateral = self.tracker.update(ego.pose)
        if abs(lateral) > OFF_ROUTE_LATERAL:
            raise OffRouteError(f"expert {abs(lateral):.1f} m off route")

        # -- steering: pure pursuit on the route centerline
        lookahead = float(np.clip(cfg.lookahead_gain * ego.speed, cfg.lookahead_min, cfg.lookahead_max))
        target = self.route.line.point_at(min(s + lookahead, self.route.length))
        rel = target - ego.pose.position
        alpha = normalize_angle(math.atan2(rel[1], rel[0]) - ego.pose.heading)
        dist = max(float(np.linalg.norm(rel)), 1e-3)
        wheel = math.atan2(2.0 * WHEELBASE * math.sin(alpha), dist)
        steer = float(np.clip(wheel / MAX_STEER_ANGLE, -1.0, 1.0))

        # -- speed target
        v_t = cfg.cruise_speed

        kappa = self.route.line.max_curvature(s + 1.0, s + max(10.0, 2.5 * ego.speed))
        if kappa > 1e-4:
            v_t = min(v_t, max(math.sqrt(cfg.lateral_accel / kappa), 2.2))

        remaining = self.route.length - s
        v_t = min(v_t, math.sqrt(2.0 * 1.5 * max(remaining - 1.0, 0.0)))

        v_t = min(v_t, self._light_limit(world, s, ego.speed))
        v_t = min(v_t, self._vehicle_limit(world, s))
        v_t = min(v_t, self._walker_limit(world, s))

        err = v_t - ego.speed
        if v_t < 0.2 and ego.speed < 0.6:
            return ControlOutput(steer=steer, throttle=0.0, brake=1)
        if err < -0.35:
            return ControlOutput(steer=steer, throttle=0.0, brake=1)
        throttle = float(np.clip(cfg.speed_kp * err / 3.0, 0.0, 1.0))
        return ControlOutput(steer=steer, throttle=throttle, brake=0)

    def _light_limit(self, world: WorldState, s: float, speed: float) -> float:
        cfg = self.cfg
        net = world.network
        limit = math.inf
        for stop_s, inter_id, group in self._stop_line_positions:
            d = stop_s - s
            if d < -1.0 or d > cfg.light_horizon:
                continue
            phase = net.light_phase(inter_id, group, world.time)
            if phase == "green":
                continue
            if phase == "yellow":
                # Continue through if stopping would need harsh braking.
                needed = speed * speed / (2.0 * max(d, 0.5))
                if needed > cfg.light_decel + 1.0:
                    continue
            hold = max(d - 2.5, 0.0)
            limit = min(limit, math.sqrt(2.0 * cfg.light_decel * hold))
        return limit

    def _vehicle_limit(self, world: WorldState, s: float) -> float:
        cfg = self.cfg
        limit = math.inf
        line = self.route.line
        hint = self.tracker._hint
        ep = world.ego.pose.position
        for npc in world.npcs:
            pos = world.npc_pose(npc).position
            if math.hypot(pos[0] - ep[0], pos[1] - ep[1]) > cfg.vehicle_horizon + 5.0:
                continue
            s_n, lat, _ = line.project(pos, hint=hint, window=40)
            ds = s_n - s
            if 0.0 < ds < cfg.vehicle_horizon and abs(lat) < 2.2:
                gap = ds - VEHICLE_LENGTH
                follow = math.sqrt(2.0 * cfg.comfort_decel * max(gap - cfg.vehicle_gap, 0.0))
                limit = min(limit, follow + npc.speed * 0.5)
        return limit

    def _walker_limit(self, world: WorldState, s: float) -> float:
        cfg = self.cfg
        limit = math.inf
        line = self.route.line
        hint = self.tracker._hint
        ep = world.ego.pose.position
        for w in world.walkers:
            pos = world.walker_position(w)
            if math.hypot(pos[0] - ep[0], pos[1] - ep[1]) > cfg.walker_horizon + 4.0:
                continue
            s_w, lat, _ = line.project(pos, hint=hint, window=30)
            ds = s_w - s
            if 0.0 < ds < cfg.walker_horizon and abs(lat) < 2.6:
                limit = min(limit, math.sqrt(2.0 * 3.0 * max(ds - cfg.walker_gap, 0.0)))
        return limit
