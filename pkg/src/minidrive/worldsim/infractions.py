"""Red-light and collision detection with per-event debouncing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from minidrive.geometry import Pose2
from minidrive.worldsim.world import (
    VEHICLE_LENGTH,
    VEHICLE_WIDTH,
    WALKER_RADIUS,
    WorldState,
)

RED_LIGHT = "red_light"
COLLISION_VEHICLE = "collision_vehicle"
COLLISION_WALKER = "collision_walker"
COLLISION_STATIC = "collision_static"

COLLISION_KINDS = (COLLISION_VEHICLE, COLLISION_WALKER, COLLISION_STATIC)


@dataclass(frozen=True)
class Infraction:
    kind: str
    time: float
    position: tuple[float, float]
    detail: str = ""


def _rect_corners(pose: Pose2, length: float, width: float) -> np.ndarray:
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    fwd = np.array([c, s])
    left = np.array([-s, c])
    hl, hw = length / 2.0, width / 2.0
    center = pose.position
    return np.array([
        center + fwd * hl + left * hw,
        center + fwd * hl - left * hw,
        center - fwd * hl - left * hw,
        center - fwd * hl + left * hw,
    ])


def _rects_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex quads."""
    for rect in (a, b):
        for i in range(4):
            edge = rect[(i + 1) % 4] - rect[i]
            axis = np.array([-edge[1], edge[0]])
            pa = a @ axis
            pb = b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def _circle_rect_overlap(center: np.ndarray, radius: float, pose: Pose2,
                         length: float, width: float) -> bool:
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    rel = center - pose.position
    local = np.array([rel[0] * c + rel[1] * s, -rel[0] * s + rel[1] * c])
    clamped = np.clip(local, [-length / 2, -width / 2], [length / 2, width / 2])
    return float(np.linalg.norm(local - clamped)) <= radius


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


class InfractionDetector:
    """Stateful detector: each physical event reported once, debounced until
    the ego separates from the object (or re-approaches the stop line)."""

    def __init__(self, network):
        self.network = network
        self._active_contacts: set[str] = set()
        self._light_cooldown: dict[int, float] = {}
        self._stop_positions = np.array([sl.position for sl in network.stop_lines]) \
            if network.stop_lines else np.zeros((0, 2))

    def step(self, prev: WorldState, cur: WorldState) -> list[Infraction]:
        events: list[Infraction] = []
        events.extend(self._red_lights(prev, cur))
        events.extend(self._collisions(cur))
        return events

    def _red_lights(self, prev: WorldState, cur: WorldState) -> list[Infraction]:
        events = []
        p_prev = prev.ego.pose.position
        p_cur = cur.ego.pose.position
        move = p_cur - p_prev
        if np.linalg.norm(move) < 1e-9 or len(self._stop_positions) == 0:
            return events
        near = np.linalg.norm(self._stop_positions - p_prev, axis=1) < 12.0
        for idx in np.nonzero(near)[0]:
            sl = self.network.stop_lines[idx]
            cooldown = self._light_cooldown.get(sl.stop_id)
            if cooldown is not None and cur.time - cooldown < 5.0:
                continue
            if float(move @ sl.direction) <= 0.0:
                continue
            a, b = sl.endpoints
            if not _segments_intersect(p_prev, p_cur, a, b):
                continue
            self._light_cooldown[sl.stop_id] = cur.time
            phase = self.network.light_phase(sl.intersection_id, sl.group, prev.time)
            if phase == "red":
                events.append(
                    Infraction(RED_LIGHT, cur.time, (float(p_cur[0]), float(p_cur[1])),
                               detail=f"stop_line={sl.stop_id}")
                )
        return events

    def _collisions(self, cur: WorldState) -> list[Infraction]:
        events = []
        ego_pose = cur.ego.pose
        ego_rect = _rect_corners(ego_pose, VEHICLE_LENGTH, VEHICLE_WIDTH)
        pos = ego_pose.position

        seen: set[str] = set()
        if cur.npcs:
            npc_poses = [cur.npc_pose(n) for n in cur.npcs]
            npc_xy = np.array([p.position for p in npc_poses])
            near = np.nonzero(np.einsum("ij,ij->i", npc_xy - pos, npc_xy - pos) < 64.0)[0]
            for i in near:
                npc = cur.npcs[i]
                key = f"vehicle:{npc.npc_id}"
                if _rects_overlap(ego_rect, _rect_corners(npc_poses[i], VEHICLE_LENGTH, VEHICLE_WIDTH)):
                    seen.add(key)
                    if key not in self._active_contacts:
                        events.append(Infraction(COLLISION_VEHICLE, cur.time,
                                                 (float(pos[0]), float(pos[1])), detail=key))
        if cur.walkers:
            w_xy = np.array([cur.walker_position(w) for w in cur.walkers])
            near = np.nonzero(np.einsum("ij,ij->i", w_xy - pos, w_xy - pos) < 36.0)[0]
            for i in near:
                w = cur.walkers[i]
                key = f"walker:{w.walker_id}"
                if _circle_rect_overlap(w_xy[i], WALKER_RADIUS, ego_pose, VEHICLE_LENGTH, VEHICLE_WIDTH):
                    seen.add(key)
                    if key not in self._active_contacts:
                        events.append(Infraction(COLLISION_WALKER, cur.time,
                                                 (float(pos[0]), float(pos[1])), detail=key))
        off_road = any(not self.network.on_road(corner, margin=0.5) for corner in ego_rect)
        if off_road:
            key = "static"
            seen.add(key)
            if key not in self._active_contacts:
                events.append(Infraction(COLLISION_STATIC, cur.time,
                                         (float(pos[0]), float(pos[1])), detail="off-road"))
        self._active_contacts = seen
        return events


def detect_infractions(prev: WorldState, cur: WorldState,
                       detector: InfractionDetector | None = None) -> list[Infraction]:
    """One-shot wrapper; pass a detector to keep debounce state across steps."""
    if detector is None:
        detector = InfractionDetector(cur.network)
    return detector.step(prev, cur)
