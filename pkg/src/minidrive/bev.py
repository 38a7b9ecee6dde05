"""Ego-anchored bird's-eye 7-channel binary map: rendering, agent crop, and
rotation/shift augmentation with consistent waypoint transforms.

Pixel convention: forward is up (decreasing row), ego-left is decreasing
column. The full render is 320x320 at 0.2 m/px with the ego at pixel
(col 160, row 280); the agent crop is 192x192 with the ego at (96, 191).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from minidrive.geometry import Pose2, world_to_ego
from minidrive.worldsim.network import LANE_WIDTH, RoadNetwork
from minidrive.worldsim.world import (
    VEHICLE_LENGTH,
    VEHICLE_WIDTH,
    WALKER_RADIUS,
    WorldState,
)

MAP_SIZE = 320
CROP_SIZE = 192
METERS_PER_PIXEL = 0.2
EGO_PIXEL = (160, 280)  # (col, row) in the full render
CROP_EGO_PIXEL = (96, 191)  # (col, row) in the crop

CH_ROAD = 0
CH_BOUNDARY = 1
CH_VEHICLE = 2
CH_WALKER = 3
CH_LIGHT_GREEN = 4
CH_LIGHT_YELLOW = 5
CH_LIGHT_RED = 6
N_CHANNELS = 7
LIGHT_CHANNELS = {"green": CH_LIGHT_GREEN, "yellow": CH_LIGHT_YELLOW, "red": CH_LIGHT_RED}

LIGHT_RADIUS_M = 1.0


@dataclass
class BirdsEyeMap:
    grid: np.ndarray  # (H, W, 7) uint8 in {0, 1}
    meters_per_pixel: float
    anchor: Pose2  # ego pose the render is anchored at
    ego_pixel: tuple[int, int]  # (col, row) of the ego in this grid

    @property
    def size(self) -> tuple[int, int]:
        return self.grid.shape[1], self.grid.shape[0]


@dataclass(frozen=True)
class AugmentParams:
    rotation_deg: float = 0.0  # in [-5, 5]
    shift_px: float = 0.0  # lateral, in [-5, 5]

    def __post_init__(self):
        if abs(self.rotation_deg) > 5.0 + 1e-9:
            raise ValueError(f"rotation out of [-5, 5] deg: {self.rotation_deg}")
        if abs(self.shift_px) > 5.0 + 1e-9:
            raise ValueError(f"shift out of [-5, 5] px: {self.shift_px}")


def ego_to_map_pixels(points: np.ndarray, ego_pixel=EGO_PIXEL,
                      mpp: float = METERS_PER_PIXEL) -> np.ndarray:
    """Ego-ground (forward, left) meters -> (col, row) map pixels."""
    pts = np.asarray(points, dtype=np.float64)
    col = ego_pixel[0] - pts[..., 1] / mpp
    row = ego_pixel[1] - pts[..., 0] / mpp
    return np.stack([col, row], axis=-1)


def map_pixels_to_ego(pixels: np.ndarray, ego_pixel=EGO_PIXEL,
                      mpp: float = METERS_PER_PIXEL) -> np.ndarray:
    """Inverse of :func:`ego_to_map_pixels`."""
    px = np.asarray(pixels, dtype=np.float64)
    fwd = (ego_pixel[1] - px[..., 1]) * mpp
    left = (ego_pixel[0] - px[..., 0]) * mpp
    return np.stack([fwd, left], axis=-1)


def _lane_bboxes(net: RoadNetwork) -> np.ndarray:
    cache = getattr(net, "_bev_lane_bboxes", None)
    if cache is None:
        boxes = np.empty((len(net.lanes), 4))
        for i, lane in net.lanes.items():
            pts = lane.line.points
            boxes[i] = (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())
        net._bev_lane_bboxes = boxes
        cache = boxes
    return cache


def _boundary_lines(net: RoadNetwork) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per road lane: left/right edge polylines in world coordinates."""
    cache = getattr(net, "_bev_boundaries", None)
    if cache is None:
        cache = {}
        for lane in net.lanes.values():
            if lane.kind != "road":
                continue
            pts = lane.line.points
            dirs = np.vstack([lane.line.seg_dir, lane.line.seg_dir[-1:]])
            left = np.stack([-dirs[:, 1], dirs[:, 0]], axis=1)
            half = lane.width / 2.0
            cache[lane.lane_id] = (pts + left * half, pts - left * half)
        net._bev_boundaries = cache
    return cache


def _to_px(points_world: np.ndarray, anchor: Pose2, ego_pixel, mpp) -> np.ndarray:
    ego = world_to_ego(anchor, points_world)
    px = ego_to_map_pixels(ego, ego_pixel, mpp)
    return np.round(px).astype(np.int32)


def render_map(world: WorldState, size: int = MAP_SIZE, ego_pixel=EGO_PIXEL,
               mpp: float = METERS_PER_PIXEL) -> BirdsEyeMap:
    """Rasterize the ground-truth state around the ego.

    Channels: road, lane boundaries, vehicles, walkers, and one channel per
    traffic-light color (discs at the stop lines). The ego vehicle itself is
    not drawn.
    """
    net = world.network
    anchor = world.ego.pose
    grid = np.zeros((size, size, N_CHANNELS), dtype=np.uint8)

    # Visible-window prefilter in world coordinates.
    reach = size * mpp * 0.75
    cx, cy = anchor.x, anchor.y
    boxes = _lane_bboxes(net)
    visible = ~(
        (boxes[:, 2] < cx - reach) | (boxes[:, 0] > cx + reach)
        | (boxes[:, 3] < cy - reach) | (boxes[:, 1] > cy + reach)
    )

    road = np.zeros((size, size), dtype=np.uint8)
    bound = np.zeros((size, size), dtype=np.uint8)
    lane_thickness = max(int(round(LANE_WIDTH / mpp)), 1)
    boundaries = _boundary_lines(net)
    for lane_id in np.nonzero(visible)[0]:
        lane = net.lanes[int(lane_id)]
        px = _to_px(lane.line.points, anchor, ego_pixel, mpp)
        cv2.polylines(road, [px], False, 1, thickness=lane_thickness)
        if lane.kind == "road":
            left, right = boundaries[lane.lane_id]
            cv2.polylines(bound, [_to_px(left, anchor, ego_pixel, mpp)], False, 1, 1)
            cv2.polylines(bound, [_to_px(right, anchor, ego_pixel, mpp)], False, 1, 1)
    for inter in net.intersections.values():
        if abs(inter.center[0] - cx) > reach or abs(inter.center[1] - cy) > reach:
            continue
        h = inter.half_size
        corners = inter.center + np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
        cv2.fillConvexPoly(road, _to_px(corners, anchor, ego_pixel, mpp), 1)
    grid[:, :, CH_ROAD] = road
    grid[:, :, CH_BOUNDARY] = bound

    veh = np.zeros((size, size), dtype=np.uint8)
    for npc in world.npcs:
        pose = world.npc_pose(npc)
        if abs(pose.x - cx) > reach or abs(pose.y - cy) > reach:
            continue
        fwd = pose.forward
        left = pose.left
        hl, hw = VEHICLE_LENGTH / 2.0, VEHICLE_WIDTH / 2.0
        corners = np.array([
            pose.position + fwd * hl + left * hw,
            pose.position + fwd * hl - left * hw,
            pose.position - fwd * hl - left * hw,
            pose.position - fwd * hl + left * hw,
        ])
        cv2.fillConvexPoly(veh, _to_px(corners, anchor, ego_pixel, mpp), 1)
    grid[:, :, CH_VEHICLE] = veh

    walk = np.zeros((size, size), dtype=np.uint8)
    r_px = max(int(round(WALKER_RADIUS / mpp)), 2)
    for w in world.walkers:
        pos = world.walker_position(w)
        if abs(pos[0] - cx) > reach or abs(pos[1] - cy) > reach:
            continue
        center = _to_px(pos[None, :], anchor, ego_pixel, mpp)[0]
        cv2.circle(walk, (int(center[0]), int(center[1])), r_px, 1, -1)
    grid[:, :, CH_WALKER] = walk

    light_r = max(int(round(LIGHT_RADIUS_M / mpp)), 1)
    light_canvases = {
        CH_LIGHT_GREEN: np.zeros((size, size), dtype=np.uint8),
        CH_LIGHT_YELLOW: np.zeros((size, size), dtype=np.uint8),
        CH_LIGHT_RED: np.zeros((size, size), dtype=np.uint8),
    }
    for view in world.lights():
        pos = view.position
        if abs(pos[0] - cx) > reach or abs(pos[1] - cy) > reach:
            continue
        center = _to_px(pos[None, :], anchor, ego_pixel, mpp)[0]
        ch = LIGHT_CHANNELS[view.phase]
        cv2.circle(light_canvases[ch], (int(center[0]), int(center[1])), light_r, 1, -1)
    # Light colors are mutually exclusive per pixel: red > yellow > green.
    red = light_canvases[CH_LIGHT_RED]
    yellow = light_canvases[CH_LIGHT_YELLOW] & (1 - red)
    green = light_canvases[CH_LIGHT_GREEN] & (1 - red) & (1 - yellow)
    grid[:, :, CH_LIGHT_RED] = red
    grid[:, :, CH_LIGHT_YELLOW] = yellow
    grid[:, :, CH_LIGHT_GREEN] = green

    return BirdsEyeMap(grid=grid, meters_per_pixel=mpp, anchor=anchor, ego_pixel=ego_pixel)


def crop_agent_input(bev: BirdsEyeMap, crop_size: int = CROP_SIZE,
                     crop_ego=CROP_EGO_PIXEL) -> BirdsEyeMap:
    """Crop so the ego sits at the bottom-center pixel (96, 191).

    Idempotent: a map already at the crop geometry is returned unchanged.
    """
    if bev.grid.shape[0] == crop_size and bev.ego_pixel == crop_ego:
        return bev
    col0 = bev.ego_pixel[0] - crop_ego[0]
    row0 = bev.ego_pixel[1] - crop_ego[1]
    if row0 < 0 or col0 < 0 or row0 + crop_size > bev.grid.shape[0] \
            or col0 + crop_size > bev.grid.shape[1]:
        raise ValueError("crop window exceeds the rendered map")
    grid = np.ascontiguousarray(bev.grid[row0 : row0 + crop_size, col0 : col0 + crop_size])
    return BirdsEyeMap(grid=grid, meters_per_pixel=bev.meters_per_pixel,
                       anchor=bev.anchor, ego_pixel=crop_ego)


def _twist_matrix(theta: float, shift: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid transform exp([theta, shift]): rotation plus coupled translation.

    Parameter negation gives the exact inverse, which keeps augmentation
    invertible as (rot, shift) -> (-rot, -shift).
    """
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    if abs(theta) < 1e-12:
        vmat = np.eye(2)
    else:
        vmat = np.array([[s, -(1.0 - c)], [1.0 - c, s]]) / theta
    return rot, vmat @ shift


def augment_transform(params: AugmentParams, mpp: float = METERS_PER_PIXEL):
    """(pixel-space 2x3 warp about the ego anchor, ego-space (R, t)).

    The raster content moves by the pixel transform; waypoints in ego-ground
    coordinates move by the matching rigid transform, so supervision targets
    stay glued to the (shifted/rotated) lanes.
    """
    theta = math.radians(params.rotation_deg)
    rot_px, t_px = _twist_matrix(theta, np.array([params.shift_px, 0.0]))
    # Ego-space equivalents under col = c0 - left/mpp, row = r0 - fwd/mpp:
    # pixel rotation by theta is an ego rotation by -theta, and a pixel
    # translation (dc, dr) is an ego translation (-dr * mpp, -dc * mpp).
    rot_ego, _ = _twist_matrix(-theta, np.zeros(2))
    t_ego = np.array([-t_px[1] * mpp, -t_px[0] * mpp])
    return rot_px, t_px, rot_ego, t_ego


def augment(bev: BirdsEyeMap, waypoints: np.ndarray, params: AugmentParams
            ) -> tuple[BirdsEyeMap, np.ndarray]:
    """Rotate/shift the raster about the ego anchor and apply the matching
    rigid transform to ego-ground waypoints.

    Nearest-neighbor resampling preserves the binary contract.
    """
    rot_px, t_px, rot_ego, t_ego = augment_transform(params, bev.meters_per_pixel)
    anchor = np.array(bev.ego_pixel, dtype=np.float64)
    offset = anchor - rot_px @ anchor + t_px
    mat = np.concatenate([rot_px, offset[:, None]], axis=1)

    h, w = bev.grid.shape[:2]
    warped = cv2.warpAffine(
        bev.grid, mat, (w, h), flags=cv2.INTER_NEAREST,
        borderMode=cv2.BORDER_CONSTANT, borderValue=0,
    )
    if warped.ndim == 2:
        warped = warped[:, :, None]
    wp = np.asarray(waypoints, dtype=np.float64)
    wp_out = wp @ rot_ego.T + t_ego
    out = BirdsEyeMap(grid=np.ascontiguousarray(warped), meters_per_pixel=bev.meters_per_pixel,
                      anchor=bev.anchor, ego_pixel=bev.ego_pixel)
    return out, wp_out


def perturbed_render_pose(anchor: Pose2, params: AugmentParams,
                          mpp: float = METERS_PER_PIXEL) -> Pose2:
    """Ego pose whose fresh render matches ``augment`` of the original render
    (used by the augmentation-consistency tests)."""
    theta = math.radians(params.rotation_deg)
    _, _, rot_ego, t_ego = augment_transform(params, mpp)
    new_heading = anchor.heading + theta
    c, s = math.cos(new_heading), math.sin(new_heading)
    world_t = np.array([c * t_ego[0] - s * t_ego[1], s * t_ego[0] + c * t_ego[1]])
    return Pose2(anchor.x - world_t[0], anchor.y - world_t[1], new_heading)


def export_channels(bev: BirdsEyeMap, directory: str | Path, prefix: str = "map") -> list[Path]:
    """Debug export: one grayscale PNG per channel."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = ["road", "boundary", "vehicle", "walker", "green", "yellow", "red"]
    paths = []
    for i, name in enumerate(names):
        path = directory / f"{prefix}_{i}_{name}.png"
        cv2.imwrite(str(path), bev.grid[:, :, i] * 255)
        paths.append(path)
    return paths
