"""Synthetic forward-camera rendering with deterministic appearance styles.

The ground plane (road, lane boundaries, grass) is produced by *sampling the
bird's-eye map through the inverse ground projection*, which makes renderer
and projector agree by construction: an unoccluded ground point at ego
(forward, left) lands exactly at ``ground_to_cam((forward, left))``. Objects
above the ground (vehicles, walkers, buildings, light poles) are projected
through the same pinhole and painted far-to-near.

Camera-pixel frame: x right, y up from the bottom row (see geometry module);
arrays keep row 0 at the top.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import cv2
import numpy as np

from minidrive.geometry import Pose2, ProjectionParams, world_to_ego
from minidrive.bev import (
    CH_BOUNDARY,
    CH_ROAD,
    EGO_PIXEL,
    MAP_SIZE,
    METERS_PER_PIXEL,
    BirdsEyeMap,
    render_map,
)
from minidrive.worldsim.world import (
    VEHICLE_LENGTH,
    VEHICLE_WIDTH,
    WorldState,
)

# Nominal mount of the forward camera in the vehicle frame (x fwd, y left, z up).
CAMERA_MOUNT = (2.0, 0.0, 1.4)
DEFAULT_PARAMS = ProjectionParams()

VEHICLE_HEIGHT = 1.5
WALKER_HEIGHT = 1.7
WALKER_HALF_W = 0.3
BUILDING_HEIGHT = 8.0
POLE_HEIGHT = 4.5
LIGHT_DISC_Z = 4.0
LIGHT_DISC_R = 0.45
GROUND_FAR = 55.0
GROUND_LAT = 31.0


class Cls(IntEnum):
    SKY = 0
    FAR = 1
    GROUND = 2
    ROAD = 3
    BOUNDARY = 4
    BUILDING = 5
    VEHICLE = 6
    WALKER = 7
    POLE = 8
    LIGHT_GREEN = 9
    LIGHT_YELLOW = 10
    LIGHT_RED = 11


_BASE_PALETTE = {
    Cls.SKY: (0.58, 0.72, 0.92),
    Cls.FAR: (0.62, 0.66, 0.72),
    Cls.GROUND: (0.42, 0.55, 0.34),
    Cls.ROAD: (0.34, 0.34, 0.38),
    Cls.BOUNDARY: (0.86, 0.86, 0.80),
    Cls.BUILDING: (0.56, 0.46, 0.40),
    Cls.VEHICLE: (0.22, 0.28, 0.62),
    Cls.WALKER: (0.82, 0.42, 0.24),
    Cls.POLE: (0.28, 0.28, 0.30),
    Cls.LIGHT_GREEN: (0.10, 0.85, 0.25),
    Cls.LIGHT_YELLOW: (0.95, 0.82, 0.12),
    Cls.LIGHT_RED: (0.92, 0.12, 0.10),
}
_LIGHT_CLASSES = {"green": Cls.LIGHT_GREEN, "yellow": Cls.LIGHT_YELLOW, "red": Cls.LIGHT_RED}

N_STYLES = 6
TRAIN_STYLES = (0, 1, 2, 3)
TEST_STYLES = (4, 5)


@dataclass(frozen=True)
class RenderStyle:
    style_id: int
    split: str  # "train" | "test"
    palette: np.ndarray  # (n_classes, 3) float32
    brightness: float
    contrast: float
    noise_sigma: float
    noise_seed: int


def build_styles() -> list[RenderStyle]:
    """Six deterministic appearance variants; 0-3 train, 4-5 test."""
    styles = []
    for sid in range(N_STYLES):
        rng = np.random.default_rng(np.random.SeedSequence([0x57, sid]))
        palette = np.zeros((len(Cls), 3), dtype=np.float32)
        for cls in Cls:
            base = np.array(_BASE_PALETTE[cls])
            if cls in (Cls.LIGHT_GREEN, Cls.LIGHT_YELLOW, Cls.LIGHT_RED):
                # Light hues stay identifiable; only the value varies.
                jitter = base * rng.uniform(0.88, 1.05)
            else:
                jitter = base + rng.uniform(-0.12, 0.12, size=3)
            palette[int(cls)] = np.clip(jitter, 0.0, 1.0)
        styles.append(
            RenderStyle(
                style_id=sid,
                split="train" if sid in TRAIN_STYLES else "test",
                palette=palette,
                brightness=float(rng.uniform(-0.05, 0.05)),
                contrast=float(rng.uniform(0.92, 1.08)),
                noise_sigma=float(rng.uniform(0.004, 0.018)),
                noise_seed=int(rng.integers(0, 2**31)),
            )
        )
    return styles


@dataclass
class CameraImage:
    rgb: np.ndarray  # (H, W, 3) float32 in [0, 1], row 0 at the top
    class_map: np.ndarray  # (H, W) uint8 of Cls ids
    style_id: int
    params: ProjectionParams


# -- cached inverse-projection gather maps ---------------------------------------


_GATHER_CACHE: dict[tuple, tuple] = {}


def _gather_maps(params: ProjectionParams):
    key = (params.image_width, params.image_height, round(params.fov_h, 9),
           params.cam_height, params.setback)
    hit = _GATHER_CACHE.get(key)
    if hit is not None:
        return hit
    w, h = params.image_width, params.image_height
    cx, cy = params.canvas_center
    rows = np.arange(h)
    ys = (h - 1) - rows  # pixel y (up from bottom) per array row
    denom = cy - ys
    ground_rows = denom > params.horizon_margin
    fwd = np.full(h, np.inf)
    fwd[ground_rows] = params.focal * params.cam_height / denom[ground_rows] + params.setback
    xs = np.arange(w)
    left = np.zeros((h, w))
    left[ground_rows] = ((cx - xs)[None, :] * params.cam_height / denom[ground_rows, None])
    fwd2 = np.broadcast_to(fwd[:, None], (h, w))

    valid = ground_rows[:, None] & (fwd2 <= GROUND_FAR) & (np.abs(left) <= GROUND_LAT)
    fwd_safe = np.where(np.isfinite(fwd2), fwd2, 0.0)
    iy = np.round(EGO_PIXEL[1] - fwd_safe / METERS_PER_PIXEL).astype(np.int64)
    ix = np.round(EGO_PIXEL[0] - left / METERS_PER_PIXEL).astype(np.int64)
    valid &= (iy >= 0) & (iy < MAP_SIZE) & (ix >= 0) & (ix < MAP_SIZE)
    iy = np.clip(iy, 0, MAP_SIZE - 1)
    ix = np.clip(ix, 0, MAP_SIZE - 1)
    result = (ground_rows, valid, iy, ix)
    _GATHER_CACHE[key] = result
    return result


def _project(points_ego: np.ndarray, params: ProjectionParams) -> np.ndarray:
    """Ego (forward, left, z) -> float (col, array_row); distances clamped."""
    pts = np.asarray(points_ego, dtype=np.float64)
    cx, cy = params.canvas_center
    d = np.maximum(pts[:, 0] - params.setback, 0.2)
    x = cx - pts[:, 1] * params.focal / d
    y = cy - (params.cam_height - pts[:, 2]) * params.focal / d
    row = (params.image_height - 1) - y
    return np.stack([x, row], axis=-1)


def _fill(canvas: np.ndarray, poly: np.ndarray, value: int):
    pts = np.round(poly).astype(np.int32)
    if len(pts) >= 3:
        cv2.fillConvexPoly(canvas, cv2.convexHull(pts), value)


def render_class_map(world: WorldState, params: ProjectionParams = DEFAULT_PARAMS,
                     bev: BirdsEyeMap | None = None) -> np.ndarray:
    """Per-pixel semantic class ids for the forward view."""
    w, h = params.image_width, params.image_height
    cls = np.full((h, w), int(Cls.SKY), dtype=np.uint8)
    ground_rows, valid, iy, ix = _gather_maps(params)
    cls[ground_rows] = int(Cls.FAR)

    if bev is None:
        bev = render_map(world)
    road = bev.grid[:, :, CH_ROAD]
    boundary = bev.grid[:, :, CH_BOUNDARY]
    sampled = np.where(
        boundary[iy, ix] > 0, int(Cls.BOUNDARY),
        np.where(road[iy, ix] > 0, int(Cls.ROAD), int(Cls.GROUND)),
    ).astype(np.uint8)
    cls[valid] = sampled[valid]

    ego_pose = world.ego.pose
    objects: list[tuple[float, str, tuple]] = []

    for blk in world.network.blocks:
        rel = world_to_ego(ego_pose, blk)
        dmin = float(np.min(np.linalg.norm(rel, axis=1)))
        if dmin > 120.0 or np.all(rel[:, 0] <= params.setback + 0.2):
            continue
        objects.append((dmin, "building", (rel,)))

    for npc in world.npcs:
        pose = world.npc_pose(npc)
        rel_center = world_to_ego(ego_pose, pose.position)
        dmin = float(np.linalg.norm(rel_center))
        if dmin > 70.0:
            continue
        fwd_v = pose.forward
        left_v = pose.left
        hl, hw = VEHICLE_LENGTH / 2.0, VEHICLE_WIDTH / 2.0
        corners_w = np.array([
            pose.position + fwd_v * hl + left_v * hw,
            pose.position + fwd_v * hl - left_v * hw,
            pose.position - fwd_v * hl - left_v * hw,
            pose.position - fwd_v * hl + left_v * hw,
        ])
        rel = world_to_ego(ego_pose, corners_w)
        if np.all(rel[:, 0] <= params.setback + 0.2):
            continue
        objects.append((dmin, "vehicle", (rel,)))

    for wk in world.walkers:
        rel = world_to_ego(ego_pose, world.walker_position(wk))
        d = float(np.linalg.norm(rel))
        if d > 60.0 or rel[0] <= params.setback + 0.3:
            continue
        objects.append((d, "walker", (rel,)))

    for view in world.lights():
        rel = world_to_ego(ego_pose, view.position)
        if rel[0] <= params.setback + 0.3 or np.linalg.norm(rel) > 80.0:
            continue
        # Light discs face oncoming traffic only.
        sl = world.network.stop_lines[view.stop_line_id]
        facing = float(sl.direction @ ego_pose.forward) > 0.3
        objects.append((float(np.linalg.norm(rel)), "pole", (rel, view.phase, facing)))

    objects.sort(key=lambda item: -item[0])
    for _, kind, payload in objects:
        if kind == "building":
            rel = payload[0]
            base = np.concatenate([rel, np.zeros((len(rel), 1))], axis=1)
            top = np.concatenate([rel, np.full((len(rel), 1), BUILDING_HEIGHT)], axis=1)
            pts = _project(np.concatenate([base, top]), params)
            _fill(cls, pts, int(Cls.BUILDING))
        elif kind == "vehicle":
            rel = payload[0]
            base = np.concatenate([rel, np.zeros((4, 1))], axis=1)
            top = np.concatenate([rel, np.full((4, 1), VEHICLE_HEIGHT)], axis=1)
            pts = _project(np.concatenate([base, top]), params)
            _fill(cls, pts, int(Cls.VEHICLE))
        elif kind == "walker":
            rel = payload[0]
            quad = np.array([
                [rel[0], rel[1] - WALKER_HALF_W, 0.0],
                [rel[0], rel[1] + WALKER_HALF_W, 0.0],
                [rel[0], rel[1] + WALKER_HALF_W, WALKER_HEIGHT],
                [rel[0], rel[1] - WALKER_HALF_W, WALKER_HEIGHT],
            ])
            _fill(cls, _project(quad, params), int(Cls.WALKER))
        else:  # pole (+ light disc when facing)
            rel, phase, facing = payload
            # Pole sits right of the stop line, off the lane corridor.
            pole = np.array([
                [rel[0], rel[1] - 2.6, 0.0],
                [rel[0], rel[1] - 2.4, 0.0],
                [rel[0], rel[1] - 2.4, POLE_HEIGHT],
                [rel[0], rel[1] - 2.6, POLE_HEIGHT],
            ])
            _fill(cls, _project(pole, params), int(Cls.POLE))
            if facing:
                center = _project(np.array([[rel[0], rel[1] - 2.5, LIGHT_DISC_Z]]), params)[0]
                d = max(rel[0] - params.setback, 0.2)
                radius = max(int(round(params.focal * LIGHT_DISC_R / d)), 1)
                cv2.circle(cls, (int(round(center[0])), int(round(center[1]))),
                           radius, int(_LIGHT_CLASSES[phase]), -1)
    return cls


def render_camera(world: WorldState, style: RenderStyle,
                  params: ProjectionParams = DEFAULT_PARAMS,
                  bev: BirdsEyeMap | None = None) -> CameraImage:
    """Deterministic style-colored render of the forward view."""
    cls = render_class_map(world, params, bev)
    rgb = style.palette[cls].astype(np.float32)
    rgb = (rgb - 0.5) * style.contrast + 0.5 + style.brightness
    noise_rng = np.random.default_rng(style.noise_seed)
    rgb += noise_rng.normal(0.0, style.noise_sigma,
                            size=(params.image_height, params.image_width, 1)).astype(np.float32)
    rgb = np.clip(rgb, 0.0, 1.0)
    return CameraImage(rgb=rgb, class_map=cls, style_id=style.style_id, params=params)


# -- input-noise augmentation ------------------------------------------------------


@dataclass(frozen=True)
class ImageAugmentConfig:
    dropout_p: float = 0.05
    blur_prob: float = 0.5
    noise_sigma: float = 0.02
    gain_delta: float = 0.1
    apply_prob: float = 0.5  # per-effect chance for dropout/noise/gain


def augment_image(rgb: np.ndarray, seed: int,
                  config: ImageAugmentConfig | None = None) -> np.ndarray:
    """Random subset of {pixel dropout, box blur, Gaussian noise, channel
    gain}; deterministic per seed; output re-clamped to [0, 1]."""
    cfg = config or ImageAugmentConfig()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA6]))
    out = rgb.astype(np.float32, copy=True)
    if rng.uniform() < cfg.apply_prob and cfg.gain_delta > 0.0:
        gain = rng.uniform(1.0 - cfg.gain_delta, 1.0 + cfg.gain_delta, size=3).astype(np.float32)
        out *= gain[None, None, :]
    if rng.uniform() < cfg.blur_prob:
        out = cv2.blur(out, (3, 3))
    if rng.uniform() < cfg.apply_prob and cfg.noise_sigma > 0.0:
        out += rng.normal(0.0, cfg.noise_sigma, size=out.shape).astype(np.float32)
    if rng.uniform() < cfg.apply_prob and cfg.dropout_p > 0.0:
        mask = rng.uniform(size=out.shape[:2]) < cfg.dropout_p
        out[mask] = 0.0
    return np.clip(out, 0.0, 1.0)


def export_image(img: CameraImage, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bgr = cv2.cvtColor((img.rgb * 255).astype(np.uint8), cv2.COLOR_RGB2BGR)
    cv2.imwrite(str(path), bgr)
    return path
