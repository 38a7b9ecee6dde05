"""Camera rendering: projector consistency, styles, and image augmentation."""

import numpy as np
import pytest

from minidrive.camrender import (
    Cls,
    DEFAULT_PARAMS,
    ImageAugmentConfig,
    N_STYLES,
    TEST_STYLES,
    TRAIN_STYLES,
    augment_image,
    build_styles,
    export_image,
    render_camera,
    render_class_map,
)
from minidrive.geometry import ground_to_cam, pixel_y_to_row, world_to_ego
from minidrive.worldsim import build_towns, make_world, sample_route
from minidrive.worldsim.world import NPCVehicle


@pytest.fixture(scope="module")
def town():
    return build_towns()[0]


@pytest.fixture(scope="module")
def ego_world(town):
    rng = np.random.default_rng(3)
    route = sample_route(town, rng, "navigation", (400.0, 800.0))
    return make_world(town, route.start_pose, traffic="empty", seed=0)


@pytest.fixture(scope="module")
def styles():
    return build_styles()


def test_styles_split(styles):
    assert len(styles) == N_STYLES
    assert tuple(s.style_id for s in styles if s.split == "train") == TRAIN_STYLES
    assert tuple(s.style_id for s in styles if s.split == "test") == TEST_STYLES


def test_render_dimensions_and_range(ego_world, styles):
    img = render_camera(ego_world, styles[0])
    assert img.rgb.shape == (160, 384, 3)
    assert img.rgb.dtype == np.float32
    assert img.rgb.min() >= 0.0 and img.rgb.max() <= 1.0


def test_empty_world_background_classes(ego_world):
    cls = render_class_map(ego_world)
    present = set(np.unique(cls))
    assert int(Cls.VEHICLE) not in present
    assert int(Cls.WALKER) not in present
    assert int(Cls.ROAD) in present
    assert int(Cls.SKY) in present


def test_npc_ground_contact_matches_projection(town, ego_world):
    """NPC 14 m ahead: its ground-contact midpoint pixel must agree with
    ground_to_cam — this locks renderer and projector to one convention."""
    world = ego_world.copy()
    ego = world.ego.pose
    target = ego.position + 14.0 * ego.forward
    lane_id, lane_s = None, None
    for lid, lane in town.lanes.items():
        s, lat, _ = lane.line.project(target)
        if abs(lat) < 1.0 and 2.0 < s < lane.length - 2.0:
            lane_id, lane_s = lid, s
            break
    assert lane_id is not None
    world.npcs.append(NPCVehicle(npc_id=0, lane_id=lane_id, s=lane_s, speed=0.0))
    rel = world_to_ego(ego, world.npc_pose(world.npcs[0]).position)

    pix = ground_to_cam(rel, DEFAULT_PARAMS)
    row = int(round(pixel_y_to_row(pix[1], DEFAULT_PARAMS.image_height)))
    col = int(round(pix[0]))
    cls = render_class_map(world)
    window = cls[max(row - 1, 0) : row + 2, max(col - 1, 0) : col + 2]
    assert (window == int(Cls.VEHICLE)).any(), f"no vehicle at pixel ({col},{row})"


def test_unoccluded_road_point_consistency(ego_world):
    """Road points ahead sample as road at their projected pixel."""
    world = ego_world
    cls = render_class_map(world)
    hits = 0
    total = 0
    for fwd in (9.0, 12.0, 16.0, 24.0):
        rel = np.array([fwd, 0.0])
        pix = ground_to_cam(rel, DEFAULT_PARAMS)
        row = int(round(pixel_y_to_row(pix[1], DEFAULT_PARAMS.image_height)))
        col = int(round(pix[0]))
        total += 1
        hits += int(cls[row, col] in (int(Cls.ROAD), int(Cls.BOUNDARY)))
    assert hits == total


def test_two_styles_same_geometry_different_colors(ego_world, styles):
    a = render_camera(ego_world, styles[0])
    b = render_camera(ego_world, styles[4])
    assert np.array_equal(a.class_map, b.class_map)
    assert np.mean(np.abs(a.rgb - b.rgb)) > 0.01


def test_render_deterministic(ego_world, styles):
    a = render_camera(ego_world, styles[1])
    b = render_camera(ego_world, styles[1])
    assert np.array_equal(a.rgb, b.rgb)


def test_red_light_visible_when_approaching(town, ego_world, styles):
    """Drive toward a stop line with a forced red: red disc pixels appear."""
    from minidrive.worldsim.network import GREEN_S, YELLOW_S
    from minidrive.geometry import Pose2
    import math

    sl = None
    for cand in town.stop_lines:
        sl = cand
        break
    inter = town.intersections[sl.intersection_id]
    old = inter.phase_offset
    inter.phase_offset = GREEN_S + YELLOW_S + 1.0 if sl.group == 0 else 1.0
    try:
        d = sl.direction
        pos = sl.position - d * 20.0
        world = make_world(town, Pose2(pos[0], pos[1], math.atan2(d[1], d[0])),
                           traffic="empty", seed=0)
        cls = render_class_map(world)
        assert (cls == int(Cls.LIGHT_RED)).sum() >= 1
    finally:
        inter.phase_offset = old


def test_augment_image_deterministic(ego_world, styles):
    img = render_camera(ego_world, styles[0]).rgb
    a = augment_image(img, seed=42)
    b = augment_image(img, seed=42)
    assert np.array_equal(a, b)
    c = augment_image(img, seed=43)
    assert not np.array_equal(a, c)


def test_augment_image_zero_strength_identity(ego_world, styles):
    img = render_camera(ego_world, styles[0]).rgb
    cfg = ImageAugmentConfig(dropout_p=0.0, blur_prob=0.0, noise_sigma=0.0, gain_delta=0.0)
    out = augment_image(img, seed=7, config=cfg)
    assert np.array_equal(out, img)


def test_augment_image_mean_perturbation_bounds(ego_world, styles):
    img = render_camera(ego_world, styles[0]).rgb
    deltas = []
    for seed in range(100):
        out = augment_image(img, seed=seed)
        deltas.append(float(np.mean(np.abs(out - img))))
    mean_delta = np.mean(deltas)
    assert 0.001 < mean_delta < 0.1


def test_values_clamped(ego_world, styles):
    img = render_camera(ego_world, styles[2]).rgb
    out = augment_image(img, seed=3)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_export_image(tmp_path, ego_world, styles):
    img = render_camera(ego_world, styles[0])
    path = export_image(img, tmp_path / "cam.png")
    assert path.exists()
