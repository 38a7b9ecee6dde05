"""Frame transforms, ground-plane projection, and arc fitting."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minidrive.geometry import (
    Arc,
    AtCenter,
    BehindCamera,
    HorizonSingularity,
    InsufficientPoints,
    Pose2,
    ProjectionParams,
    cam_to_ground,
    ego_to_world,
    fit_arc,
    ground_to_cam,
    normalize_angle,
    project_onto_arc,
    world_to_ego,
)

PARAMS = ProjectionParams()


def test_pose_heading_normalized():
    assert Pose2(0, 0, 3 * math.pi).heading == pytest.approx(math.pi)
    assert Pose2(0, 0, -math.pi).heading == pytest.approx(math.pi)


def test_world_to_ego_point_ahead():
    # 1 m directly ahead maps to the forward axis.
    out = world_to_ego(Pose2(2, 3, math.pi / 2), np.array([2.0, 4.0]))
    assert np.allclose(out, [1.0, 0.0], atol=1e-12)


def test_world_to_ego_identity_frame():
    out = world_to_ego(Pose2(0, 0, 0), np.array([5.0, -2.0]))
    assert np.allclose(out, [5.0, -2.0])


def test_world_to_ego_rotated_pi():
    out = world_to_ego(Pose2(1, 1, math.pi), np.array([0.0, 1.0]))
    assert np.allclose(out, [1.0, 0.0], atol=1e-12)


def test_world_ego_round_trip_batch():
    rng = np.random.default_rng(0)
    pose = Pose2(3.2, -1.5, 0.7)
    pts = rng.normal(scale=20, size=(100, 2))
    back = ego_to_world(pose, world_to_ego(pose, pts))
    assert np.max(np.abs(back - pts)) < 1e-12


@given(
    st.floats(-100, 100), st.floats(-100, 100), st.floats(-math.pi, math.pi),
    st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50),
)
@settings(max_examples=200)
def test_world_to_ego_preserves_distances(px, py, th, ax, ay, bx, by):
    pose = Pose2(px, py, th)
    a, b = np.array([ax, ay]), np.array([bx, by])
    d_world = np.linalg.norm(a - b)
    d_ego = np.linalg.norm(world_to_ego(pose, a) - world_to_ego(pose, b))
    assert d_ego == pytest.approx(d_world, abs=1e-12 + 1e-12 * d_world)


def test_cam_to_ground_golden():
    # f = 384 / (2 tan 45 deg) = 192; (192, 53.12) -> 14 m ahead, centered.
    out = cam_to_ground(np.array([192.0, 53.12]), PARAMS)
    assert np.allclose(out, [14.0, 0.0], atol=1e-9)


def test_cam_to_ground_on_axis_zero_lateral():
    for y in [10.0, 40.0, 70.0]:
        out = cam_to_ground(np.array([192.0, y]), PARAMS)
        assert out[1] == pytest.approx(0.0, abs=1e-12)


def test_ground_to_cam_golden_inverse():
    out = ground_to_cam(np.array([14.0, 0.0]), PARAMS)
    assert np.allclose(out, [192.0, 53.12], atol=1e-9)


def test_projection_round_trip():
    rng = np.random.default_rng(1)
    fwd = rng.uniform(PARAMS.setback + 0.3, 80.0, size=1000)
    left = rng.uniform(-15.0, 15.0, size=1000)
    w = np.stack([fwd, left], axis=-1)
    back = cam_to_ground(ground_to_cam(w, PARAMS), PARAMS)
    assert np.max(np.abs(back - w)) < 1e-9


def test_pixel_round_trip():
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 384, size=1000)
    y = rng.uniform(0, 75, size=1000)
    p = np.stack([x, y], axis=-1)
    back = ground_to_cam(cam_to_ground(p, PARAMS), PARAMS)
    assert np.max(np.abs(back - p)) < 1e-9


def test_horizon_asymptote():
    ys = [ground_to_cam(np.array([fwd, 0.0]), PARAMS)[1] for fwd in (10, 100, 1000, 10000)]
    cy = PARAMS.canvas_center[1]
    assert all(y < cy for y in ys)
    assert ys == sorted(ys)
    assert cy - ys[-1] < 0.05


def test_lateral_sign_left_is_smaller_pixel_x():
    # +y (left) convention: a point left of the axis lands left of center.
    out = ground_to_cam(np.array([14.0, 1.0]), PARAMS)
    assert out[0] < PARAMS.canvas_center[0]


def test_horizon_singularity_raises():
    with pytest.raises(HorizonSingularity):
        cam_to_ground(np.array([192.0, 79.5]), PARAMS)
    with pytest.raises(HorizonSingularity):
        cam_to_ground(np.array([192.0, 100.0]), PARAMS)


def test_behind_camera_raises():
    with pytest.raises(BehindCamera):
        ground_to_cam(np.array([PARAMS.setback, 0.0]), PARAMS)
    with pytest.raises(BehindCamera):
        ground_to_cam(np.array([1.0, 0.0]), PARAMS)


def test_focal_and_center_derivation():
    p = ProjectionParams(image_width=640, image_height=480, fov_h=math.radians(60))
    assert p.focal == pytest.approx(640 / (2 * math.tan(math.radians(30))))
    assert p.canvas_center == (320.0, 240.0)


def test_projection_params_validation():
    with pytest.raises(ValueError):
        ProjectionParams(fov_h=0.0)
    with pytest.raises(ValueError):
        ProjectionParams(cam_height=-1.0)


# -- arc fitting --------------------------------------------------------------


def circle_points(center, r, angles):
    return np.stack(
        [center[0] + r * np.cos(angles), center[1] + r * np.sin(angles)], axis=-1
    )


def test_fit_arc_exact_circle():
    pts = np.array([[0, 0], [3, 1], [5, 5], [3, 9], [0, 10]], dtype=float)
    arc = fit_arc(pts)
    assert not arc.degenerate_line
    assert np.allclose(arc.center, [0.0, 5.0], atol=1e-9)
    assert arc.radius == pytest.approx(5.0, abs=1e-9)
    assert arc.residual < 1e-9


def test_fit_arc_collinear():
    pts = np.array([[0, 0], [1, 0], [2, 0], [3, 0]], dtype=float)
    arc = fit_arc(pts)
    assert arc.degenerate_line
    assert np.allclose(np.abs(arc.direction), [1.0, 0.0], atol=1e-12)
    assert arc.direction[0] > 0  # oriented first -> last


def test_fit_arc_insufficient_points():
    with pytest.raises(InsufficientPoints):
        fit_arc(np.array([[0, 0], [1, 1]], dtype=float))


def brute_force_circle(pts, center_box, r_range, n=60):
    """Grid search oracle minimizing the same algebraic objective."""
    best = None
    cxs = np.linspace(*center_box[0], n)
    cys = np.linspace(*center_box[1], n)
    rs = np.linspace(*r_range, n)
    for cx in cxs:
        for cy in cys:
            d2 = (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2
            # Optimal r^2 for fixed center in the algebraic objective.
            r2 = d2.mean()
            cost = np.sum((d2 - r2) ** 2)
            if best is None or cost < best[0]:
                best = (cost, cx, cy, np.sqrt(r2))
    return best[1:]


def test_fit_arc_noisy_circle_vs_brute_force():
    rng = np.random.default_rng(3)
    truth_c, truth_r = np.array([2.0, -1.0]), 8.0
    angles = rng.uniform(0, 2 * np.pi, size=40)
    pts = circle_points(truth_c, truth_r, angles) + rng.normal(0, 0.01, size=(40, 2))
    arc = fit_arc(pts)
    assert np.linalg.norm(arc.center - truth_c) < 0.05
    cx, cy, r = brute_force_circle(
        pts, ((truth_c[0] - 0.2, truth_c[0] + 0.2), (truth_c[1] - 0.2, truth_c[1] + 0.2)),
        (truth_r - 0.2, truth_r + 0.2),
    )
    assert np.linalg.norm(arc.center - [cx, cy]) < 0.02
    assert abs(arc.radius - r) < 0.02


@given(st.integers(0, 10_000))
@settings(max_examples=100)
def test_fit_arc_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(scale=5, size=2)
    r = rng.uniform(2, 20)
    angles = np.sort(rng.uniform(0, 1.5 * np.pi, size=6)) + rng.uniform(0, np.pi)
    pts = circle_points(c, r, angles)
    arc = fit_arc(pts)
    theta = rng.uniform(-np.pi, np.pi)
    shift = rng.normal(scale=10, size=2)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    arc2 = fit_arc(pts @ rot.T + shift)
    assert arc2.radius == pytest.approx(arc.radius, abs=1e-9 * max(1, r))
    assert np.allclose(arc2.center, rot @ arc.center + shift, atol=1e-8)


def test_fit_arc_order_invariance():
    rng = np.random.default_rng(4)
    pts = circle_points(np.array([1.0, 2.0]), 5.0, rng.uniform(0, 2 * np.pi, 8))
    pts += rng.normal(0, 0.05, pts.shape)
    a = fit_arc(pts)
    b = fit_arc(pts[::-1])
    assert np.allclose(a.center, b.center, atol=1e-12)
    assert a.radius == pytest.approx(b.radius, abs=1e-12)


def test_project_onto_arc_radial():
    arc = fit_arc(np.array([[0, 0], [3, 1], [5, 5], [3, 9], [0, 10]], dtype=float))
    out = project_onto_arc(arc, np.array([0.0, -1.0]))
    assert np.allclose(out, [0.0, 0.0], atol=1e-9)


def test_project_onto_arc_idempotent():
    arc = fit_arc(np.array([[0, 0], [3, 1], [5, 5], [3, 9], [0, 10]], dtype=float))
    p = project_onto_arc(arc, np.array([7.0, 3.0]))
    again = project_onto_arc(arc, p)
    assert np.allclose(again, p, atol=1e-9)


def test_project_onto_degenerate_line():
    arc = fit_arc(np.array([[0, 0], [1, 0], [2, 0], [3, 0]], dtype=float))
    out = project_onto_arc(arc, np.array([3.0, 2.0]))
    assert np.allclose(out, [3.0, 0.0], atol=1e-12)


def test_project_at_center_raises():
    arc = Arc(center=np.array([0.0, 5.0]), radius=5.0)
    with pytest.raises(AtCenter):
        project_onto_arc(arc, np.array([0.0, 5.0]))


@given(st.integers(0, 10_000))
@settings(max_examples=100)
def test_projection_is_argmin_of_distance(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(scale=3, size=2)
    r = rng.uniform(1, 10)
    arc = Arc(center=c, radius=r)
    p = c + rng.normal(scale=5, size=2)
    if np.linalg.norm(p - c) < 1e-6:
        p = c + np.array([1.0, 0.0])
    proj = project_onto_arc(arc, p)
    # On the circle...
    assert abs(np.linalg.norm(proj - c) - r) < 1e-9
    # ...and no sampled circle point is closer.
    angles = np.linspace(0, 2 * np.pi, 360, endpoint=False)
    candidates = circle_points(c, r, angles)
    best = np.min(np.linalg.norm(candidates - p, axis=1))
    assert np.linalg.norm(proj - p) <= best + 1e-9


def test_normalize_angle_range():
    for th in np.linspace(-20, 20, 401):
        w = normalize_angle(th)
        assert -math.pi < w <= math.pi
        assert math.cos(w) == pytest.approx(math.cos(th), abs=1e-9)
        assert math.sin(w) == pytest.approx(math.sin(th), abs=1e-9)
