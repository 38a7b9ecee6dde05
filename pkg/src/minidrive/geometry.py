"""Coordinate frames, rigid transforms, camera/ground projection, and
circular-arc fitting.

Conventions used throughout the package:

* World frame: x/y in meters, heading in radians, counter-clockwise,
  0 = world +x.
* Ego frame: +x forward, +y left (right-handed, z up).
* Camera pixel frame: x grows rightward from the left image edge, y grows
  *upward* from the bottom image row. Image arrays are stored with row 0 at
  the top, so ``row = (height - 1) - y``. The horizon sits at y = c_y; ground
  points always have y < c_y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(Exception):
    """Base class for geometry contract violations."""


class HorizonSingularity(GeometryError):
    """Camera point at or above the horizon row cannot hit the ground plane."""


class BehindCamera(GeometryError):
    """Ground point at or behind the projection setback has no pixel image."""


class InsufficientPoints(GeometryError):
    """Arc fitting needs at least three points."""


class AtCenter(GeometryError):
    """Point coincides with the circle center; projection is undefined."""


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    theta = math.fmod(theta, 2.0 * math.pi)
    if theta <= -math.pi:
        theta += 2.0 * math.pi
    elif theta > math.pi:
        theta -= 2.0 * math.pi
    return theta


@dataclass(frozen=True)
class Pose2:
    """Planar pose: position in world meters, heading in radians CCW."""

    x: float
    y: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)

    @property
    def forward(self) -> np.ndarray:
        return np.array([math.cos(self.heading), math.sin(self.heading)])

    @property
    def left(self) -> np.ndarray:
        return np.array([-math.sin(self.heading), math.cos(self.heading)])

    def moved(self, dx: float, dy: float, dheading: float = 0.0) -> "Pose2":
        return Pose2(self.x + dx, self.y + dy, self.heading + dheading)


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def world_to_ego(pose: Pose2, point: np.ndarray) -> np.ndarray:
    """Express world point(s) in the pose's ego frame (+x forward, +y left).

    Accepts a single (2,) point or an (N, 2) array.
    """
    pt = np.asarray(point, dtype=np.float64)
    rel = pt - pose.position
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    # R^-1 = R(-heading)
    fwd = rel[..., 0] * c + rel[..., 1] * s
    left = -rel[..., 0] * s + rel[..., 1] * c
    return np.stack([fwd, left], axis=-1)


def ego_to_world(pose: Pose2, point: np.ndarray) -> np.ndarray:
    """Inverse of :func:`world_to_ego`."""
    pt = np.asarray(point, dtype=np.float64)
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    wx = pt[..., 0] * c - pt[..., 1] * s + pose.x
    wy = pt[..., 0] * s + pt[..., 1] * c + pose.y
    return np.stack([wx, wy], axis=-1)


@dataclass(frozen=True)
class ProjectionParams:
    """Pinhole camera over a flat ground plane.

    ``setback`` shifts projected ground points forward so the mapping between
    pixels and ego-ground coordinates is one-to-one even for pixels near the
    bottom edge of the canvas.
    """

    image_width: int = 384
    image_height: int = 160
    fov_h: float = math.radians(90.0)
    cam_height: float = 1.4
    setback: float = 4.0
    horizon_margin: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.fov_h < math.pi):
            raise ValueError(f"fov_h out of range: {self.fov_h}")
        if self.cam_height <= 0.0:
            raise ValueError("cam_height must be positive")

    @property
    def focal(self) -> float:
        return self.image_width / (2.0 * math.tan(self.fov_h / 2.0))

    @property
    def canvas_center(self) -> tuple[float, float]:
        return (self.image_width / 2.0, self.image_height / 2.0)


def cam_to_ground(pt: np.ndarray, params: ProjectionParams) -> np.ndarray:
    """Project camera pixel(s) (x, y) onto the ego ground plane.

    Returns (forward, left) in meters. Raises :class:`HorizonSingularity`
    when a pixel sits within ``horizon_margin`` of the horizon row c_y.
    """
    p = np.asarray(pt, dtype=np.float64)
    cx, cy = params.canvas_center
    denom = cy - p[..., 1]
    if np.any(denom <= params.horizon_margin):
        raise HorizonSingularity(
            f"pixel y within {params.horizon_margin} px of horizon row {cy}"
        )
    fwd = params.focal * params.cam_height / denom + params.setback
    left = (cx - p[..., 0]) * params.cam_height / denom
    return np.stack([fwd, left], axis=-1)


def ground_to_cam(pt: np.ndarray, params: ProjectionParams) -> np.ndarray:
    """Exact algebraic inverse of :func:`cam_to_ground`.

    Input is (forward, left) ego-ground meters; forward must exceed the
    setback. Positive ``left`` maps to pixel x < c_x.
    """
    p = np.asarray(pt, dtype=np.float64)
    d = p[..., 0] - params.setback
    if np.any(d <= 0.0):
        raise BehindCamera("forward coordinate must exceed projection setback")
    cx, cy = params.canvas_center
    x = cx - p[..., 1] * params.focal / d
    y = cy - params.focal * params.cam_height / d
    return np.stack([x, y], axis=-1)


def pixel_y_to_row(y: np.ndarray, image_height: int) -> np.ndarray:
    """Convert bottom-up pixel y to top-down array row."""
    return (image_height - 1) - np.asarray(y)


def row_to_pixel_y(row: np.ndarray, image_height: int) -> np.ndarray:
    return (image_height - 1) - np.asarray(row)


_COLLINEAR_TOL = 1e-6


@dataclass(frozen=True)
class Arc:
    """Least-squares circle through a point set, or a degenerate line.

    For a circle: ``center`` and ``radius``. For near-collinear input the
    ``degenerate_line`` flag is set, ``direction`` is the unit line direction
    and ``anchor`` a point on the line. ``residual`` is the RMS orthogonal
    deviation of the input points.
    """

    center: np.ndarray | None
    radius: float
    degenerate_line: bool = False
    direction: np.ndarray | None = None
    anchor: np.ndarray | None = None
    residual: float = 0.0

    def __post_init__(self):
        if not self.degenerate_line and (
            self.radius <= 0.0 or not math.isfinite(self.radius)
        ):
            raise ValueError(f"invalid circle radius {self.radius}")
        if not math.isfinite(self.residual):
            raise ValueError("arc fit residual is not finite")


def fit_arc(points: np.ndarray) -> Arc:
    """Algebraic (Kasa) least-squares circle fit.

    Minimizes sum((|p - center|^2 - r^2)^2). Falls back to a least-squares
    line when the points are collinear within tolerance.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise InsufficientPoints("arc fit needs at least 3 points of shape (N, 2)")

    mean = pts.mean(axis=0)
    u = pts - mean
    suu = float(np.sum(u[:, 0] ** 2))
    svv = float(np.sum(u[:, 1] ** 2))
    suv = float(np.sum(u[:, 0] * u[:, 1]))
    a = np.array([[suu, suv], [suv, svv]])
    b = 0.5 * np.array(
        [
            np.sum(u[:, 0] ** 3) + np.sum(u[:, 0] * u[:, 1] ** 2),
            np.sum(u[:, 1] ** 3) + np.sum(u[:, 1] * u[:, 0] ** 2),
        ]
    )

    # Scale-normalized singularity test: collinear points have a rank-1
    # scatter matrix.
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    scale = suu + svv
    if scale <= 0.0 or det <= _COLLINEAR_TOL * scale * scale:
        direction = _principal_direction(u)
        resid = float(np.sqrt(np.mean((u @ np.array([-direction[1], direction[0]])) ** 2)))
        return Arc(
            center=None,
            radius=math.inf,
            degenerate_line=True,
            direction=direction,
            anchor=mean,
            residual=resid,
        )

    sol = np.linalg.solve(a, b)
    center = sol + mean
    radius = float(np.sqrt(sol @ sol + scale / pts.shape[0]))
    dists = np.linalg.norm(pts - center, axis=1)
    resid = float(np.sqrt(np.mean((dists - radius) ** 2)))
    return Arc(center=center, radius=radius, residual=resid)


def _principal_direction(centered: np.ndarray) -> np.ndarray:
    cov = centered.T @ centered
    _, vecs = np.linalg.eigh(cov)
    direction = vecs[:, -1]
    # Orient along the first-to-last point ordering for a stable sign.
    span = centered[-1] - centered[0]
    if span @ direction < 0.0:
        direction = -direction
    return direction / np.linalg.norm(direction)


def project_onto_arc(arc: Arc, point: np.ndarray) -> np.ndarray:
    """Nearest point on the fitted circle (or degenerate line) to ``point``."""
    p = np.asarray(point, dtype=np.float64)
    if arc.degenerate_line:
        t = (p - arc.anchor) @ arc.direction
        return arc.anchor + t * arc.direction
    rel = p - arc.center
    dist = float(np.linalg.norm(rel))
    if dist <= 1e-9:
        raise AtCenter("point coincides with the circle center")
    return arc.center + arc.radius * rel / dist
