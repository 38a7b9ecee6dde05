"""Arc-length parameterized polylines (lane centerlines, walker paths)."""

from __future__ import annotations

import numpy as np


class Polyline:
    """Piecewise-linear curve with O(1) arc-length queries."""

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError(f"polyline needs (N>=2, 2) points, got {pts.shape}")
        seg = np.diff(pts, axis=0)
        seg_len = np.linalg.norm(seg, axis=1)
        keep = seg_len > 1e-9
        if not np.all(keep):
            pts = np.concatenate([pts[:1], pts[1:][keep]], axis=0)
            seg = np.diff(pts, axis=0)
            seg_len = np.linalg.norm(seg, axis=1)
        self.points = pts
        self.seg_dir = seg / seg_len[:, None]
        self.cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.length = float(self.cum[-1])

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum, s, side="right") - 1)
        i = min(i, len(self.seg_dir) - 1)
        return self.points[i] + (s - self.cum[i]) * self.seg_dir[i]

    def heading_at(self, s: float) -> float:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum, s, side="right") - 1)
        i = min(max(i, 0), len(self.seg_dir) - 1)
        d = self.seg_dir[i]
        return float(np.arctan2(d[1], d[0]))

    def direction_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum, s, side="right") - 1)
        i = min(max(i, 0), len(self.seg_dir) - 1)
        return self.seg_dir[i]

    def project(self, point: np.ndarray, hint: int | None = None, window: int = 40):
        """Project a point onto the polyline.

        Returns (s, signed_lateral, segment_index). ``hint`` restricts the
        search to segments near a previous match so that self-overlapping
        routes keep a monotone progress estimate.
        """
        p = np.asarray(point, dtype=np.float64)
        n = len(self.seg_dir)
        if hint is None:
            lo, hi = 0, n
        else:
            lo = max(0, hint - 4)
            hi = min(n, hint + window)
        a = self.points[lo:hi]
        d = self.seg_dir[lo:hi]
        seg_len = self.cum[lo + 1 : hi + 1] - self.cum[lo:hi]
        rel = p - a
        t = np.clip(np.einsum("ij,ij->i", rel, d), 0.0, seg_len)
        foot = a + t[:, None] * d
        dist2 = np.einsum("ij,ij->i", p - foot, p - foot)
        k = int(np.argmin(dist2))
        i = lo + k
        s = float(self.cum[i] + t[k])
        rp = p - foot[k]
        lateral = float(d[k, 0] * rp[1] - d[k, 1] * rp[0])
        return s, lateral, i

    def max_curvature(self, s0: float, s1: float) -> float:
        """Upper-bound curvature estimate over [s0, s1] from heading changes."""
        i0 = int(np.searchsorted(self.cum, max(s0, 0.0), side="right") - 1)
        i1 = int(np.searchsorted(self.cum, min(s1, self.length), side="right") - 1)
        i0 = min(max(i0, 0), len(self.seg_dir) - 1)
        i1 = min(max(i1, 0), len(self.seg_dir) - 1)
        if i1 <= i0:
            return 0.0
        d = self.seg_dir[i0 : i1 + 1]
        dots = np.clip(np.einsum("ij,ij->i", d[:-1], d[1:]), -1.0, 1.0)
        dtheta = np.arccos(dots)
        ds = self.cum[i0 + 1 : i1 + 1] - self.cum[i0:i1]
        ds = np.maximum(ds, 1e-6)
        return float(np.max(dtheta / ds)) if len(dtheta) else 0.0


def quad_bezier(p0: np.ndarray, c: np.ndarray, p1: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    """Quadratic Bezier sampled at roughly ``spacing`` meters."""
    chord = np.linalg.norm(p1 - p0) + np.linalg.norm(c - p0) + np.linalg.norm(p1 - c)
    n = max(int(chord / spacing), 4)
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * c + t**2 * p1


def resample(points: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    """Resample a polyline at fixed arc-length spacing (endpoints kept)."""
    line = Polyline(points)
    n = max(int(round(line.length / spacing)), 1)
    ss = np.linspace(0.0, line.length, n + 1)
    return np.array([line.point_at(s) for s in ss])
