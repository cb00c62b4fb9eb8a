"""Arc-length parametrised polylines."""
from __future__ import annotations

import math

import numpy as np


class Path:
    """Polyline with arc-length lookup, smooth tangents and projection.

    Tangents are blended linearly between vertex tangents so that offset
    curves stay continuous across vertices.  Queries outside ``[0, length]``
    extrapolate along the end tangents.
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-9])
        pts = pts[keep]
        if len(pts) < 2:
            raise ValueError("path needs two distinct points")
        self.points = pts
        seg = np.diff(pts, axis=0)
        self.seg_len = np.linalg.norm(seg, axis=1)
        self.seg_dir = seg / self.seg_len[:, None]
        self.s = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        vt = np.empty_like(pts)
        vt[0] = self.seg_dir[0]
        vt[-1] = self.seg_dir[-1]
        mid = self.seg_dir[:-1] + self.seg_dir[1:]
        vt[1:-1] = mid / np.linalg.norm(mid, axis=1, keepdims=True)
        self.vertex_tangent = vt

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def _locate(self, s):
        s = np.asarray(s, dtype=np.float64)
        i = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.seg_len) - 1)
        return i, s - self.s[i]

    def point(self, s):
        i, u = self._locate(s)
        return self.points[i] + u[..., None] * self.seg_dir[i]

    def tangent(self, s):
        i, u = self._locate(s)
        w = np.clip(u / self.seg_len[i], 0.0, 1.0)[..., None]
        t = (1 - w) * self.vertex_tangent[i] + w * self.vertex_tangent[i + 1]
        return t / np.linalg.norm(t, axis=-1, keepdims=True)

    def normal(self, s):
        """Unit normal pointing to the left of the travel direction."""
        t = self.tangent(s)
        return np.stack([-t[..., 1], t[..., 0]], axis=-1)

    def offset_point(self, s, d):
        return self.point(s) + np.asarray(d, dtype=np.float64)[..., None] * self.normal(s)

    def project(self, p):
        """Arc length and signed lateral offset (left positive) of the nearest point."""
        p = np.asarray(p, dtype=np.float64)
        rel = p - self.points[:-1]
        u = np.clip(np.sum(rel * self.seg_dir, axis=1), 0.0, self.seg_len)
        foot = self.points[:-1] + u[:, None] * self.seg_dir
        dist = np.linalg.norm(p - foot, axis=1)
        k = int(np.argmin(dist))
        d = self.seg_dir[k]
        side = d[0] * (p[1] - foot[k][1]) - d[1] * (p[0] - foot[k][0])
        return float(self.s[k] + u[k]), math.copysign(float(dist[k]), side) if dist[k] > 0 else 0.0


def line(p0, p1, spacing=5.0):
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(1, math.ceil(np.linalg.norm(p1 - p0) / spacing))
    return p0 + np.linspace(0.0, 1.0, n + 1)[:, None] * (p1 - p0)


def arc(center, radius, a0, a1, spacing=1.0):
    n = max(2, math.ceil(abs(a1 - a0) * radius / spacing))
    a = np.linspace(a0, a1, n + 1)
    return np.asarray(center, float) + radius * np.stack([np.cos(a), np.sin(a)], axis=1)


def connector(p0, h0, p1, h1, spacing=0.5):
    """Cubic Bezier from (p0, heading h0) to (p1, heading h1).

    Handle length 0.5523 * radius reproduces a quarter circle for 90 degree
    turns between perpendicular lanes.
    """
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    u0 = np.array([math.cos(h0), math.sin(h0)])
    u1 = np.array([math.cos(h1), math.sin(h1)])
    chord = float(np.linalg.norm(p1 - p0))
    turn = abs((h1 - h0 + math.pi) % (2 * math.pi) - math.pi)
    if turn < 1e-6:
        k = chord / 3.0
    else:
        radius = chord / (2 * math.sin(turn / 2))
        k = 4.0 / 3.0 * math.tan(turn / 4) * radius
    c0, c1 = p0 + k * u0, p1 - k * u1
    n = max(8, math.ceil(chord * 1.6 / spacing))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return (1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * c0 + 3 * (1 - t) * t**2 * c1 + t**3 * p1
