"""Planar polyline helpers shared by the simulator, perception and control."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def as_points(seq) -> np.ndarray:
    pts = np.asarray(seq, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of points, got shape {pts.shape}")
    return pts


def arc_lengths(pts: np.ndarray) -> np.ndarray:
    """Cumulative arc length at each vertex, starting at 0."""
    seg = np.hypot(*np.diff(pts, axis=0).T)
    return np.concatenate(([0.0], np.cumsum(seg)))


@dataclass(frozen=True)
class Projection:
    s: float            # arc length of the foot point
    lateral: float      # signed offset, positive to the left of travel direction
    distance: float     # unsigned distance to the foot point
    segment: int
    tangent: tuple[float, float]


def project(pts: np.ndarray, cum: np.ndarray, p) -> Projection:
    """Closest point on a polyline to ``p``."""
    a = pts[:-1]
    d = pts[1:] - a
    seg_len2 = np.einsum("ij,ij->i", d, d)
    rel = np.asarray(p, dtype=float) - a
    u = np.clip(np.einsum("ij,ij->i", rel, d) / seg_len2, 0.0, 1.0)
    foot = a + d * u[:, None]
    dist2 = np.einsum("ij,ij->i", np.asarray(p) - foot, np.asarray(p) - foot)
    i = int(np.argmin(dist2))
    seg_len = math.sqrt(seg_len2[i])
    tx, ty = d[i] / seg_len
    rx, ry = rel[i]
    distance = math.sqrt(dist2[i])
    # beyond a vertex the cross product only carries the side, not the offset
    lateral = math.copysign(distance, tx * ry - ty * rx)
    return Projection(
        s=float(cum[i] + u[i] * seg_len),
        lateral=float(lateral),
        distance=float(distance),
        segment=i,
        tangent=(float(tx), float(ty)),
    )


def point_at(pts: np.ndarray, cum: np.ndarray, s: float) -> tuple[np.ndarray, float]:
    """Point and heading at arc length ``s`` (clamped to the polyline)."""
    s = min(max(s, 0.0), float(cum[-1]))
    i = int(np.searchsorted(cum, s, side="right") - 1)
    i = min(max(i, 0), len(pts) - 2)
    d = pts[i + 1] - pts[i]
    seg = float(cum[i + 1] - cum[i])
    u = (s - cum[i]) / seg
    return pts[i] + d * u, math.atan2(d[1], d[0])


def densify(waypoints, spacing: float = 1.0) -> np.ndarray:
    """Resample a piecewise-linear route at fixed arc-length spacing.

    Both endpoints are kept; the final gap may be shorter than ``spacing``.
    Repeated consecutive waypoints are ignored.
    """
    pts = as_points(waypoints)
    if len(pts) < 2:
        raise ValueError("a route needs at least 2 waypoints")
    keep = [0] + [i for i in range(1, len(pts)) if not np.array_equal(pts[i], pts[i - 1])]
    pts = pts[keep]
    if len(pts) < 2:
        return np.vstack([pts[0], pts[0]])
    cum = arc_lengths(pts)
    total = float(cum[-1])
    n_full = int(math.floor(total / spacing + 1e-9))
    stations = [k * spacing for k in range(n_full + 1)]
    if total - stations[-1] > 1e-9:
        stations.append(total)
    out = np.empty((len(stations), 2))
    for j, s in enumerate(stations):
        out[j], _ = point_at(pts, cum, s)
    out[-1] = pts[-1]
    return out
