"""Field-of-view geometry.

The sensor's unoccluded footprint is a circular sector (range, half-angle)
rigidly attached to the pursuer pose. Occlusion clips it by ray casting in
the occupancy grid, producing a star-shaped polygon about the apex; signed
distance to that polygon is the quantity the visibility barrier is built
from (negative inside the view, positive outside).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .agents import PursuerState
from .world import OccupancyGrid


@dataclass(frozen=True)
class FovParams:
    """Sector footprint: range (m), half_angle (rad), ray count."""

    range: float
    half_angle: float
    n_rays: int = 128

    def __post_init__(self):
        if self.range <= 0:
            raise ValueError("range must be positive")
        if not (0 < self.half_angle <= math.pi):
            raise ValueError("half_angle must be in (0, pi]")
        if self.n_rays < 8:
            raise ValueError("need at least 8 rays")


@dataclass
class FovPolygon:
    """Occluded view region: apex followed by ray endpoints in CCW order.

    The boundary closes back to the apex, so the polygon vertex array used
    for distance queries is [apex, v_0, ..., v_{n-1}].
    """

    apex: np.ndarray            # (2,)
    vertices: np.ndarray        # (n, 2) ray endpoints, CCW
    ranges: np.ndarray          # (n,) truncation distance per ray
    angles: np.ndarray          # (n,) world ray angles

    def vertex_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        vx = np.concatenate([[self.apex[0]], self.vertices[:, 0]])
        vy = np.concatenate([[self.apex[1]], self.vertices[:, 1]])
        return vx, vy

    @property
    def n_vertices(self) -> int:
        return len(self.vertices) + 1

    def is_degenerate(self) -> bool:
        return len(self.vertices) < 2 or bool(np.all(self.ranges < 1e-12))

    def area(self) -> float:
        vx, vy = self.vertex_arrays()
        return 0.5 * abs(float(np.dot(vx, np.roll(vy, -1)) - np.dot(vy, np.roll(vx, -1))))


def occluded_fov(grid: OccupancyGrid, pose: PursuerState, params: FovParams) -> FovPolygon:
    """Clip the pose-anchored sector by the grid.

    Rays at n uniform angles over [theta - half_angle, theta + half_angle]
    are truncated at min(range, first obstacle hit); the polygon is the apex
    followed by the truncated endpoints in angular order.
    """
    if grid.is_occupied_cell((pose.x, pose.y)):
        raise ValueError("FoV apex is inside an obstacle")
    angles = pose.theta + np.linspace(-params.half_angle, params.half_angle, params.n_rays)
    ranges = _kernels.ray_ranges(grid.cells, grid.origin[0], grid.origin[1],
                                 grid.resolution, pose.x, pose.y, angles, params.range)
    np.minimum(ranges, params.range, out=ranges)
    apex = np.array([pose.x, pose.y])
    vertices = apex + ranges[:, None] * np.column_stack([np.cos(angles), np.sin(angles)])
    return FovPolygon(apex, vertices, ranges, angles)


def fov_signed_distance(poly: FovPolygon, q) -> float:
    """Signed distance from q to the view polygon boundary.

    Negative strictly inside, positive outside, zero on the boundary; the
    magnitude is the exact minimum distance over boundary segments. A
    degenerate polygon is an empty view: q is outside at its distance to
    the apex.
    """
    q = np.asarray(q, dtype=float)
    if poly.is_degenerate():
        return float(np.hypot(q[0] - poly.apex[0], q[1] - poly.apex[1]))
    vx, vy = poly.vertex_arrays()
    d, _, _ = _kernels.polygon_signed_distance(vx, vy, float(q[0]), float(q[1]))
    return float(d)


def nearest_boundary_point(poly: FovPolygon, q) -> np.ndarray:
    """Closest point on the view polygon boundary to q."""
    q = np.asarray(q, dtype=float)
    if poly.is_degenerate():
        return poly.apex.copy()
    vx, vy = poly.vertex_arrays()
    _, bx, by = _kernels.polygon_signed_distance(vx, vy, float(q[0]), float(q[1]))
    return np.array([bx, by])


def contains(poly: FovPolygon, q) -> bool:
    """Visibility test: true iff the signed distance to the view is <= 0.

    Boundary points count as visible (the view is a closed set).
    """
    return fov_signed_distance(poly, q) <= 0.0
