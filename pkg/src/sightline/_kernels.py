"""Numba-compiled inner loops: grid ray traversal and polygon distance.

The grid is a row-major uint8 array occ[iy, ix] (1 = occupied) with cell
(0, 0) corner at world (ox, oy) and square cells of side res. Rays are
marched with exact cell-crossing stepping (Amanatides & Woo), so thin
walls cannot be tunneled through and hit points land exactly on cell
boundaries.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def ray_range(occ, ox, oy, res, px, py, dx, dy, max_range):
    """Distance along (dx, dy) from (px, py) to the first occupied cell.

    Returns max_range + 1 when nothing is hit within max_range. The start
    cell is not reported as a hit (callers reject poses inside obstacles).
    """
    ny, nx = occ.shape
    ix = int(np.floor((px - ox) / res))
    iy = int(np.floor((py - oy) / res))

    if dx > 0.0:
        step_x = 1
        t_max_x = ((ix + 1) * res + ox - px) / dx
        t_dx = res / dx
    elif dx < 0.0:
        step_x = -1
        t_max_x = (ix * res + ox - px) / dx
        t_dx = -res / dx
    else:
        step_x = 0
        t_max_x = np.inf
        t_dx = np.inf
    if dy > 0.0:
        step_y = 1
        t_max_y = ((iy + 1) * res + oy - py) / dy
        t_dy = res / dy
    elif dy < 0.0:
        step_y = -1
        t_max_y = (iy * res + oy - py) / dy
        t_dy = -res / dy
    else:
        step_y = 0
        t_max_y = np.inf
        t_dy = np.inf

    while True:
        if t_max_x < t_max_y:
            t = t_max_x
            ix += step_x
            t_max_x += t_dx
        else:
            t = t_max_y
            iy += step_y
            t_max_y += t_dy
        if t > max_range:
            return max_range + 1.0
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny:
            # left the mapped area; outside is free space
            return max_range + 1.0
        if occ[iy, ix] != 0:
            return t


@njit(cache=True)
def ray_ranges(occ, ox, oy, res, px, py, angles, max_range):
    """Vector of first-hit distances for rays at the given world angles."""
    out = np.empty(angles.shape[0])
    for i in range(angles.shape[0]):
        out[i] = ray_range(occ, ox, oy, res, px, py,
                           np.cos(angles[i]), np.sin(angles[i]), max_range)
    return out


@njit(cache=True)
def segment_blocked(occ, ox, oy, res, x0, y0, x1, y1):
    """True if the open segment (x0,y0)->(x1,y1) enters an occupied cell.

    The start cell itself is not checked, matching ray_range semantics.
    """
    dx = x1 - x0
    dy = y1 - y0
    length = np.sqrt(dx * dx + dy * dy)
    if length == 0.0:
        return False
    r = ray_range(occ, ox, oy, res, x0, y0, dx / length, dy / length, length)
    return r <= length


@njit(cache=True)
def polygon_signed_distance(vx, vy, qx, qy):
    """Signed distance from (qx, qy) to the closed polygon (vx, vy).

    Negative inside (even-odd rule), positive outside; magnitude is the
    exact minimum distance over boundary segments. Also returns the
    nearest boundary point.
    """
    n = vx.shape[0]
    best = np.inf
    bx = vx[0]
    by = vy[0]
    inside = False
    j = n - 1
    for i in range(n):
        xi = vx[i]
        yi = vy[i]
        xj = vx[j]
        yj = vy[j]
        # even-odd crossing test
        if (yi > qy) != (yj > qy):
            x_cross = xi + (qy - yi) * (xj - xi) / (yj - yi)
            if qx < x_cross:
                inside = not inside
        # distance to segment j->i
        ex = xi - xj
        ey = yi - yj
        ee = ex * ex + ey * ey
        if ee > 0.0:
            tproj = ((qx - xj) * ex + (qy - yj) * ey) / ee
            if tproj < 0.0:
                tproj = 0.0
            elif tproj > 1.0:
                tproj = 1.0
            cx = xj + tproj * ex
            cy = yj + tproj * ey
        else:
            cx = xj
            cy = yj
        d = np.sqrt((qx - cx) ** 2 + (qy - cy) ** 2)
        if d < best:
            best = d
            bx = cx
            by = cy
        j = i
    if inside:
        return -best, bx, by
    return best, bx, by


@njit(cache=True)
def point_in_polygon(vx, vy, qx, qy):
    """Even-odd point-in-polygon test (boundary points are unreliable)."""
    n = vx.shape[0]
    inside = False
    j = n - 1
    for i in range(n):
        if (vy[i] > qy) != (vy[j] > qy):
            x_cross = vx[i] + (qy - vy[i]) * (vx[j] - vx[i]) / (vy[j] - vy[i])
            if qx < x_cross:
                inside = not inside
        j = i
    return inside


def warmup(verbose: bool = False):
    """Force-compile all kernels against a tiny grid (done once per process)."""
    occ = np.zeros((2, 2), dtype=np.uint8)
    occ[1, 1] = 1
    ray_range(occ, 0.0, 0.0, 1.0, 0.5, 0.5, 1.0, 0.0, 3.0)
    ray_ranges(occ, 0.0, 0.0, 1.0, 0.5, 0.5, np.array([0.0, 1.0]), 3.0)
    segment_blocked(occ, 0.0, 0.0, 1.0, 0.5, 0.5, 1.9, 1.9)
    vx = np.array([0.0, 1.0, 1.0, 0.0])
    vy = np.array([0.0, 0.0, 1.0, 1.0])
    polygon_signed_distance(vx, vy, 0.5, 0.5)
    point_in_polygon(vx, vy, 0.5, 0.5)
    if verbose:
        print("kernels compiled")
