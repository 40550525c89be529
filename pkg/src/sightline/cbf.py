"""Barrier values and generalized gradients.

Visibility barrier: h(t, x) = -d(y(t), F(x)) with F(x) the occluded view
polygon; h > 0 iff the evader is visible. The view distance d*(x) has no
analytic state gradient, so it is estimated by least-squares finite
differences over a spanning set of pose perturbations; at creases the
one-sided estimates disagree and a finite vertex set standing in for the
generalized gradient is returned instead of a single vector.

Safety barrier: distance to the nearest scan points, with per-point
direction vectors lifted to state space through the position Jacobian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .agents import PursuerState
from .fov import FovParams, FovPolygon, fov_signed_distance, nearest_boundary_point, occluded_fov
from .world import OccupancyGrid, PointCloud

STATE_DIM = 3


@dataclass
class GradientSet:
    """Finite vertex set for a barrier's state gradient, plus d/dt term.

    vertices: candidate gradients (each length 3: d/dx, d/dy, d/dtheta);
    a single vertex means the point was classified as smooth. time_term is
    the dh/dt candidate shared by all vertices; value is the barrier value.
    """

    vertices: list[np.ndarray]
    time_term: float
    value: float

    def __post_init__(self):
        if len(self.vertices) == 0:
            raise ValueError("GradientSet needs at least one vertex")
        self.vertices = [np.asarray(v, dtype=float).reshape(STATE_DIM) for v in self.vertices]

    @property
    def smooth(self) -> bool:
        return len(self.vertices) == 1


@dataclass
class PerturbationScheme:
    """Pose perturbations for finite-difference gradient estimation.

    Default: the 6 axis-aligned +/- eps perturbations (eps meters for x, y
    and eps radians for theta). eps should be at least twice the grid
    resolution so ray-quantization noise stays below the signal.
    """

    eps: float = 0.05
    directions: np.ndarray = None
    smooth_tol: float = 0.1
    nullspace_samples: int = 4

    def __post_init__(self):
        if self.directions is None:
            eye = np.eye(STATE_DIM)
            self.directions = np.vstack([eye, -eye]) * self.eps
        self.directions = np.asarray(self.directions, dtype=float).reshape(-1, STATE_DIM)
        if len(self.directions) < STATE_DIM:
            raise ValueError("need at least 3 perturbation directions")
        if np.linalg.matrix_rank(self.directions) < STATE_DIM:
            raise ValueError("perturbation directions must span the state space")

    @staticmethod
    def for_grid(grid: OccupancyGrid, eps: float = 0.05, **kw) -> "PerturbationScheme":
        return PerturbationScheme(eps=max(eps, 2.0 * grid.resolution), **kw)


def visibility_value(grid: OccupancyGrid, x: PursuerState, y,
                     params: FovParams) -> float:
    """h = -d(y, F(x)); positive iff the evader is inside the view."""
    return -fov_signed_distance(occluded_fov(grid, x, params), y)


def _view_distance(grid, x_arr, y, params) -> float:
    pose = PursuerState(x_arr[0], x_arr[1], x_arr[2])
    return fov_signed_distance(occluded_fov(grid, pose, params), y)


def visibility_gradient(grid: OccupancyGrid, x: PursuerState, y,
                        params: FovParams,
                        scheme: PerturbationScheme | None = None,
                        rng: np.random.Generator | None = None) -> GradientSet:
    """Least-squares finite-difference gradient of the view distance d*(x).

    Builds dd_i = d*(x + dx_i) - d*(x) over the scheme's directions and
    solves min_p ||C p - dd|| with C rows dx_i (scale-normalized). If the
    residual stays within smooth_tol (relative to eps) the single LS vertex
    is returned. Otherwise the point straddles a crease: the two-sided LS
    average is kept and joined by one-sided estimates (forward-only and
    backward-only subsets plus the formal nullspace term, which vanishes
    for spanning schemes), up to nullspace_samples extra vertices.

    The returned gradient is that of d*; negate for the barrier h = -d*.
    """
    if scheme is None:
        scheme = PerturbationScheme.for_grid(grid)
    x0 = x.as_array()
    d0 = _view_distance(grid, x0, y, params)
    C = scheme.directions
    dd = np.array([_view_distance(grid, x0 + dx, y, params) - d0 for dx in C])
    # scale-normalize rows so position and angle columns are comparable
    norms = np.linalg.norm(C, axis=1)
    Cn = C / norms[:, None]
    cn = dd / norms
    v0, *_ = np.linalg.lstsq(Cn, cn, rcond=None)
    residual = float(np.linalg.norm(Cn @ v0 - cn))
    value = d0
    if residual <= scheme.smooth_tol:
        return GradientSet([v0], 0.0, value)

    # crease: collect one-sided estimates from sign-split direction subsets
    pinv = np.linalg.pinv(Cn)
    proj = np.eye(STATE_DIM) - pinv @ Cn  # zero when directions span R^3
    verts = [v0]
    if rng is None:
        rng = np.random.default_rng(0)
    candidates = _one_sided_estimates(Cn, cn)
    for cand in candidates:
        n = rng.standard_normal(STATE_DIM)
        n /= np.linalg.norm(n)
        cand = cand + proj @ n
        if all(np.linalg.norm(cand - v) > 1e-9 for v in verts):
            verts.append(cand)
        if len(verts) >= scheme.nullspace_samples + 1:
            break
    return GradientSet(verts, 0.0, value)


def _one_sided_estimates(Cn: np.ndarray, cn: np.ndarray) -> list[np.ndarray]:
    """Candidate limiting gradients from maximal consistent direction subsets.

    For the default +/- axis scheme this yields the forward-only and
    backward-only difference quotients and their mixed sign patterns,
    ordered deterministically.
    """
    n_dir = len(Cn)
    out = []
    # primary split: directions with positive/negative first nonzero entry
    keys = np.array([1 if (row[np.argmax(np.abs(row) > 0)] > 0) else -1 for row in Cn])
    for sign in (1, -1):
        mask = keys == sign
        if mask.sum() >= STATE_DIM and np.linalg.matrix_rank(Cn[mask]) == STATE_DIM:
            v, *_ = np.linalg.lstsq(Cn[mask], cn[mask], rcond=None)
            out.append(v)
    # secondary: leave-one-out subsets, largest-residual direction first
    res = np.abs(Cn @ np.linalg.lstsq(Cn, cn, rcond=None)[0] - cn)
    for i in np.argsort(-res, kind="stable"):
        mask = np.ones(n_dir, dtype=bool)
        mask[i] = False
        if np.linalg.matrix_rank(Cn[mask]) == STATE_DIM:
            v, *_ = np.linalg.lstsq(Cn[mask], cn[mask], rcond=None)
            out.append(v)
    return out


def visibility_time_term(poly: FovPolygon, y, ydot) -> float:
    """d/dt of the view distance from evader motion: grad_y d . ydot.

    grad_y d = sign(d) (y - y*) / ||y - y*|| with y* the nearest boundary
    point; zero when y sits exactly on the boundary.
    """
    y = np.asarray(y, dtype=float)
    ydot = np.asarray(ydot, dtype=float)
    ystar = nearest_boundary_point(poly, y)
    diff = y - ystar
    dist = float(np.hypot(diff[0], diff[1]))
    if dist < 1e-12:
        return 0.0
    d = fov_signed_distance(poly, y)
    sign = -1.0 if d < 0 else 1.0
    return float(sign * np.dot(diff, ydot) / dist)


def visibility_barrier(grid: OccupancyGrid, x: PursuerState, y, ydot,
                       params: FovParams,
                       scheme: PerturbationScheme | None = None,
                       poly: FovPolygon | None = None) -> GradientSet:
    """Assemble the h-convention gradient set for the visibility barrier.

    h = -d*, so vertices and time term are the negated d* quantities and
    value is -d*(x).
    """
    if poly is None:
        poly = occluded_fov(grid, x, params)
    g = visibility_gradient(grid, x, y, params, scheme)
    w = -visibility_time_term(poly, y, ydot) if ydot is not None else 0.0
    return GradientSet([-v for v in g.vertices], w, -g.value)


# position Jacobian of the unicycle: phi(x) = (x, y)
_J_PHI = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def safety_cbf(cloud: PointCloud, x: PursuerState, n_nearest: int) -> GradientSet | None:
    """Point-cloud obstacle barrier from the N nearest scan points.

    value = min_j ||rho_j - p||; one vertex -J_phi^T g_j per retained point,
    where g_j is the unit direction from the pursuer to the point (the
    distance gradient is the negated direction). Static obstacles, so the
    time term is zero. An empty cloud means no constraint (None).
    """
    if len(cloud) == 0:
        return None
    p = np.array([x.x, x.y])
    diff = cloud.points - p
    dist = np.hypot(diff[:, 0], diff[:, 1])
    order = np.argsort(dist, kind="stable")[:max(1, n_nearest)]
    verts = []
    for j in order:
        if dist[j] < 1e-12:
            continue
        g = diff[j] / dist[j]
        verts.append(-_J_PHI.T @ g)
    if not verts:
        verts = [np.zeros(STATE_DIM)]
    return GradientSet(verts, 0.0, float(dist[order[0]]))
