"""Occupancy-grid world model: map I/O, exact obstacle distance, simulated LiDAR.

Occupied cells are closed axis-aligned squares; the obstacle set is their
union. Distance queries are exact (not grid-quantized): outside the union
the distance is the minimum over occupied squares, found with a KD-tree on
cell centers plus an exact refinement pass; inside, it is the distance to
the union's boundary faces.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import _kernels
from .agents import PursuerState

_HALF_DIAG = math.sqrt(2.0) / 2.0


class MapFormatError(ValueError):
    """Raised on malformed map documents or generator specs."""


@dataclass
class PointCloud:
    """2D points in world coordinates (meters)."""

    points: np.ndarray  # (n, 2)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)

    def __len__(self):
        return len(self.points)


class OccupancyGrid:
    """Binary occupancy grid, immutable after construction.

    cells[iy, ix] covers world [ox + ix*res, ox + (ix+1)*res] x
    [oy + iy*res, oy + (iy+1)*res]; row 0 is the minimum-y row.
    """

    def __init__(self, resolution: float, origin: tuple[float, float], cells: np.ndarray):
        if resolution <= 0:
            raise MapFormatError(f"resolution must be positive, got {resolution}")
        cells = np.asarray(cells, dtype=np.uint8)
        if cells.ndim != 2:
            raise MapFormatError("cells must be a 2D raster")
        self.resolution = float(resolution)
        self.origin = (float(origin[0]), float(origin[1]))
        self.cells = cells
        self.cells.setflags(write=False)
        self.height, self.width = cells.shape
        # sentinel distance for "no obstacle anywhere": the grid diagonal
        self.max_distance = math.hypot(self.width * resolution, self.height * resolution)
        self._queries = None

    def __eq__(self, other):
        return (isinstance(other, OccupancyGrid)
                and self.resolution == other.resolution
                and self.origin == other.origin
                and self.cells.shape == other.cells.shape
                and bool(np.all(self.cells == other.cells)))

    @property
    def n_occupied(self) -> int:
        return int(self.cells.sum())

    def world_extent(self) -> tuple[float, float, float, float]:
        ox, oy = self.origin
        return ox, oy, ox + self.width * self.resolution, oy + self.height * self.resolution

    def cell_of(self, p) -> tuple[int, int]:
        ix = int(math.floor((p[0] - self.origin[0]) / self.resolution))
        iy = int(math.floor((p[1] - self.origin[1]) / self.resolution))
        return ix, iy

    def cell_center(self, ix: int, iy: int) -> np.ndarray:
        return np.array([self.origin[0] + (ix + 0.5) * self.resolution,
                         self.origin[1] + (iy + 0.5) * self.resolution])

    def in_bounds(self, p) -> bool:
        x0, y0, x1, y1 = self.world_extent()
        return x0 <= p[0] <= x1 and y0 <= p[1] <= y1

    def is_occupied_cell(self, p) -> bool:
        ix, iy = self.cell_of(p)
        if 0 <= ix < self.width and 0 <= iy < self.height:
            return bool(self.cells[iy, ix])
        return False

    def occupied_aabbs(self) -> np.ndarray:
        """(n, 4) array of [xmin, ymin, xmax, ymax] per occupied cell."""
        iy, ix = np.nonzero(self.cells)
        res = self.resolution
        ox, oy = self.origin
        return np.column_stack([ox + ix * res, oy + iy * res,
                                ox + (ix + 1) * res, oy + (iy + 1) * res])

    # -- distance query machinery (lazy, grid is immutable) -----------------

    def _query_structs(self):
        if self._queries is None:
            self._queries = _DistanceQueries(self)
        return self._queries


class _DistanceQueries:
    """Precomputed structures for exact and banded distance queries."""

    def __init__(self, grid: OccupancyGrid):
        self.grid = grid
        res = grid.resolution
        iy, ix = np.nonzero(grid.cells)
        self.n_occ = len(ix)
        if self.n_occ:
            centers = np.column_stack([grid.origin[0] + (ix + 0.5) * res,
                                       grid.origin[1] + (iy + 0.5) * res])
            self.center_tree = cKDTree(centers)
            self.aabbs = np.column_stack([grid.origin[0] + ix * res,
                                          grid.origin[1] + iy * res,
                                          grid.origin[0] + (ix + 1) * res,
                                          grid.origin[1] + (iy + 1) * res])
            # cell-center EDT of the free region, in meters, for banded tests
            occ = grid.cells.astype(bool)
            self.edt = ndimage.distance_transform_edt(~occ) * res
            self._boundary = None
        else:
            self.center_tree = None
            self.edt = None
            self._boundary = None

    def boundary_segments(self) -> np.ndarray:
        """(n, 4) segments [x0, y0, x1, y1] of the occupied-union boundary.

        A face belongs to the boundary when exactly one of its two adjacent
        cells is occupied (grid-exterior neighbors count as free).
        """
        if self._boundary is None:
            g = self.grid
            occ = g.cells.astype(bool)
            res = g.resolution
            ox, oy = g.origin
            pad = np.pad(occ, 1, constant_values=False)
            segs = []
            # vertical faces: between (ix-1, iy) and (ix, iy)
            diff_v = pad[1:-1, 1:] != pad[1:-1, :-1]
            iy, ixe = np.nonzero(diff_v)
            for y, xe in zip(iy, ixe):
                x = ox + xe * res
                segs.append((x, oy + y * res, x, oy + (y + 1) * res))
            diff_h = pad[1:, 1:-1] != pad[:-1, 1:-1]
            iye, ix = np.nonzero(diff_h)
            for ye, x in zip(iye, ix):
                y = oy + ye * res
                segs.append((ox + x * res, y, ox + (x + 1) * res, y))
            self._boundary = np.asarray(segs, dtype=float).reshape(-1, 4)
        return self._boundary

    def outside_distance(self, p: np.ndarray) -> tuple[float, np.ndarray]:
        """Exact distance to the nearest occupied square for p in free space."""
        d_center, _ = self.center_tree.query(p)
        # every square whose true distance could beat the candidate has its
        # center within d_center + half-diagonal
        r = d_center + _HALF_DIAG * self.grid.resolution + 1e-12
        idx = self.center_tree.query_ball_point(p, r)
        boxes = self.aabbs[idx]
        cx = np.clip(p[0], boxes[:, 0], boxes[:, 2])
        cy = np.clip(p[1], boxes[:, 1], boxes[:, 3])
        d = np.hypot(p[0] - cx, p[1] - cy)
        j = int(np.argmin(d))
        return float(d[j]), np.array([cx[j], cy[j]])

    def inside_distance(self, p: np.ndarray) -> tuple[float, np.ndarray]:
        """Distance from p (inside the union) to the union boundary."""
        segs = self.boundary_segments()
        ex = segs[:, 2] - segs[:, 0]
        ey = segs[:, 3] - segs[:, 1]
        tt = ((p[0] - segs[:, 0]) * ex + (p[1] - segs[:, 1]) * ey) / (ex * ex + ey * ey)
        tt = np.clip(tt, 0.0, 1.0)
        cx = segs[:, 0] + tt * ex
        cy = segs[:, 1] + tt * ey
        d = np.hypot(p[0] - cx, p[1] - cy)
        j = int(np.argmin(d))
        return float(d[j]), np.array([cx[j], cy[j]])

    def clearance_at_least(self, p: np.ndarray, r: float) -> bool:
        """Fast 'distance(p) >= r' test: EDT band first, exact on the fence."""
        g = self.grid
        if self.n_occ == 0:
            return True
        ix, iy = g.cell_of(p)
        if not (0 <= ix < g.width and 0 <= iy < g.height):
            return True  # outside the mapped area: free by convention
        if g.cells[iy, ix]:
            return False
        e = self.edt[iy, ix]
        band = math.sqrt(2.0) * g.resolution
        if e - band >= r:
            return True
        if e + band < r:
            return False
        d, _ = self.outside_distance(np.asarray(p, dtype=float))
        return d >= r


def obstacle_distance(grid: OccupancyGrid, p) -> tuple[float, np.ndarray | None]:
    """Signed distance from p to the boundary of the occupied-cell union.

    Positive outside obstacles, negative inside; `nearest` is a closest
    boundary point. An empty grid yields the declared no-obstacle sentinel
    (grid diagonal) with nearest None.
    """
    p = np.asarray(p, dtype=float)
    if not grid.in_bounds(p):
        raise ValueError(f"query point {p} outside grid bounds")
    q = grid._query_structs()
    if q.n_occ == 0:
        return grid.max_distance, None
    if grid.is_occupied_cell(p):
        d, nearest = q.inside_distance(p)
        return (-d if d > 0 else 0.0), nearest
    d, nearest = q.outside_distance(p)
    return d, nearest


def clearance(grid: OccupancyGrid, p, r: float) -> bool:
    """True when the obstacle distance at p is at least r (total: out-of-bounds
    points count as clear)."""
    return grid._query_structs().clearance_at_least(np.asarray(p, dtype=float), r)


def simulate_lidar(grid: OccupancyGrid, pose: PursuerState, n_rays: int,
                   max_range: float) -> PointCloud:
    """Range scan: n_rays rays at uniform world angles over [-pi, pi).

    Each ray is marched through the grid; a point is emitted exactly at the
    first occupied-cell boundary within max_range. Misses emit nothing.
    """
    if grid.is_occupied_cell((pose.x, pose.y)):
        raise ValueError("lidar pose is inside an obstacle")
    angles = -math.pi + 2.0 * math.pi * np.arange(n_rays) / n_rays
    ranges = _kernels.ray_ranges(grid.cells, grid.origin[0], grid.origin[1],
                                 grid.resolution, pose.x, pose.y, angles, max_range)
    hit = ranges <= max_range
    pts = np.column_stack([pose.x + ranges[hit] * np.cos(angles[hit]),
                           pose.y + ranges[hit] * np.sin(angles[hit])])
    return PointCloud(pts)


# -- map document I/O --------------------------------------------------------

_HEADER_RE = {
    "resolution": re.compile(r"^resolution:\s*(\S+)\s*$"),
    "origin": re.compile(r"^origin:\s*(\S+)\s+(\S+)\s*$"),
    "size": re.compile(r"^size:\s*(\d+)\s+(\d+)\s*$"),
}


def load_map(text: str) -> OccupancyGrid:
    """Parse the plain-text map document.

    Header: `resolution: <float>`, `origin: <float> <float>`,
    `size: <width> <height>`; then <height> raster rows of <width> chars,
    '#' occupied and '.' free, first raster row = minimum-y row.
    """
    lines = [ln for ln in text.splitlines() if ln.strip() != ""]
    header: dict[str, tuple] = {}
    idx = 0
    while idx < len(lines) and len(header) < 3:
        ln = lines[idx].strip()
        for key, rx in _HEADER_RE.items():
            m = rx.match(ln)
            if m:
                if key in header:
                    raise MapFormatError(f"duplicate header line {key!r}")
                header[key] = m.groups()
                break
        else:
            raise MapFormatError(f"unrecognized header line {ln!r}")
        idx += 1
    if len(header) != 3:
        raise MapFormatError("map document missing resolution/origin/size header")
    try:
        resolution = float(header["resolution"][0])
        origin = (float(header["origin"][0]), float(header["origin"][1]))
        width, height = int(header["size"][0]), int(header["size"][1])
    except ValueError as e:
        raise MapFormatError(f"bad header value: {e}") from e
    if resolution <= 0:
        raise MapFormatError(f"resolution must be positive, got {resolution}")
    raster = lines[idx:]
    if len(raster) != height:
        raise MapFormatError(f"expected {height} raster rows, got {len(raster)}")
    cells = np.zeros((height, width), dtype=np.uint8)
    for iy, row in enumerate(raster):
        row = row.rstrip()
        if len(row) != width:
            raise MapFormatError(f"raster row {iy} has {len(row)} chars, expected {width}")
        for ix, ch in enumerate(row):
            if ch == "#":
                cells[iy, ix] = 1
            elif ch != ".":
                raise MapFormatError(f"bad raster character {ch!r} at row {iy}")
    return OccupancyGrid(resolution, origin, cells)


def dump_map(grid: OccupancyGrid) -> str:
    """Inverse of load_map; round trips bit-exactly."""
    lines = [f"resolution: {grid.resolution!r}",
             f"origin: {grid.origin[0]!r} {grid.origin[1]!r}",
             f"size: {grid.width} {grid.height}"]
    for iy in range(grid.height):
        lines.append("".join("#" if grid.cells[iy, ix] else "." for ix in range(grid.width)))
    return "\n".join(lines) + "\n"


_GEN_RE = re.compile(r"^\s*(\w+)\s*\((.*)\)\s*$")


def _parse_length(tok: str) -> float:
    tok = tok.strip()
    if tok.endswith("m"):
        tok = tok[:-1]
    return float(tok)


def generate_map(spec: str) -> OccupancyGrid:
    """Build a grid from a generator spec string.

    pillars(n, pillar_size, extent[, res=<m>]) -- n square pillars (n must be
    a perfect square) on a sqrt(n) x sqrt(n) lattice in an extent x extent
    map; default res = pillar_size / 10 so pillars are cell-aligned.
    empty(extent[, res=<m>]) -- obstacle-free extent x extent map.
    """
    m = _GEN_RE.match(spec)
    if not m:
        raise MapFormatError(f"bad generator spec {spec!r}")
    name, argstr = m.group(1), m.group(2)
    args, kwargs = [], {}
    for tok in filter(None, (t.strip() for t in argstr.split(","))):
        if "=" in tok:
            k, v = tok.split("=", 1)
            kwargs[k.strip()] = _parse_length(v)
        else:
            args.append(tok)
    if name == "empty":
        if len(args) != 1:
            raise MapFormatError("empty() takes one extent argument")
        extent = _parse_length(args[0])
        res = float(kwargs.pop("res", extent / 400.0))
        if kwargs:
            raise MapFormatError(f"unknown generator options {sorted(kwargs)}")
        n = int(round(extent / res))
        return OccupancyGrid(res, (0.0, 0.0), np.zeros((n, n), dtype=np.uint8))
    if name == "pillars":
        if len(args) != 3:
            raise MapFormatError("pillars() takes (count, pillar_size, extent)")
        count = int(_parse_length(args[0]))
        pillar = _parse_length(args[1])
        extent = _parse_length(args[2])
        side = int(round(math.sqrt(count)))
        if side * side != count:
            raise MapFormatError(f"pillar count {count} is not a perfect square")
        res = float(kwargs.pop("res", pillar / 10.0))
        if kwargs:
            raise MapFormatError(f"unknown generator options {sorted(kwargs)}")
        n = int(round(extent / res))
        cells = np.zeros((n, n), dtype=np.uint8)
        pc = int(round(pillar / res))
        if pc <= 0 or abs(pc * res - pillar) > 1e-9:
            raise MapFormatError("pillar size must be a multiple of the resolution")
        for i in range(side):
            for j in range(side):
                cx = (i + 0.5) * extent / side
                cy = (j + 0.5) * extent / side
                ix0 = int(round(cx / res - pc / 2.0))
                iy0 = int(round(cy / res - pc / 2.0))
                cells[iy0:iy0 + pc, ix0:ix0 + pc] = 1
        return OccupancyGrid(res, (0.0, 0.0), cells)
    raise MapFormatError(f"unknown generator {name!r}")


def resolve_map(source: str) -> OccupancyGrid:
    """Scenario map source: a generator spec or an inline/parsed document."""
    if _GEN_RE.match(source) and "resolution:" not in source:
        return generate_map(source)
    return load_map(source)
