import numpy as np
import pytest

from sightline import _kernels
from sightline.world import generate_map


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    _kernels.warmup()


@pytest.fixture(scope="session")
def pillar_grid():
    """Paper-scale arena: sixteen 5 m pillars in 400 m, 0.5 m cells."""
    return generate_map("pillars(16, 5m, 400m)")


@pytest.fixture(scope="session")
def desk_grid():
    """Desk-scale arena: sixteen 1.25 m pillars in 40 m, 0.125 m cells."""
    return generate_map("pillars(16, 1.25m, 40m)")


@pytest.fixture(scope="session")
def empty_grid():
    return generate_map("empty(20m, res=0.1)")


def free_poses(grid, n, rng, clearance=0.0):
    """Uniform poses over the grid's free space."""
    x0, y0, x1, y1 = grid.world_extent()
    out = []
    while len(out) < n:
        p = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
        if grid.is_occupied_cell(p):
            continue
        if clearance > 0:
            from sightline.world import obstacle_distance
            d, _ = obstacle_distance(grid, p)
            if d < clearance:
                continue
        out.append((p[0], p[1], rng.uniform(-np.pi, np.pi)))
    return out
