"""Stable Sparse RRT over the unicycle's control space.

The planner grows a tree by propagating randomly sampled constant controls
for random hold durations, keeps it sparse with witness-based pruning, and
stops at the first node whose pose sees the evader's current position with
the required margin. The result is a timed open-loop control sequence the
barrier controller tracks; re-planning supplies the non-myopic behavior,
so no evader prediction is needed here.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .agents import ControlInput, PursuerState, pursuer_step, wrap_angle
from .cbf import visibility_value
from .fov import FovParams
from .world import OccupancyGrid, clearance, obstacle_distance


@dataclass
class SstParams:
    iter_budget: int | None = 2000
    wall_budget: float | None = None     # seconds; overrides iterations if set
    delta_bn: float = 2.0                # best-near selection radius
    delta_s: float = 0.5                 # witness pruning radius
    duration_range: tuple = (0.2, 1.0)
    goal_margin: float = 0.2             # required h at the goal pose
    goal_bias: float = 0.1
    substep: float = 0.05
    w_theta: float = 0.5                 # metric weight, meters per radian
    refine_iters: int = 0                # extra iterations after the first
                                         # goal hit, returning the cheapest

    def __post_init__(self):
        if not (0 < self.delta_s < self.delta_bn):
            raise ValueError("need 0 < delta_s < delta_bn")
        if self.duration_range[0] <= 0:
            raise ValueError("minimum hold duration must be positive")
        if not (0.0 <= self.goal_bias <= 1.0):
            raise ValueError("goal_bias must be a probability")


@dataclass
class ReferenceTrajectory:
    """Timed open-loop control sequence from start_state."""

    segments: list[tuple[ControlInput, float]]
    start_state: PursuerState
    total_duration: float

    def control_at(self, tau: float) -> ControlInput | None:
        """Segment control active tau seconds after the trajectory start."""
        acc = 0.0
        for u, dur in self.segments:
            acc += dur
            if tau < acc:
                return u
        return None

    def states(self, substep: float) -> list[PursuerState]:
        """Propagated poses at substep resolution (for display / checking)."""
        out = [self.start_state]
        for u, dur in self.segments:
            out.extend(propagate(out[-1], u, dur, substep))
        return out


def propagate(x: PursuerState, u: ControlInput, duration: float,
              substep: float) -> list[PursuerState]:
    """Exact-arc integration at substep resolution; returns the states after
    each substep (final state included, start excluded)."""
    if substep <= 0 or substep > duration:
        raise ValueError("need 0 < substep <= duration")
    out = []
    t = 0.0
    s = x
    while t < duration - 1e-12:
        dt = min(substep, duration - t)
        s = pursuer_step(s, u, dt)
        out.append(s)
        t += dt
    return out


def goal_satisfied(grid: OccupancyGrid, x: PursuerState, y_now,
                   fov: FovParams, goal_margin: float,
                   robot_radius: float = 0.0) -> bool:
    """Goal test: the pose keeps clearance and sees y_now with margin."""
    if not grid.in_bounds((x.x, x.y)) or grid.is_occupied_cell((x.x, x.y)):
        return False
    if robot_radius > 0:
        d, _ = obstacle_distance(grid, (x.x, x.y))
        if d < robot_radius:
            return False
    # cheap rejects before the full view computation
    dx = y_now[0] - x.x
    dy = y_now[1] - x.y
    dist = math.hypot(dx, dy)
    if dist > fov.range - goal_margin:
        return False
    if abs(wrap_angle(math.atan2(dy, dx) - x.theta)) > fov.half_angle:
        return False
    return visibility_value(grid, x, y_now, fov) >= goal_margin


@dataclass
class PlanResult:
    trajectory: ReferenceTrajectory | None
    iterations: int
    n_nodes: int
    success: bool
    witnesses: np.ndarray = None  # (n, 3) pruning-witness states (diagnostic)


class _Tree:
    """Array-backed SST tree with active flags and witness bookkeeping."""

    def __init__(self, x0: PursuerState, w_theta: float):
        self.states = [x0.as_array()]
        self.parent = [-1]
        self.cost = [0.0]
        self.control = [(0.0, 0.0)]
        self.duration = [0.0]
        self.active = [True]
        self.n_children = [0]
        self.w_theta = w_theta
        self._arr = None

    def _state_arr(self):
        return np.asarray(self.states)

    def metric(self, q: np.ndarray, states: np.ndarray) -> np.ndarray:
        d = np.hypot(states[:, 0] - q[0], states[:, 1] - q[1])
        dth = np.abs(np.mod(states[:, 2] - q[2] + np.pi, 2 * np.pi) - np.pi)
        return d + self.w_theta * dth

    def select(self, q: np.ndarray, delta_bn: float) -> int:
        """Lowest-cost active node within delta_bn of q, else nearest active."""
        states = self._state_arr()
        dist = self.metric(q, states)
        active = np.asarray(self.active)
        dist = np.where(active, dist, np.inf)
        near = np.nonzero(dist <= delta_bn)[0]
        if len(near):
            costs = np.asarray(self.cost)[near]
            return int(near[np.argmin(costs)])
        return int(np.argmin(dist))

    def add(self, parent: int, state: np.ndarray, u: ControlInput,
            dur: float) -> int:
        self.states.append(state)
        self.parent.append(parent)
        self.cost.append(self.cost[parent] + dur)
        self.control.append((u.v, u.omega))
        self.duration.append(dur)
        self.active.append(True)
        self.n_children.append(0)
        self.n_children[parent] += 1
        return len(self.states) - 1

    def deactivate(self, idx: int):
        """Mark a dominated node inactive and trim childless inactive chains."""
        self.active[idx] = False
        while idx >= 0 and not self.active[idx] and self.n_children[idx] == 0:
            p = self.parent[idx]
            if p >= 0:
                self.n_children[p] -= 1
            idx = p

    def path(self, idx: int) -> list[tuple[ControlInput, float]]:
        segs = []
        while self.parent[idx] >= 0:
            v, w = self.control[idx]
            segs.append((ControlInput(v, w), self.duration[idx]))
            idx = self.parent[idx]
        segs.reverse()
        return segs


def plan(grid: OccupancyGrid, x0: PursuerState, y_now, params: SstParams,
         fov: FovParams, u_box, robot_radius: float,
         rng: np.random.Generator,
         sampler=None) -> PlanResult:
    """Grow an SST tree from x0 until some node sees y_now.

    sampler, when given, replaces the default uniform/goal-biased state
    sampler (the hook that a learned region proposer would plug into).
    Budget is iterations, or wall-clock seconds when wall_budget is set.
    """
    if grid.is_occupied_cell((x0.x, x0.y)):
        raise ValueError("planner start pose is inside an obstacle")
    eff_radius = robot_radius
    if not clearance(grid, (x0.x, x0.y), robot_radius):
        # marginally violating start (the controller tolerates dips of a
        # couple of cells): plan with the clearance actually available
        d0, _ = obstacle_distance(grid, (x0.x, x0.y))
        if d0 <= 0:
            raise ValueError("planner start pose is inside an obstacle")
        eff_radius = max(0.0, d0 - 1e-9)
    y_now = np.asarray(y_now, dtype=float)
    if goal_satisfied(grid, x0, y_now, fov, params.goal_margin, robot_radius):
        traj = ReferenceTrajectory([], x0, 0.0)
        return PlanResult(traj, 0, 1, True, np.asarray([x0.as_array()]))

    x0w, y0w, x1w, y1w = grid.world_extent()
    (v_lo, v_hi), (w_lo, w_hi) = u_box

    def default_sampler() -> np.ndarray:
        if rng.random() < params.goal_bias:
            pos = y_now + rng.normal(0.0, params.delta_bn, 2)
        else:
            for _ in range(64):
                pos = np.array([rng.uniform(x0w, x1w), rng.uniform(y0w, y1w)])
                if not grid.is_occupied_cell(pos):
                    break
        return np.array([pos[0], pos[1], rng.uniform(-np.pi, np.pi)])

    sample = sampler if sampler is not None else default_sampler
    tree = _Tree(x0, params.w_theta)
    witnesses: list[np.ndarray] = [x0.as_array()]
    wit_rep = [0]
    wit_cost = [0.0]

    deadline = None
    budget = params.iter_budget if params.iter_budget is not None else 10 ** 9
    if params.wall_budget is not None:
        deadline = time.perf_counter() + params.wall_budget
        budget = 10 ** 9

    best_goal = -1
    best_cost = np.inf
    stop_at = None
    it = 0
    while it < budget:
        it += 1
        if stop_at is not None and it > stop_at:
            break
        if deadline is not None and time.perf_counter() > deadline:
            break
        q = sample()
        sel = tree.select(q, params.delta_bn)
        u = ControlInput(rng.uniform(v_lo, v_hi), rng.uniform(w_lo, w_hi))
        dur = rng.uniform(*params.duration_range)
        state = PursuerState.from_array(tree.states[sel])
        ok = True
        for s in propagate(state, u, dur, params.substep):
            if not clearance(grid, (s.x, s.y), eff_radius):
                ok = False
                break
        if not ok:
            continue
        x_new = s.as_array()
        cost_new = tree.cost[sel] + dur

        # witness pruning: only keep the locally best node per witness
        wit_arr = np.asarray(witnesses)
        wd = tree.metric(x_new, wit_arr)
        wi = int(np.argmin(wd))
        if wd[wi] > params.delta_s:
            witnesses.append(x_new)
            wit_rep.append(-1)
            wit_cost.append(np.inf)
            wi = len(witnesses) - 1
        if cost_new >= wit_cost[wi]:
            continue
        old = wit_rep[wi]
        idx = tree.add(sel, x_new, u, dur)
        wit_rep[wi] = idx
        wit_cost[wi] = cost_new
        if old >= 0:
            tree.deactivate(old)

        if cost_new < best_cost and goal_satisfied(
                grid, PursuerState.from_array(x_new), y_now, fov,
                params.goal_margin, robot_radius):
            best_goal = idx
            best_cost = cost_new
            if params.refine_iters <= 0:
                break
            if stop_at is None:
                stop_at = it + params.refine_iters

    wit_arr = np.asarray(witnesses)
    if best_goal >= 0:
        segs = tree.path(best_goal)
        traj = ReferenceTrajectory(segs, x0, sum(d for _, d in segs))
        return PlanResult(traj, it, len(tree.states), True, wit_arr)
    return PlanResult(None, it, len(tree.states), False, wit_arr)
