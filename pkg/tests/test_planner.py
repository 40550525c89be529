import math

import numpy as np
import pytest

from sightline.agents import ControlInput, PursuerState, pursuer_step
from sightline.fov import FovParams
from sightline.planner import (ReferenceTrajectory, SstParams, goal_satisfied, plan,
                               propagate)
from sightline.world import clearance, generate_map, obstacle_distance

U_BOX = ((0.0, 1.2), (-1.0, 1.0))
FOV = FovParams(8.0, math.radians(30), 128)


def rk4_unicycle(x, u, duration, h=1e-4):
    """Fine Runge-Kutta oracle for the constant-input unicycle."""
    s = np.array([x.x, x.y, x.theta])

    def f(s):
        return np.array([u.v * math.cos(s[2]), u.v * math.sin(s[2]), u.omega])

    t = 0.0
    while t < duration - 1e-12:
        dt = min(h, duration - t)
        k1 = f(s)
        k2 = f(s + 0.5 * dt * k1)
        k3 = f(s + 0.5 * dt * k2)
        k4 = f(s + dt * k3)
        s = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    return s


class TestPropagate:
    def test_straight_segment(self):
        states = propagate(PursuerState(0, 0, 0), ControlInput(1.0, 0.0), 1.0, 0.25)
        assert len(states) == 4
        assert (states[-1].x, states[-1].y) == pytest.approx((1.0, 0.0))

    def test_pure_rotation(self):
        states = propagate(PursuerState(1, 2, 0), ControlInput(0.0, 0.6), 1.0, 0.1)
        assert (states[-1].x, states[-1].y) == pytest.approx((1.0, 2.0))
        assert states[-1].theta == pytest.approx(0.6)

    def test_arc_matches_fine_rk4(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            u = ControlInput(rng.uniform(0, 1.2), rng.uniform(-1, 1))
            x = PursuerState(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-3, 3))
            dur = rng.uniform(0.1, 2.0)
            end = propagate(x, u, dur, dur)[-1]
            oracle = rk4_unicycle(x, u, dur)
            assert end.x == pytest.approx(oracle[0], abs=1e-8)
            assert end.y == pytest.approx(oracle[1], abs=1e-8)

    def test_radius_of_turn(self):
        u = ControlInput(1.0, 0.5)
        states = propagate(PursuerState(0, 0, 0), u, 2 * math.pi / 0.5, 0.05)
        pts = np.array([(s.x, s.y) for s in states])
        center = np.array([0.0, u.v / u.omega])
        assert np.allclose(np.hypot(*(pts - center).T), u.v / u.omega, atol=1e-9)


class TestGoalSatisfied:
    def test_evader_at_fov_center(self, empty_grid):
        x = PursuerState(6.0, 10.0, 0.0)
        assert goal_satisfied(empty_grid, x, (10.0, 10.0), FOV, 0.2)

    def test_occluded_evader_fails(self, desk_grid):
        # pillar centered (5, 5): stand west of it, evader east of it
        x = PursuerState(2.5, 5.0, 0.0)
        assert not goal_satisfied(desk_grid, x, (7.5, 5.0), FOV, 0.2)
        assert goal_satisfied(desk_grid, x, (3.8, 5.0), FOV, 0.2)

    def test_margin_monotone(self, empty_grid):
        x = PursuerState(6.0, 10.0, 0.0)
        sat = [goal_satisfied(empty_grid, x, (10.0, 10.0), FOV, m)
               for m in np.linspace(0.0, 4.0, 17)]
        assert sat[0] and not sat[-1]
        assert all(a or not b for a, b in zip(sat, sat[1:]))  # once false, stays false


class TestPlan:
    def test_trivial_goal_zero_segments(self, empty_grid):
        p = SstParams(iter_budget=100)
        res = plan(empty_grid, PursuerState(6, 10, 0), (10.0, 10.0), p, FOV,
                   U_BOX, 0.2, np.random.default_rng(0))
        assert res.success
        assert res.trajectory.segments == []
        assert res.trajectory.total_duration == 0.0

    def test_reach_evader_outside_small_fov(self, empty_grid):
        fov = FovParams(2.0, math.radians(30), 64)
        x0 = PursuerState(5.0, 10.0, 0.0)
        y = (10.0, 10.0)  # 5 m ahead, outside the 2 m range
        p = SstParams(iter_budget=6000, duration_range=(0.3, 1.2), goal_bias=0.3)
        res = plan(empty_grid, x0, y, p, fov, U_BOX, 0.2, np.random.default_rng(1))
        assert res.success
        # must close >= 3 m of gap at <= 1.2 m/s
        assert res.trajectory.total_duration >= 3.0 / 1.2 - 1e-9
        end = res.trajectory.states(0.05)[-1]
        assert goal_satisfied(empty_grid, end, y, fov, 0.2)

    def test_replay_collision_free_and_goal(self, desk_grid):
        x0 = PursuerState(2.5, 5.0, 0.0)
        y = np.array([7.5, 5.0])  # behind the (5,5) pillar
        p = SstParams(iter_budget=6000, duration_range=(0.3, 1.2), goal_bias=0.3)
        res = plan(desk_grid, x0, y, p, FOV, U_BOX, 0.3, np.random.default_rng(3))
        assert res.success
        s = x0
        for u, dur in res.trajectory.segments:
            for s in propagate(s, u, dur, 0.05):
                d, _ = obstacle_distance(desk_grid, (s.x, s.y))
                assert d >= 0.3 - 1e-9
        assert goal_satisfied(desk_grid, s, y, FOV, 0.2)

    def test_deterministic_under_seed(self, desk_grid):
        x0 = PursuerState(2.5, 5.0, 0.0)
        y = np.array([7.5, 5.0])
        p = SstParams(iter_budget=4000)
        r1 = plan(desk_grid, x0, y, p, FOV, U_BOX, 0.3, np.random.default_rng(11))
        r2 = plan(desk_grid, x0, y, p, FOV, U_BOX, 0.3, np.random.default_rng(11))
        assert r1.success == r2.success
        assert r1.iterations == r2.iterations
        if r1.success:
            assert len(r1.trajectory.segments) == len(r2.trajectory.segments)
            for (u1, d1), (u2, d2) in zip(r1.trajectory.segments, r2.trajectory.segments):
                assert (u1.v, u1.omega, d1) == (u2.v, u2.omega, d2)

    def test_budget_exhaustion_reports_failure(self, desk_grid):
        x0 = PursuerState(2.5, 5.0, 0.0)
        y = np.array([38.0, 38.0])  # far corner: hopeless in 5 iterations
        p = SstParams(iter_budget=5)
        res = plan(desk_grid, x0, y, p, FOV, U_BOX, 0.3, np.random.default_rng(0))
        assert not res.success
        assert res.trajectory is None

    def test_start_in_collision_rejected(self, desk_grid):
        with pytest.raises(ValueError, match="obstacle"):
            plan(desk_grid, PursuerState(5.0, 5.0, 0.0), (10.0, 10.0),
                 SstParams(iter_budget=10), FOV, U_BOX, 0.3, np.random.default_rng(0))

    def test_witness_sparsity(self, desk_grid):
        x0 = PursuerState(2.5, 5.0, 0.0)
        y = np.array([20.0, 35.0])
        p = SstParams(iter_budget=1200, delta_s=0.5)
        res = plan(desk_grid, x0, y, p, FOV, U_BOX, 0.3, np.random.default_rng(2))
        w = res.witnesses
        assert w is not None and len(w) > 10
        # pairwise separation under the planner metric
        for i in range(len(w)):
            d = np.hypot(w[:, 0] - w[i, 0], w[:, 1] - w[i, 1])
            dth = np.abs(np.mod(w[:, 2] - w[i, 2] + np.pi, 2 * np.pi) - np.pi)
            m = d + p.w_theta * dth
            m[i] = np.inf
            assert m.min() > p.delta_s
