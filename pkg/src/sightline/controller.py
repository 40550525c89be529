"""Per-tick control synthesis: slack-relaxed barrier QP around a reference.

Decision vector z = (v, omega, delta). The visibility rows may be relaxed
by the slack delta (quadratically penalized), safety rows may not; with
delta free the program is always feasible for rows the simulator builds,
so an infeasible solve is a contract violation, not a runtime condition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .agents import ControlInput, PursuerState, wrap_angle
from .cbf import GradientSet
from .qp import QpProblem, QpSolution, solve


@dataclass
class ControllerConfig:
    gamma_v: float = 1.0          # visibility class-K gain (alpha(h) = gamma*h)
    gamma_s: float = 2.0          # safety class-K gain
    lam: float = 10.0             # slack penalty
    u_box: tuple = ((0.0, 1.2), (-1.0, 1.0))
    robot_radius: float = 0.3
    standoff: float = 2.0         # fallback pursuit: desired gap to evader
    k_v: float = 0.8
    k_omega: float = 2.0
    lookahead: float = 0.5        # fallback pursuit: evader prediction horizon
    scan_omega: float = 0.5       # spin rate while no evader estimate exists
    safety_margin: float = 0.0    # extra berth on top of robot_radius in the
                                  # safety rows (absorbs tick discretization)

    def __post_init__(self):
        if self.gamma_v <= 0 or self.gamma_s <= 0 or self.lam <= 0:
            raise ValueError("gains and slack penalty must be positive")


@dataclass
class ControlOutput:
    u: ControlInput
    delta: float
    visibility_active: bool
    safety_active: bool
    status: str


def _input_matrix(x: PursuerState) -> np.ndarray:
    """Unicycle G(x): xdot = G(x) u with u = (v, omega) and no drift."""
    return np.array([[math.cos(x.theta), 0.0],
                     [math.sin(x.theta), 0.0],
                     [0.0, 1.0]])


def build_constraints(h_set: GradientSet | None, s_set: GradientSet | None,
                      x: PursuerState, cfg: ControllerConfig):
    """Expand barrier vertex sets into QP rows over (v, omega, delta).

    Visibility, per vertex vh of the h gradient set:
        (vh^T G) u - delta >= -gamma_v h - w
    Safety, per vertex vs (radius-inflated value, no slack, no time term):
        (vs^T G) u >= -gamma_s (value - robot_radius)
    """
    if h_set is not None and len(h_set.vertices) == 0:
        raise ValueError("empty visibility gradient set")
    if s_set is not None and len(s_set.vertices) == 0:
        raise ValueError("empty safety gradient set")
    G = _input_matrix(x)
    rows = []
    tags = []
    if h_set is not None:
        rhs = -cfg.gamma_v * h_set.value - h_set.time_term
        for vh in h_set.vertices:
            coeff = vh @ G
            rows.append((np.array([coeff[0], coeff[1], -1.0]), rhs))
            tags.append("visibility")
    if s_set is not None:
        rhs = -cfg.gamma_s * (s_set.value - cfg.robot_radius - cfg.safety_margin)
        for vs in s_set.vertices:
            coeff = vs @ G
            rows.append((np.array([coeff[0], coeff[1], 0.0]), rhs))
            tags.append("safety")
    return rows, tags


def control_step(x: PursuerState, reference: ControlInput,
                 h_set: GradientSet | None, s_set: GradientSet | None,
                 cfg: ControllerConfig) -> ControlOutput:
    """Solve min ||u - r||^2 + lam * delta^2 over the barrier rows and box."""
    r = reference.clamped(cfg.u_box)
    rows, tags = build_constraints(h_set, s_set, x, cfg)
    box = np.array([[cfg.u_box[0][0], cfg.u_box[0][1]],
                    [cfg.u_box[1][0], cfg.u_box[1][1]],
                    [-np.inf, np.inf]])
    prob = QpProblem(quad_diag=np.array([1.0, 1.0, cfg.lam]),
                     linear=np.array([-2.0 * r.v, -2.0 * r.omega, 0.0]),
                     rows=rows, box=box)
    sol = solve(prob)
    if not sol.optimal:
        raise RuntimeError("barrier QP reported infeasible; delta is free so "
                           "this violates the controller contract")
    vis_active = any(tags[i] == "visibility" for i in sol.active_set)
    saf_active = any(tags[i] == "safety" for i in sol.active_set)
    u = ControlInput(float(sol.z[0]), float(sol.z[1])).clamped(cfg.u_box)
    return ControlOutput(u, float(sol.z[2]), vis_active, saf_active, sol.status)


def fallback_reference(x: PursuerState, est_pos, est_vel,
                       cfg: ControllerConfig) -> ControlInput:
    """Proportional pursuit toward the predicted evader position.

    Heads for (estimate + velocity * lookahead), slowing to a stop at the
    standoff distance; both channels clamp to the input box.
    """
    target = np.asarray(est_pos, dtype=float)
    if est_vel is not None:
        target = target + np.asarray(est_vel, dtype=float) * cfg.lookahead
    dx = target[0] - x.x
    dy = target[1] - x.y
    dist = math.hypot(dx, dy)
    err = wrap_angle(math.atan2(dy, dx) - x.theta) if dist > 1e-12 else 0.0
    return ControlInput(cfg.k_v * max(0.0, dist - cfg.standoff),
                        cfg.k_omega * err).clamped(cfg.u_box)


def scan_reference(cfg: ControllerConfig) -> ControlInput:
    """Spin-in-place search used before the first evader detection."""
    return ControlInput(0.0, cfg.scan_omega).clamped(cfg.u_box)
