"""Motion models: differential-drive pursuer and scripted/teleoperated evaders.

The pursuer is a unicycle with state (x, y, theta) and input (v, omega).
Constant-input segments admit a closed-form arc solution, which is used
everywhere instead of numerical integration so that invariance checks are
not polluted by integrator error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class PursuerState:
    """Unicycle state. theta is kept wrapped to [-pi, pi)."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pursuer state {(self.x, self.y, self.theta)}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @staticmethod
    def from_array(arr) -> "PursuerState":
        return PursuerState(float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass(frozen=True)
class ControlInput:
    """Linear and angular velocity command (m/s, rad/s)."""

    v: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega])

    def clamped(self, u_box) -> "ControlInput":
        (v_lo, v_hi), (w_lo, w_hi) = u_box
        return ControlInput(min(max(self.v, v_lo), v_hi), min(max(self.omega, w_lo), w_hi))


# omega below this is integrated as a straight line
_OMEGA_EPS = 1e-9


def pursuer_step(s: PursuerState, u: ControlInput, dt: float) -> PursuerState:
    """Advance the unicycle by dt under constant input, using the exact arc.

    x' = x + v/w (sin(th + w dt) - sin th), y' = y + v/w (cos th - cos(th + w dt));
    straight line in the w -> 0 limit.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if abs(u.omega) < _OMEGA_EPS:
        return PursuerState(
            s.x + u.v * dt * math.cos(s.theta),
            s.y + u.v * dt * math.sin(s.theta),
            s.theta,
        )
    th1 = s.theta + u.omega * dt
    r = u.v / u.omega
    return PursuerState(
        s.x + r * (math.sin(th1) - math.sin(s.theta)),
        s.y + r * (math.cos(s.theta) - math.cos(th1)),
        th1,
    )


@dataclass(frozen=True)
class LissajousParams:
    """Periodic figure path y(t) = center + [A sin(a t + gamma), B sin(b t)]."""

    A: float
    a: float
    B: float
    b: float
    gamma: float
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.A <= 0 or self.B <= 0:
            raise ValueError("Lissajous amplitudes must be positive")

    @property
    def speed_bound(self) -> float:
        """Tight bound on ||ydot||: hypot of the per-axis peak speeds."""
        return math.hypot(self.A * self.a, self.B * self.b)


def lissajous_state(t: float, p: LissajousParams) -> tuple[np.ndarray, np.ndarray]:
    """Position and analytic velocity of the Lissajous evader at time t."""
    y = np.array([
        p.center[0] + p.A * math.sin(p.a * t + p.gamma),
        p.center[1] + p.B * math.sin(p.b * t),
    ])
    ydot = np.array([
        p.A * p.a * math.cos(p.a * t + p.gamma),
        p.B * p.b * math.cos(p.b * t),
    ])
    return y, ydot


@dataclass
class WaypointParams:
    """Constant-speed piecewise-linear path through waypoints."""

    points: list[tuple[float, float]]
    speed: float
    loop: bool = False

    def __post_init__(self):
        if len(self.points) == 0:
            raise ValueError("waypoint list must not be empty")
        if self.speed < 0:
            raise ValueError("speed must be nonnegative")


def _waypoint_state(t: float, p: WaypointParams) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(p.points, dtype=float)
    if len(pts) == 1 or p.speed == 0.0:
        return pts[0].copy(), np.zeros(2)
    segs = np.diff(pts, axis=0)
    lens = np.hypot(segs[:, 0], segs[:, 1])
    total = float(lens.sum())
    if total == 0.0:
        return pts[0].copy(), np.zeros(2)
    s = p.speed * t
    if p.loop:
        s = s % total
    elif s >= total:
        return pts[-1].copy(), np.zeros(2)
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    idx = int(np.searchsorted(cum, s, side="right") - 1)
    idx = min(idx, len(segs) - 1)
    L = lens[idx]
    if L == 0.0:
        return pts[idx].copy(), np.zeros(2)
    frac = (s - cum[idx]) / L
    pos = pts[idx] + frac * segs[idx]
    vel = p.speed * segs[idx] / L
    return pos, vel


@dataclass
class EvaderModel:
    """Evader motion dispatcher.

    kind:
      lissajous -- analytic periodic path (payload: LissajousParams)
      waypoints -- constant-speed polyline (payload: WaypointParams)
      external  -- velocity-commanded; commands are clamped to the speed bound k
    """

    kind: str
    k: float
    payload: object = None
    # external-kind integrator state
    _pos: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("lissajous", "waypoints", "external"):
            raise ValueError(f"unknown evader kind {self.kind!r}")
        if self.kind == "external" and self._pos is None:
            raise ValueError("external evader needs an initial position")

    @staticmethod
    def lissajous(params: LissajousParams) -> "EvaderModel":
        return EvaderModel("lissajous", params.speed_bound, params)

    @staticmethod
    def waypoints(params: WaypointParams) -> "EvaderModel":
        return EvaderModel("waypoints", params.speed, params)

    @staticmethod
    def external(start: tuple[float, float], k: float) -> "EvaderModel":
        return EvaderModel("external", k, None, np.asarray(start, dtype=float).copy())


def evader_step(model: EvaderModel, t: float, dt: float,
                command: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Evader position and velocity at time t (after advancing by dt for external).

    External commands are clamped to ||ydot|| <= k before integration.
    """
    if model.kind == "lissajous":
        return lissajous_state(t, model.payload)
    if model.kind == "waypoints":
        return _waypoint_state(t, model.payload)
    # external: integrate the latest clamped command
    cmd = np.zeros(2) if command is None else np.asarray(command, dtype=float)
    speed = float(np.hypot(cmd[0], cmd[1]))
    if speed > model.k and speed > 0:
        cmd = cmd * (model.k / speed)
    model._pos = model._pos + cmd * dt
    return model._pos.copy(), cmd
