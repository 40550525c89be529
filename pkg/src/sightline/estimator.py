"""Constant-velocity Kalman filter over visibility-gated position detections.

The motion model is linear (CV with white-acceleration noise), so the
"extended" filter the hardware stack would run degenerates to a plain KF
and is implemented as one. Detections exist only while the true evader
position lies inside the view polygon; after `timeout` seconds without one
the estimate is flagged invalid and callers treat the velocity as zero.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fov import FovPolygon, contains

_H = np.array([[1.0, 0.0, 0.0, 0.0],
               [0.0, 1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class EvaderEstimate:
    """Mean (px, py, vx, vy), covariance, and bookkeeping."""

    mean: np.ndarray
    cov: np.ndarray
    last_seen: float
    valid: bool

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[2:]


def initial_estimate(z, t: float, speed_bound: float = np.inf) -> EvaderEstimate:
    mean = np.array([z[0], z[1], 0.0, 0.0])
    cov = np.diag([0.1, 0.1, 1.0, 1.0])
    return EvaderEstimate(mean, cov, t, True)


def _clamp_speed(mean: np.ndarray, k: float) -> np.ndarray:
    s = float(np.hypot(mean[2], mean[3]))
    if s > k and s > 0:
        mean = mean.copy()
        mean[2:] *= k / s
    return mean


def predict(e: EvaderEstimate, dt: float, q: float,
            speed_bound: float = np.inf) -> EvaderEstimate:
    """CV propagation: F = [I, dt I; 0, I], white-acceleration Q blocks
    q * [dt^3/3, dt^2/2; dt^2/2, dt] per axis."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return e
    F = np.eye(4)
    F[0, 2] = dt
    F[1, 3] = dt
    q11 = q * dt ** 3 / 3.0
    q12 = q * dt ** 2 / 2.0
    q22 = q * dt
    Q = np.array([[q11, 0, q12, 0],
                  [0, q11, 0, q12],
                  [q12, 0, q22, 0],
                  [0, q12, 0, q22]])
    mean = _clamp_speed(F @ e.mean, speed_bound)
    cov = F @ e.cov @ F.T + Q
    cov = 0.5 * (cov + cov.T)
    return replace(e, mean=mean, cov=cov)


def update(e: EvaderEstimate, z, r: float, t: float | None = None,
           speed_bound: float = np.inf) -> EvaderEstimate:
    """Position measurement update with Joseph-form covariance."""
    z = np.asarray(z, dtype=float)
    if r <= 0:
        raise ValueError("measurement variance must be positive")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite measurement")
    S = _H @ e.cov @ _H.T + r * np.eye(2)
    K = e.cov @ _H.T @ np.linalg.inv(S)
    mean = e.mean + K @ (z - _H @ e.mean)
    ikh = np.eye(4) - K @ _H
    cov = ikh @ e.cov @ ikh.T + K @ (r * np.eye(2)) @ K.T
    cov = 0.5 * (cov + cov.T)
    mean = _clamp_speed(mean, speed_bound)
    return EvaderEstimate(mean, cov, e.last_seen if t is None else t, True)


def gate(poly: FovPolygon, z_true, r: float,
         rng: np.random.Generator) -> np.ndarray | None:
    """Detection model: a noisy position measurement iff the true evader
    is inside the view polygon, otherwise nothing."""
    z_true = np.asarray(z_true, dtype=float)
    if not contains(poly, z_true):
        return None
    if r == 0.0:
        return z_true.copy()
    return z_true + rng.normal(0.0, np.sqrt(r), 2)


@dataclass
class TrackerConfig:
    q: float = 0.5           # process noise intensity (m^2/s^3)
    r: float = 0.01          # measurement variance (m^2)
    timeout: float = 3.0     # seconds without detection before invalid
    speed_bound: float = np.inf
    gated: bool = True       # camera-style: detections only while visible.
                             # False mirrors the driving-sim protocol where the
                             # simulator feeds evader state directly.


class Tracker:
    """Owns the estimate across simulation ticks (single-threaded owner)."""

    def __init__(self, cfg: TrackerConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.estimate: EvaderEstimate | None = None

    def tick(self, t: float, dt: float, poly: FovPolygon, z_true) -> EvaderEstimate | None:
        e = self.estimate
        if e is not None and dt > 0:
            e = predict(e, dt, self.cfg.q, self.cfg.speed_bound)
        if self.cfg.gated:
            z = gate(poly, z_true, self.cfg.r, self.rng)
        else:
            z = np.asarray(z_true, dtype=float) + self.rng.normal(0.0, np.sqrt(self.cfg.r), 2)
        if z is not None:
            if e is None:
                e = initial_estimate(z, t, self.cfg.speed_bound)
            else:
                e = update(e, z, self.cfg.r, t, self.cfg.speed_bound)
        if e is not None:
            e = replace(e, valid=(t - e.last_seen) <= self.cfg.timeout)
        self.estimate = e
        return e
