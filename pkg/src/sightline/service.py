"""Live bridge: one running simulation behind a WebSocket endpoint.

Wire protocol (versioned v: 1, one JSON document per message, documented
byte-for-byte in docs/protocol.md):

  server -> client, once on connect:
    {"v": 1, "scene": {"resolution", "origin", "size", "occupied",
                       "k", "u_box", "fov_range"}}
  server -> client, per broadcast tick (<= 30 Hz on the wire):
    {"v": 1, "seq", "t", "pursuer": [x, y, theta], "evader": [x, y],
     "estimate": {"mean": [x, y, vx, vy], "valid"}, "fov": [[x, y], ...],
     "h", "path": [[x, y, theta], ...], "metrics": {...}}
  client -> server:
    {"v": 1, "kind": "evader_velocity" | "pause" | "resume" | "reset"
             | "set_mode", "payload": ...}

Velocity commands are last-writer-wins and clamped to the evader speed
bound server-side. Malformed messages get an error reply; the session
stays alive. The simulation advances whether or not anyone is connected.
"""
from __future__ import annotations

import asyncio
import json
import math

import numpy as np
import websockets

from .scenario import MODES, ScenarioConfig
from .sim import Simulation, compute_metrics

WIRE_PRECISION = 6  # decimal places; round trips losslessly through JSON


def _r(x: float) -> float:
    return round(float(x), WIRE_PRECISION)


def encode_frame(seq: int, sim: Simulation, step_info: dict) -> str:
    est = step_info["est"]
    poly = step_info["poly"]
    path = []
    if sim.reference is not None and sim.reference.segments:
        path = [[_r(s.x), _r(s.y), _r(s.theta)]
                for s in sim.reference.states(max(0.2, sim.cfg.planner.substep * 4))]
    if len(sim.trace):
        m = compute_metrics(sim.trace, robot_radius=sim.cfg.controller.robot_radius,
                            control_rate=sim.cfg.control_rate).as_dict()
        metrics = {k: (_r(v) if isinstance(v, float) and math.isfinite(v) else v)
                   for k, v in m.items()}
    else:
        metrics = {}
    frame = {
        "v": 1,
        "seq": seq,
        "t": _r(step_info["t"]),
        "pursuer": [_r(sim.x.x), _r(sim.x.y), _r(sim.x.theta)],
        "evader": [_r(step_info["y_true"][0]), _r(step_info["y_true"][1])],
        "estimate": {
            "mean": [_r(v) for v in est.mean] if est else [0.0, 0.0, 0.0, 0.0],
            "valid": bool(est.valid) if est else False,
        },
        "fov": [[_r(vx), _r(vy)] for vx, vy in poly.vertices],
        "h": _r(step_info["h"]),
        "path": path,
        "metrics": metrics,
    }
    return json.dumps(frame, separators=(",", ":"))


def encode_scene(cfg: ScenarioConfig, sim: Simulation) -> str:
    iy, ix = np.nonzero(sim.grid.cells)
    scene = {
        "v": 1,
        "scene": {
            "resolution": sim.grid.resolution,
            "origin": list(sim.grid.origin),
            "size": [sim.grid.width, sim.grid.height],
            "occupied": [[int(a), int(b)] for a, b in zip(ix, iy)],
            "k": sim.evader.k,
            "u_box": [list(cfg.controller.u_box[0]), list(cfg.controller.u_box[1])],
            "fov_range": cfg.fov.range,
        },
    }
    return json.dumps(scene, separators=(",", ":"))


class Session:
    """One simulation, many spectators, one shared command surface."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.sim = Simulation(cfg)
        self.clients: set = set()
        self.paused = False
        self.velocity = np.zeros(2)
        self.seq = 0
        self.broadcast_every = max(1, math.ceil(cfg.control_rate / 30.0))
        self._tick_in_broadcast = 0

    def apply_command(self, msg: dict) -> dict | None:
        """Apply one decoded command; returns an error document or None."""
        if not isinstance(msg, dict) or msg.get("v") != 1:
            return {"v": 1, "error": "expected {v: 1, kind, payload}"}
        kind = msg.get("kind")
        payload = msg.get("payload")
        if kind == "evader_velocity":
            try:
                vel = np.asarray([float(payload[0]), float(payload[1])])
            except (TypeError, ValueError, IndexError):
                return {"v": 1, "error": "evader_velocity payload must be [vx, vy]"}
            if not np.all(np.isfinite(vel)):
                return {"v": 1, "error": "velocity must be finite"}
            speed = float(np.hypot(*vel))
            if speed > self.sim.evader.k and speed > 0:
                vel *= self.sim.evader.k / speed
            self.velocity = vel
            return None
        if kind == "pause":
            self.paused = True
            return None
        if kind == "resume":
            self.paused = False
            return None
        if kind == "reset":
            self.sim = Simulation(self.cfg)
            self.velocity = np.zeros(2)
            return None
        if kind == "set_mode":
            if payload not in MODES:
                return {"v": 1, "error": f"mode must be one of {list(MODES)}"}
            self.sim.cfg.mode = payload
            return None
        return {"v": 1, "error": f"unknown command kind {kind!r}"}

    def tick(self) -> str | None:
        """Advance one control tick (unless paused); maybe emit a frame."""
        if self.paused:
            info = self._held_info
        else:
            info = self.sim.step(external_command=self.velocity)
            self._held_info = info
        self._tick_in_broadcast += 1
        if self._tick_in_broadcast >= self.broadcast_every and info is not None:
            self._tick_in_broadcast = 0
            self.seq += 1
            return encode_frame(self.seq, self.sim, info)
        return None

    _held_info = None


async def _serve_session(session: Session, host: str, port: int,
                         realtime: bool = True, max_ticks: int | None = None,
                         ready: asyncio.Event | None = None):
    async def handler(ws):
        session.clients.add(ws)
        try:
            await ws.send(encode_scene(session.cfg, session.sim))
            async for raw in ws:
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send(json.dumps({"v": 1, "error": "not JSON"}))
                    continue
                err = session.apply_command(msg)
                if err is not None:
                    await ws.send(json.dumps(err))
        finally:
            session.clients.discard(ws)

    dt = 1.0 / session.cfg.control_rate
    async with websockets.serve(handler, host, port):
        if ready is not None:
            ready.set()
        next_t = asyncio.get_event_loop().time()
        ticks = 0
        while max_ticks is None or ticks < max_ticks:
            frame = session.tick()
            ticks += 1
            if frame is not None and session.clients:
                for ws in list(session.clients):
                    try:
                        await ws.send(frame)
                    except websockets.ConnectionClosed:
                        session.clients.discard(ws)
            if realtime:
                next_t += dt
                delay = next_t - asyncio.get_event_loop().time()
                if delay > 0:
                    await asyncio.sleep(delay)
                else:
                    next_t = asyncio.get_event_loop().time()
            else:
                await asyncio.sleep(0)


def serve(cfg: ScenarioConfig, host: str = "127.0.0.1", port: int = 8765,
          realtime: bool = True, max_ticks: int | None = None,
          ready: asyncio.Event | None = None):
    """Run the live bridge until interrupted (or max_ticks, for tests)."""
    session = Session(cfg)
    return asyncio.run(_serve_session(session, host, port, realtime, max_ticks, ready))


async def serve_async(cfg: ScenarioConfig, host: str = "127.0.0.1", port: int = 8765,
                      realtime: bool = True, max_ticks: int | None = None,
                      ready: asyncio.Event | None = None):
    session = Session(cfg)
    await _serve_session(session, host, port, realtime, max_ticks, ready)
