import asyncio
import json
import socket

import pytest
import websockets
from jsonschema import validate

from sightline import scenarios
from sightline.scenario import load_scenario
from sightline.service import serve_async

FRAME_SCHEMA = {
    "type": "object",
    "required": ["v", "seq", "t", "pursuer", "evader", "estimate", "fov", "h",
                 "path", "metrics"],
    "additionalProperties": False,
    "properties": {
        "v": {"const": 1},
        "seq": {"type": "integer", "minimum": 1},
        "t": {"type": "number"},
        "pursuer": {"type": "array", "minItems": 3, "maxItems": 3,
                    "items": {"type": "number"}},
        "evader": {"type": "array", "minItems": 2, "maxItems": 2,
                   "items": {"type": "number"}},
        "estimate": {
            "type": "object",
            "required": ["mean", "valid"],
            "additionalProperties": False,
            "properties": {
                "mean": {"type": "array", "minItems": 4, "maxItems": 4,
                         "items": {"type": "number"}},
                "valid": {"type": "boolean"},
            },
        },
        "fov": {"type": "array",
                "items": {"type": "array", "minItems": 2, "maxItems": 2,
                          "items": {"type": "number"}}},
        "h": {"type": "number"},
        "path": {"type": "array",
                 "items": {"type": "array", "minItems": 3, "maxItems": 3,
                           "items": {"type": "number"}}},
        "metrics": {"type": "object"},
    },
}


def free_port() -> int:
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


def teleop_config(rate=20.0, mode="controller_only"):
    return load_scenario(scenarios.path("teleop"), overrides=[
        f"control_rate={rate}", f"mode={mode}", "fov.n_rays=64",
        "lidar.n_rays=90", "planner.iter_budget=300",
    ])


async def recv_json(ws):
    return json.loads(await asyncio.wait_for(ws.recv(), timeout=10.0))


async def next_frame(ws):
    while True:
        msg = await recv_json(ws)
        if "seq" in msg:
            return msg


class TestProtocol:
    def test_scene_then_valid_frames(self):
        async def scenario():
            port = free_port()
            cfg = teleop_config()
            server = asyncio.create_task(
                serve_async(cfg, port=port, realtime=False, max_ticks=1500))
            await asyncio.sleep(0.3)
            async with websockets.connect(f"ws://127.0.0.1:{port}") as ws:
                scene = await recv_json(ws)
                assert scene["v"] == 1 and "scene" in scene
                assert scene["scene"]["size"] == [200, 200]
                assert scene["scene"]["k"] == pytest.approx(0.8)
                last_seq = 0
                for _ in range(1000):
                    fr = await next_frame(ws)
                    validate(fr, FRAME_SCHEMA)
                    assert fr["seq"] > last_seq
                    last_seq = fr["seq"]
            server.cancel()

        asyncio.run(scenario())

    def test_commands_take_effect_within_two_frames(self):
        async def scenario():
            port = free_port()
            cfg = teleop_config(rate=20.0)
            server = asyncio.create_task(
                serve_async(cfg, port=port, realtime=True, max_ticks=2000))
            await asyncio.sleep(0.3)
            async with websockets.connect(f"ws://127.0.0.1:{port}") as ws:
                await recv_json(ws)  # scene

                # velocity command: clamped server-side to k = 0.8
                await next_frame(ws)
                await ws.send(json.dumps({"v": 1, "kind": "evader_velocity",
                                          "payload": [5.0, 0.0]}))
                first = await next_frame(ws)
                moving = None
                prev = first
                for _ in range(6):
                    fr = await next_frame(ws)
                    dx = fr["evader"][0] - prev["evader"][0]
                    dt = fr["t"] - prev["t"]
                    if dt > 0 and dx / dt == pytest.approx(0.8, abs=1e-6):
                        moving = fr
                        break
                    prev = fr
                assert moving is not None
                assert moving["seq"] - first["seq"] <= 2

                # pause: t freezes within two frames and stays frozen
                await ws.send(json.dumps({"v": 1, "kind": "pause"}))
                base = await next_frame(ws)
                frames = [await next_frame(ws) for _ in range(8)]
                frozen_t = frames[-1]["t"]
                assert sum(fr["t"] == frozen_t for fr in frames) >= 6
                idx = next(i for i, fr in enumerate(frames) if fr["t"] == frozen_t)
                assert frames[idx]["seq"] - base["seq"] <= 3

                # resume: time moves again
                await ws.send(json.dumps({"v": 1, "kind": "resume"}))
                a = await next_frame(ws)
                b = None
                for _ in range(5):
                    b = await next_frame(ws)
                    if b["t"] > frozen_t:
                        break
                assert b["t"] > frozen_t

                # reset: time returns to the start
                await ws.send(json.dumps({"v": 1, "kind": "reset"}))
                for _ in range(6):
                    fr = await next_frame(ws)
                    if fr["t"] < frozen_t:
                        break
                assert fr["t"] < frozen_t
            server.cancel()

        asyncio.run(scenario())

    def test_malformed_message_keeps_session(self):
        async def scenario():
            port = free_port()
            server = asyncio.create_task(
                serve_async(teleop_config(), port=port, realtime=False, max_ticks=600))
            await asyncio.sleep(0.3)
            async with websockets.connect(f"ws://127.0.0.1:{port}") as ws:
                await recv_json(ws)
                await ws.send("this is not json")
                await ws.send(json.dumps({"v": 1, "kind": "warp_drive"}))
                errors = 0
                frames = 0
                for _ in range(50):
                    msg = await recv_json(ws)
                    if "error" in msg:
                        errors += 1
                    elif "seq" in msg:
                        frames += 1
                assert errors == 2
                assert frames > 0
            server.cancel()

        asyncio.run(scenario())

    def test_frame_precision_round_trip(self):
        from sightline.service import WIRE_PRECISION, encode_frame
        from sightline.sim import Simulation
        cfg = teleop_config()
        sim = Simulation(cfg)
        info = sim.step()
        raw = encode_frame(1, sim, info)
        decoded = json.loads(raw)
        assert json.loads(json.dumps(decoded)) == decoded
        assert decoded["pursuer"][0] == round(sim.x.x, WIRE_PRECISION)
