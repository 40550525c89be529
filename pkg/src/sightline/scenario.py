"""Scenario documents: the structured config a run is built from.

YAML with a versioned `schema: 1` marker. Unknown keys anywhere are
rejected rather than ignored, so typos in overrides fail loudly. Dotted
overrides (`controller.lam=100`) are applied before validation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .agents import EvaderModel, LissajousParams, PursuerState, WaypointParams
from .controller import ControllerConfig
from .estimator import TrackerConfig
from .fov import FovParams
from .planner import SstParams
from .world import OccupancyGrid, resolve_map

SCHEMA_VERSION = 1
MODES = ("planner_only", "controller_only", "full")


class ScenarioError(ValueError):
    """Malformed scenario document or override."""


@dataclass
class LidarConfig:
    n_rays: int = 180
    max_range: float = 10.0


@dataclass
class CbfConfig:
    eps: float = 0.05            # floored at 2x map resolution at build time
    smooth_tol: float = 0.1
    nullspace_samples: int = 4
    n_nearest: int = 5


@dataclass
class ScenarioConfig:
    name: str
    map_source: str
    start_pose: tuple[float, float, float]
    mode: str = "full"
    seed: int = 0
    control_rate: float = 50.0
    replan_period: float = 2.0
    run_duration: float = 60.0
    deterministic: bool = True
    fov: FovParams = field(default_factory=lambda: FovParams(8.0, math.radians(30.0), 128))
    lidar: LidarConfig = field(default_factory=LidarConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    cbf: CbfConfig = field(default_factory=CbfConfig)
    planner: SstParams = field(default_factory=SstParams)
    estimator: TrackerConfig = field(default_factory=TrackerConfig)
    evader: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ScenarioError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.control_rate <= 0 or self.run_duration <= 0:
            raise ScenarioError("control_rate and run_duration must be positive")

    def build_grid(self) -> OccupancyGrid:
        src = self.map_source
        if src.endswith(".map") or src.endswith(".txt"):
            src = Path(src).read_text()
        return resolve_map(src)

    def build_evader(self) -> EvaderModel:
        spec = dict(self.evader)
        kind = spec.pop("kind", None)
        if kind == "lissajous":
            p = LissajousParams(A=spec.pop("A"), a=spec.pop("a"),
                                B=spec.pop("B"), b=spec.pop("b"),
                                gamma=spec.pop("gamma"),
                                center=tuple(spec.pop("center", (0.0, 0.0))))
            model = EvaderModel.lissajous(p)
        elif kind == "waypoints":
            p = WaypointParams(points=[tuple(q) for q in spec.pop("points")],
                               speed=float(spec.pop("speed")),
                               loop=bool(spec.pop("loop", False)))
            model = EvaderModel.waypoints(p)
        elif kind == "external":
            model = EvaderModel.external(tuple(spec.pop("start")), float(spec.pop("k")))
        else:
            raise ScenarioError(f"unknown evader kind {kind!r}")
        if spec:
            raise ScenarioError(f"unknown evader keys {sorted(spec)}")
        return model


_SECTION_FIELDS = {
    "fov": {"range", "half_angle", "n_rays"},
    "lidar": {"n_rays", "max_range"},
    "controller": {"gamma_v", "gamma_s", "lam", "u_box", "robot_radius",
                   "standoff", "k_v", "k_omega", "lookahead", "scan_omega",
                   "safety_margin"},
    "cbf": {"eps", "smooth_tol", "nullspace_samples", "n_nearest"},
    "planner": {"iter_budget", "wall_budget", "delta_bn", "delta_s",
                "duration_range", "goal_margin", "goal_bias", "substep", "w_theta",
                "refine_iters"},
    "estimator": {"q", "r", "timeout", "speed_bound", "gated"},
}
_TOP_FIELDS = {"schema", "name", "map", "start_pose", "mode", "seed",
               "control_rate", "replan_period", "run_duration", "deterministic",
               "evader"} | set(_SECTION_FIELDS)


def _check_keys(given: dict, allowed: set, where: str):
    unknown = set(given) - allowed
    if unknown:
        raise ScenarioError(f"unknown keys {sorted(unknown)} in {where}")


def parse_scenario(doc: dict) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    if doc.get("schema") != SCHEMA_VERSION:
        raise ScenarioError(f"scenario schema must be {SCHEMA_VERSION}")
    _check_keys(doc, _TOP_FIELDS, "scenario")
    for section, fields_ in _SECTION_FIELDS.items():
        if section in doc:
            if not isinstance(doc[section], dict):
                raise ScenarioError(f"{section} must be a mapping")
            _check_keys(doc[section], fields_, section)
    try:
        fov_kw = dict(doc.get("fov", {}))
        if "half_angle" in fov_kw:
            fov_kw["half_angle"] = float(fov_kw["half_angle"])
        cfg = ScenarioConfig(
            name=str(doc.get("name", "scenario")),
            map_source=doc["map"],
            start_pose=tuple(float(v) for v in doc["start_pose"]),
            mode=doc.get("mode", "full"),
            seed=int(doc.get("seed", 0)),
            control_rate=float(doc.get("control_rate", 50.0)),
            replan_period=float(doc.get("replan_period", 2.0)),
            run_duration=float(doc.get("run_duration", 60.0)),
            deterministic=bool(doc.get("deterministic", True)),
            fov=FovParams(**fov_kw) if fov_kw else FovParams(8.0, math.radians(30.0), 128),
            lidar=LidarConfig(**doc.get("lidar", {})),
            controller=_build_controller(doc.get("controller", {})),
            cbf=CbfConfig(**doc.get("cbf", {})),
            planner=_build_planner(doc.get("planner", {})),
            estimator=TrackerConfig(**doc.get("estimator", {})),
            evader=dict(doc.get("evader", {})),
        )
    except KeyError as e:
        raise ScenarioError(f"scenario missing required key {e.args[0]!r}") from e
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"bad scenario value: {e}") from e
    return cfg


def _build_controller(d: dict) -> ControllerConfig:
    kw = dict(d)
    if "u_box" in kw:
        (v_lo, v_hi), (w_lo, w_hi) = kw["u_box"]
        kw["u_box"] = ((float(v_lo), float(v_hi)), (float(w_lo), float(w_hi)))
    return ControllerConfig(**kw)


def _build_planner(d: dict) -> SstParams:
    kw = dict(d)
    if "duration_range" in kw:
        kw["duration_range"] = tuple(float(v) for v in kw["duration_range"])
    return SstParams(**kw)


def load_scenario(path: str | Path, overrides: list[str] | None = None,
                  **extra) -> ScenarioConfig:
    """Load a scenario file, apply `section.key=value` overrides, validate.

    extra: keyword overrides applied last (seed=..., mode=..., etc.).
    """
    doc = yaml.safe_load(Path(path).read_text())
    for ov in overrides or []:
        if "=" not in ov:
            raise ScenarioError(f"override {ov!r} is not key=value")
        key, val = ov.split("=", 1)
        _apply_override(doc, key.strip(), yaml.safe_load(val))
    for k, v in extra.items():
        if v is not None:
            doc[k] = v
    return parse_scenario(doc)


def _apply_override(doc: dict, dotted: str, value):
    parts = dotted.split(".")
    node = doc
    for p in parts[:-1]:
        if p not in _TOP_FIELDS:
            raise ScenarioError(f"unknown override section {p!r}")
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ScenarioError(f"override path {dotted!r} does not address a mapping")
    leaf = parts[-1]
    if len(parts) == 1:
        if leaf not in _TOP_FIELDS:
            raise ScenarioError(f"unknown override key {leaf!r}")
    else:
        allowed = _SECTION_FIELDS.get(parts[0])
        if parts[0] == "evader":
            allowed = None  # evader payload is validated by build_evader
        elif allowed is None or leaf not in allowed:
            raise ScenarioError(f"unknown override key {dotted!r}")
    node[leaf] = value
