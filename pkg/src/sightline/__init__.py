"""sightline: occlusion-aware pursuit on 2D occupancy grids.

A differential-drive pursuer keeps a moving evader inside its sensor
footprint by filtering reference controls through a convex program whose
rows come from two non-smooth barrier functions (signed distance of the
evader to the occluded view, and distance to scanned obstacles), with a
sparse kinodynamic planner supplying non-myopic references.
"""
from .agents import ControlInput, EvaderModel, LissajousParams, PursuerState, WaypointParams
from .cbf import GradientSet, PerturbationScheme, safety_cbf, visibility_barrier, visibility_gradient, visibility_value
from .controller import ControllerConfig, ControlOutput, control_step, fallback_reference
from .estimator import EvaderEstimate, Tracker, TrackerConfig
from .fov import FovParams, FovPolygon, contains, fov_signed_distance, occluded_fov
from .planner import PlanResult, ReferenceTrajectory, SstParams, goal_satisfied, plan, propagate
from .qp import QpProblem, QpSolution, solve
from .scenario import ScenarioConfig, load_scenario, parse_scenario
from .sim import MetricsReport, Simulation, TraceRecord, compute_metrics, dump_trace, run
from .world import OccupancyGrid, PointCloud, dump_map, generate_map, load_map, obstacle_distance, simulate_lidar

__version__ = "0.1.0"
