"""Command-line entry point: run scenarios, ablation sweeps, map inspection,
and the live bridge.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

from .scenario import ScenarioError, load_scenario
from .sim import MetricsReport, compute_metrics, dump_trace, run
from .world import MapFormatError, resolve_map

DEFAULT_OUT_ENV = "SIGHTLINE_OUTPUT_DIR"

ABLATION_ROWS = [
    ("Initialization time", "initialization_time", "s"),
    ("% of time in FoV", "pct_time_in_fov", "%"),
    ("Mean SDF", "mean_sdf", "m"),
    ("Max. relocate time", "max_relocate_time", "s"),
    ("No. of Collisions", "n_collisions", ""),
    ("Control Frequency", "mean_control_frequency", "Hz"),
    ("Min. dist. to obstacles", "min_obstacle_dist", "m"),
]


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(DEFAULT_OUT_ENV, "out")
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _metrics_text(m: MetricsReport) -> str:
    lines = [f"{label}: {getattr(m, key):.6g} {unit}".rstrip()
             for label, key, unit in ABLATION_ROWS]
    return "\n".join(lines) + "\n"


def _cmd_run(args) -> int:
    cfg = load_scenario(args.scenario, overrides=args.override, seed=args.seed,
                        deterministic=True if args.deterministic else None)
    out = _out_dir(args)
    trace, metrics = run(cfg)
    dump_trace(trace, out / f"{cfg.name}_trace.csv")
    (out / f"{cfg.name}_metrics.txt").write_text(_metrics_text(metrics))
    sys.stdout.write(_metrics_text(metrics))
    return 0


def _cmd_ablate(args) -> int:
    out = _out_dir(args)
    results = {}
    for mode in ("planner_only", "controller_only", "full"):
        cfg = load_scenario(args.scenario, overrides=args.override,
                            seed=args.seed, mode=mode,
                            deterministic=True if args.deterministic else None)
        trace, metrics = run(cfg)
        dump_trace(trace, out / f"{cfg.name}_{mode}_trace.csv")
        results[mode] = metrics

    name = Path(args.scenario).stem
    header = ["Metric", "Planner only", "Controller only", "Full system"]
    table_rows = []
    for label, key, unit in ABLATION_ROWS:
        row = [f"{label} ({unit})" if unit else label]
        row += [f"{getattr(results[m], key):.4g}"
                for m in ("planner_only", "controller_only", "full")]
        table_rows.append(row)

    widths = [max(len(r[i]) for r in [header] + table_rows) for i in range(4)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in table_rows]
    text = "\n".join(lines) + "\n"
    (out / f"{name}_ablation.txt").write_text(text)
    with open(out / f"{name}_ablation.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(table_rows)
    sys.stdout.write(text)
    return 0


def _cmd_map_info(args) -> int:
    if args.scenario:
        cfg = load_scenario(args.scenario)
        grid = cfg.build_grid()
    else:
        grid = resolve_map(Path(args.map).read_text()
                           if Path(args.map).exists() else args.map)
    x0, y0, x1, y1 = grid.world_extent()
    occ = grid.n_occupied
    print(f"size: {grid.width} x {grid.height} cells")
    print(f"resolution: {grid.resolution} m")
    print(f"extent: [{x0}, {x1}] x [{y0}, {y1}] m")
    print(f"occupied: {occ} cells ({100.0 * occ / (grid.width * grid.height):.2f}%)")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve
    cfg = load_scenario(args.scenario, overrides=args.override, seed=args.seed)
    print(f"serving {cfg.name} on ws://{args.host}:{args.port}")
    serve(cfg, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sightline",
                                 description="occlusion-aware pursuit simulator")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, scenario_required=True):
        p.add_argument("--scenario", required=scenario_required)
        p.add_argument("--out", default=None,
                       help=f"output directory (default ${DEFAULT_OUT_ENV} or ./out)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--deterministic", action="store_true")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted scenario override")

    p_run = sub.add_parser("run", help="run one scenario, write trace + metrics")
    common(p_run)
    p_run.set_defaults(fn=_cmd_run)

    p_ab = sub.add_parser("ablate", help="run the three modes and tabulate")
    common(p_ab)
    p_ab.set_defaults(fn=_cmd_ablate)

    p_mi = sub.add_parser("map-info", help="print grid statistics")
    p_mi.add_argument("--scenario")
    p_mi.add_argument("--map", help="map file or generator spec")
    p_mi.set_defaults(fn=_cmd_map_info)

    p_sv = sub.add_parser("serve", help="start the live bridge")
    common(p_sv)
    p_sv.add_argument("--port", type=int, default=8765)
    p_sv.add_argument("--host", default="127.0.0.1")
    p_sv.set_defaults(fn=_cmd_serve)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    if args.verb == "map-info" and not (args.scenario or args.map):
        print("error: map-info needs --scenario or --map", file=sys.stderr)
        return 2
    try:
        for attr in ("scenario",):
            val = getattr(args, attr, None)
            if val is not None and not Path(val).exists():
                print(f"error: scenario file {val!r} not found", file=sys.stderr)
                return 2
        return args.fn(args)
    except (ScenarioError, MapFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as e:  # runtime failure
        print(f"runtime failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
