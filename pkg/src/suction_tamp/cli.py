"""Command-line driver: gendb / plan / validate / bench / render.

Exit codes: 0 success, 2 planning failure (or an invalid trajectory),
3 bad input.  Logs go to standard error; machine output goes to files.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .bench import PHASE_TITLES, TIMING_KEYS, bench, format_report, load_suite, with_tool, write_report
from .errors import InputError, PlanningError, TaskFailure, TimeOutOfRange
from .graspdb import (generate_database, load_database, load_tool, save_database,
                      shipped_database_path)
from .jsonio import write_json
from .planner import PlannerParams, plan_task
from .render import render_frames
from .replay import validate_trajectory
from .robot import load_robot
from .scene import parse_scene, read_trajectory, write_trajectory

log = logging.getLogger("suction_tamp")

EXIT_OK = 0
EXIT_PLANNING = 2
EXIT_INPUT = 3


def _scene_and_tool(args):
    scene = parse_scene(args.scene)
    if getattr(args, "tool", None):
        scene = with_tool(scene, args.tool)
    return scene, load_robot(scene.robot), load_tool(scene.tool)


def cmd_gendb(args) -> int:
    model = load_robot(args.robot)
    tool = load_tool(args.tool)
    t0 = time.perf_counter()
    db = generate_database(model, tool, args.seed, args.grasp_step, args.spin_count, args.region_samples)
    save_database(db, args.out)
    log.info("%d grasps, %d handover pairs in %.1f s -> %s", len(db.grasps), len(db.handover_pairs),
             time.perf_counter() - t0, args.out)
    return EXIT_OK


def cmd_plan(args) -> int:
    scene, model, tool = _scene_and_tool(args)
    db = load_database(args.db or shipped_database_path(scene.tool))
    if db.tool_name != tool.name:
        raise InputError(f"database is for tool {db.tool_name!r}, scene uses {tool.name!r}")
    params = PlannerParams(stow_tool=args.stow_tool, wall_clock=args.time_limit)
    try:
        res = plan_task(model, tool, db, scene, args.seed, params, dump_graph=args.dump_graph is not None)
    except TaskFailure as exc:
        log.error("%s", exc)
        for name, diag in exc.diagnosis.items():
            log.error("  %s: %s", name, json.dumps(diag, default=str))
        return EXIT_PLANNING
    write_trajectory(res.trajectory, args.out)
    log.info("trajectory: %d samples, %d events, %.2f s -> %s", len(res.trajectory),
             len(res.trajectory.events), res.trajectory.times[-1] if len(res.trajectory) else 0.0, args.out)
    head = f"{'object':<12}" + "".join(f"{t:>11}" for t in PHASE_TITLES)
    log.info("%s", head)
    for row in res.stats["objects"]:
        log.info("%s", f"{row['object']:<12}" + "".join(f"{row[k]:>11.2f}" for k in TIMING_KEYS))
    if args.stats:
        write_json({"format": "suction_tamp/plan_stats", "format_version": 1, "units": {"time": "s"},
                    **res.stats}, args.stats)
    if args.dump_graph is not None:
        Path(args.dump_graph).write_text("\n".join(res.graphs))
        log.info("regrasp graphs -> %s", args.dump_graph)
    return EXIT_OK


def cmd_validate(args) -> int:
    scene, model, tool = _scene_and_tool(args)
    traj = read_trajectory(args.traj)
    problems = validate_trajectory(model, tool, scene, traj, args.resolution, check_goals=not args.no_goals)
    for p in problems:
        log.error("%s", p)
    if problems:
        return EXIT_PLANNING
    log.info("trajectory is valid (%d samples)", len(traj))
    return EXIT_OK


def cmd_bench(args) -> int:
    scenes = load_suite(args.suite)
    report = bench(scenes, args.reps, args.seed, args.tools, args.db_dir,
                   PlannerParams(wall_clock=args.time_limit), args.jobs)
    if args.out:
        write_report(report, args.out)
    text = format_report(report)
    if args.table:
        Path(args.table).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_render(args) -> int:
    scene, model, tool = _scene_and_tool(args)
    traj = read_trajectory(args.traj)
    paths = render_frames(model, tool, scene, traj, args.times, args.out, args.view)
    log.info("wrote %d frame(s) to %s", len(paths), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="suction-tamp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("-q", "--quiet", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gendb", help="precompute grasps and handover pairs for a tool")
    p.add_argument("--tool", required=True, help="shipped tool name or tool file")
    p.add_argument("--robot", default="default", help="robot file or 'default'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--grasp-step", type=float, default=0.02)
    p.add_argument("--spin-count", type=int, default=8)
    p.add_argument("--region-samples", type=int, default=64)
    p.set_defaults(func=cmd_gendb)

    p = sub.add_parser("plan", help="plan a scene and write the trajectory")
    p.add_argument("--scene", required=True, help="scene file or shipped scene name")
    p.add_argument("--db", type=Path, help="grasp database (default: the shipped one for the tool)")
    p.add_argument("--tool", help="replace the scene's tool")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--stats", type=Path, help="write per-object phase timings here")
    p.add_argument("--stow-tool", action="store_true", help="put the tool back at the end")
    p.add_argument("--dump-graph", type=Path, metavar="DOT", help="write the regrasp graphs in DOT format")
    p.add_argument("--time-limit", type=float, default=PlannerParams.wall_clock)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("validate", help="replay a trajectory and check it")
    p.add_argument("--traj", required=True, type=Path)
    p.add_argument("--scene", required=True)
    p.add_argument("--tool", help="replace the scene's tool")
    p.add_argument("--resolution", type=float, default=0.02)
    p.add_argument("--no-goals", action="store_true", help="do not require the goals to be reached")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="timing and success-rate tables over seeded runs")
    p.add_argument("--suite", required=True, help="directory of scene files, or one scene")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tools", nargs="+", help="run every scene with each of these tools")
    p.add_argument("--db-dir", type=Path, help="directory of <tool>.json databases")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--time-limit", type=float, default=PlannerParams.wall_clock)
    p.add_argument("--out", type=Path, help="JSON report")
    p.add_argument("--table", type=Path, help="human-readable report")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", help="SVG frames of a trajectory")
    p.add_argument("--traj", required=True, type=Path)
    p.add_argument("--scene", required=True)
    p.add_argument("--tool", help="replace the scene's tool")
    p.add_argument("--times", required=True, type=float, nargs="+")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--view", choices=("top", "side"), default="top")
    p.set_defaults(func=cmd_render)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    if args.verbose < 1:
        # per-object progress from the planner is enough at the default level
        logging.getLogger("suction_tamp.graspdb").setLevel(max(level, logging.WARNING))
    try:
        return args.func(args)
    except (InputError, OSError, TimeOutOfRange) as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT
    except PlanningError as exc:
        log.error("planning error: %s", exc)
        return EXIT_PLANNING


if __name__ == "__main__":
    sys.exit(main())
