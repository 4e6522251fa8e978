"""Repeated seeded planning runs summarised as timing and success-rate tables.

The timing table has one row per object with the five planner phases
(suction / regrasp 1 / motion 1 / regrasp 2 / motion 2) plus the total, as
means over the runs in which that object was planned.  The success table
has one row per (scene, tool).  Everything in the report except the
``*_time``-style measurements is a deterministic function of the inputs.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import TaskFailure
from .graspdb import load_database, load_tool, shipped_database_path
from .jsonio import FORMAT_VERSION, write_json
from .planner import PHASES, PlannerParams, plan_task
from .replay import validate_trajectory
from .robot import load_robot
from .scene import parse_scene, validate_scene

log = logging.getLogger(__name__)

TIMING_KEYS = PHASES + ("total",)
PHASE_TITLES = ("Suction", "Regrasp-1", "Motion-1", "Regrasp-2", "Motion-2", "Total")


def run_seed(seed: int, rep: int) -> int:
    """Seed of repetition ``rep``; independent of how runs are scheduled."""
    return int(np.random.SeedSequence([seed, rep]).generate_state(1)[0] % (2 ** 31 - 1))


def database_for(tool_name: str, db_dir=None):
    path = Path(db_dir) / f"{tool_name}.json" if db_dir else shipped_database_path(tool_name)
    return load_database(path)


def with_tool(scene, tool_name: str):
    """``scene`` with its tool swapped (same resting pose), re-validated."""
    if tool_name == scene.tool:
        return scene
    out = dataclasses.replace(scene, tool=tool_name)
    validate_scene(out, load_tool(tool_name))
    return out


def single_run(scene, tool_name: str, seed: int, db_dir=None, params: PlannerParams = PlannerParams(),
               validate: bool = True) -> dict:
    """Plan once; failures are recorded, never raised."""
    scene = with_tool(scene, tool_name)
    model = load_robot(scene.robot)
    tool = load_tool(tool_name)
    db = database_for(tool_name, db_dir)
    t0 = time.perf_counter()
    out = {"scene": scene.name, "tool": tool_name, "seed": seed}
    try:
        res = plan_task(model, tool, db, scene, seed, params)
        out["failure"] = None
    except TaskFailure as exc:
        res = exc.partial
        out["failure"] = str(exc)
    out["plan_time"] = time.perf_counter() - t0
    out["objects"] = res.stats["objects"] if res is not None else []
    problems = []
    if out["failure"] is None and validate:
        problems = validate_trajectory(model, tool, scene, res.trajectory)
    out["problems"] = problems
    out["success"] = out["failure"] is None and not problems
    out["handovers"] = sum(k.count("handover") for e in (res.episodes if res else []) for k in
                           (e.kinds1, e.kinds2))
    return out


def _single_run_args(args):
    return single_run(*args)


def bench(scenes, repetitions: int, seed: int = 0, tools=None, db_dir=None,
          params: PlannerParams = PlannerParams(), jobs: int = 1, validate: bool = True) -> dict:
    """Run every scene with every tool ``repetitions`` times.

    ``scenes`` holds Scene objects; ``tools`` defaults to each scene's own
    tool.  Runs go to a process pool when ``jobs`` > 1.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    jobs_list = []
    for sc in scenes:
        for tool in (tools or [sc.tool]):
            for rep in range(repetitions):
                jobs_list.append((sc, tool, run_seed(seed, rep), db_dir, params, validate))
    t0 = time.perf_counter()
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            runs = list(pool.map(_single_run_args, jobs_list))
    else:
        runs = []
        for args in jobs_list:
            runs.append(single_run(*args))
            r = runs[-1]
            log.info("%s / %s / seed %d: %s in %.1f s", r["scene"], r["tool"], r["seed"],
                     "ok" if r["success"] else "FAILED", r["plan_time"])
    return {
        "format": "suction_tamp/bench",
        "format_version": FORMAT_VERSION,
        "units": {"time": "s"},
        "seed": seed,
        "repetitions": repetitions,
        "runs": runs,
        "timing": timing_table(runs),
        "success": success_table(runs, db_dir),
        "bench_time": time.perf_counter() - t0,
    }


def timing_table(runs) -> list:
    """Mean per-phase times per (scene, tool, object) over the runs that planned the object."""
    groups = {}
    for r in runs:
        for o in r["objects"]:
            groups.setdefault((r["scene"], r["tool"], o["object"]), []).append(o)
    rows = []
    for (scene, tool, obj), items in groups.items():
        row = {"scene": scene, "tool": tool, "object": obj, "runs": len(items)}
        for k in TIMING_KEYS:
            row[k] = float(np.mean([it[k] for it in items]))
        rows.append(row)
    return rows


def success_table(runs, db_dir=None) -> list:
    groups = {}
    for r in runs:
        groups.setdefault((r["scene"], r["tool"]), []).append(r)
    rows = []
    for (scene, tool), items in groups.items():
        db = database_for(tool, db_dir)
        ok = sum(r["success"] for r in items)
        rows.append({"scene": scene, "tool": tool, "runs": len(items), "successes": ok,
                     "success_rate": ok / len(items), "grasps": len(db.grasps),
                     "handover_pairs": len(db.handover_pairs)})
    return rows


def deterministic_part(report: dict) -> dict:
    """The report without wall-clock measurements."""
    def strip(x):
        if isinstance(x, dict):
            return {k: strip(v) for k, v in x.items() if k not in TIMING_KEYS and not k.endswith("_time")}
        if isinstance(x, list):
            return [strip(v) for v in x]
        return x
    return strip(report)


def format_report(report: dict) -> str:
    lines = [f"Planning time per object (s), mean over {report['repetitions']} run(s), seed {report['seed']}", ""]
    head = f"{'scene':<14}{'tool':<18}{'object':<10}" + "".join(f"{t:>11}" for t in PHASE_TITLES)
    lines += [head, "-" * len(head)]
    for row in report["timing"]:
        lines.append(f"{row['scene']:<14}{row['tool']:<18}{row['object']:<10}"
                     + "".join(f"{row[k]:>11.2f}" for k in TIMING_KEYS))
    lines += ["", "Success rate per tool", ""]
    head = f"{'scene':<14}{'tool':<18}{'success':>10}{'rate':>8}{'grasps':>8}{'pairs':>8}"
    lines += [head, "-" * len(head)]
    for row in report["success"]:
        lines.append(f"{row['scene']:<14}{row['tool']:<18}{row['successes']:>6}/{row['runs']:<3}"
                     f"{row['success_rate']:>8.0%}{row['grasps']:>8}{row['handover_pairs']:>8}")
    return "\n".join(lines) + "\n"


def write_report(report: dict, path) -> None:
    write_json(report, path)


def load_suite(path) -> list:
    """Scenes of a suite: a directory of scene files or a single scene file/name."""
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.json"))
        if not files:
            raise FileNotFoundError(f"no scene files in {p}")
        return [parse_scene(f) for f in files]
    return [parse_scene(path)]
