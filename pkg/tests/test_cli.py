import json
import subprocess
import sys

import pytest

from suction_tamp.bench import (TIMING_KEYS, bench, deterministic_part, format_report, run_seed, single_run)
from suction_tamp.cli import EXIT_INPUT, EXIT_OK, EXIT_PLANNING, main
from suction_tamp.graspdb import load_database
from suction_tamp.planner import PlannerParams
from suction_tamp.scene import DATA_DIR, parse_scene, read_trajectory, shipped_scenes, write_trajectory


def one_can_scene(tmp_path):
    d = json.loads((DATA_DIR / "scenes" / "two_cans.json").read_text())
    d["name"] = "one_can"
    d["objects"] = d["objects"][:1]
    p = tmp_path / "one_can.json"
    p.write_text(json.dumps(d))
    return p


def test_missing_scene_is_input_error(tmp_path):
    assert main(["-q", "plan", "--scene", str(tmp_path / "nope.json"), "--out", str(tmp_path / "t.json")]) \
        == EXIT_INPUT
    assert not (tmp_path / "t.json").exists()


def test_schema_error_is_input_error(tmp_path):
    d = json.loads((DATA_DIR / "scenes" / "two_cans.json").read_text())
    d["objects"][0]["colour"] = "red"
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    assert main(["-q", "plan", "--scene", str(p), "--out", str(tmp_path / "t.json")]) == EXIT_INPUT


def test_database_tool_mismatch(tmp_path):
    db = DATA_DIR / "db" / "asymmetric_large.json"
    assert main(["-q", "plan", "--scene", "two_cans", "--db", str(db), "--out", str(tmp_path / "t.json")]) \
        == EXIT_INPUT


def test_planning_failure_exit_code(tmp_path):
    assert main(["-q", "plan", "--scene", "two_cans", "--time-limit", "0", "--out", str(tmp_path / "t.json")]) \
        == EXIT_PLANNING


def test_validate_exit_codes(plans, tmp_path):
    scene, model, tool, res = plans.get("two_cans", seed=run_seed(0, 0))
    good = tmp_path / "good.json"
    write_trajectory(res.trajectory, good)
    assert main(["-q", "validate", "--traj", str(good), "--scene", "two_cans"]) == EXIT_OK
    broken = read_trajectory(good)
    broken.left[len(broken) // 2] += 1.0  # a teleport in the middle of the plan
    bad = tmp_path / "bad.json"
    write_trajectory(broken, bad)
    assert main(["-q", "validate", "--traj", str(bad), "--scene", "two_cans"]) == EXIT_PLANNING
    assert main(["-q", "validate", "--traj", str(tmp_path / "missing.json"), "--scene", "two_cans"]) == EXIT_INPUT


def test_gendb_small(tmp_path):
    out = tmp_path / "db.json"
    assert main(["-q", "gendb", "--tool", "symmetric_small", "--seed", "1", "--out", str(out),
                 "--spin-count", "4", "--region-samples", "4"]) == EXIT_OK
    db = load_database(out)
    assert db.tool_name == "symmetric_small"
    assert 0 < len(db.grasps) <= 156
    assert 0 < len(db.handover_pairs) <= 4 * 8


def test_bench_single_object_shape_and_determinism(tmp_path):
    scene = parse_scene(one_can_scene(tmp_path))
    a = bench([scene], 1, seed=5)
    assert len(a["timing"]) == 1
    row = a["timing"][0]
    assert row["object"] == "can_a" and row["runs"] == 1
    assert all(isinstance(row[k], float) and row[k] >= 0 for k in TIMING_KEYS)
    assert row["total"] >= sum(row[k] for k in TIMING_KEYS[:-1]) - 1e-9
    (s,) = a["success"]
    assert s["successes"] == 1 and s["success_rate"] == 1.0
    assert s["grasps"] == 156 and s["handover_pairs"] == 512
    b = bench([scene], 1, seed=5)
    assert deterministic_part(a) == deterministic_part(b)
    assert "Suction" in format_report(a) and "100%" in format_report(a)


def test_bench_counts_failures():
    scene = parse_scene("two_cans")
    r = single_run(scene, "symmetric_small", 0, params=PlannerParams(wall_clock=0.0))
    assert not r["success"] and r["failure"]
    with pytest.raises(ValueError):
        bench([scene], 0)


def test_bench_cli_writes_reports(tmp_path):
    scene = one_can_scene(tmp_path)
    out, table = tmp_path / "b.json", tmp_path / "b.txt"
    r = subprocess.run([sys.executable, "-m", "suction_tamp", "-q", "bench", "--suite", str(scene), "--reps", "1",
                        "--out", str(out), "--table", str(table)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    report = json.loads(out.read_text())
    assert report["format"] == "suction_tamp/bench" and len(report["runs"]) == 1
    assert r.stdout == table.read_text()


@pytest.mark.parametrize("name", shipped_scenes())
def test_pipeline_on_shipped_fixtures(plans, tmp_path, name):
    scene, model, tool, res = plans.get(name, seed=run_seed(0, 0))
    traj = tmp_path / "traj.json"
    write_trajectory(res.trajectory, traj)
    again = read_trajectory(traj)
    assert len(again) == len(res.trajectory)
    t_end = float(again.times[-1])
    frames = tmp_path / "frames"
    assert main(["-q", "render", "--traj", str(traj), "--scene", name, "--times", "0", str(t_end / 2), str(t_end),
                 "--out", str(frames)]) == EXIT_OK
    assert len(list(frames.glob("*.svg"))) == 3
    assert main(["-q", "render", "--traj", str(traj), "--scene", name, "--times", str(t_end + 1),
                 "--out", str(frames)]) == EXIT_INPUT


def test_plan_cli_writes_stats_and_graph(tmp_path):
    scene = one_can_scene(tmp_path)
    out, stats, dot = tmp_path / "t.json", tmp_path / "s.json", tmp_path / "g.dot"
    assert main(["-q", "plan", "--scene", str(scene), "--seed", "2", "--out", str(out), "--stats", str(stats),
                 "--dump-graph", str(dot)]) == EXIT_OK
    assert main(["-q", "validate", "--traj", str(out), "--scene", str(scene)]) == EXIT_OK
    s = json.loads(stats.read_text())
    assert [o["object"] for o in s["objects"]] == ["can_a"]
    assert dot.read_text().count("graph regrasp {") == 2
