"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Full planning runs are shared through the session ``plans`` cache, so the
three-box runs of criteria 1, 2, 3, 5 and 9 are planned once.
"""
import re
import subprocess
import sys

import numpy as np
import pytest

from suction_tamp.bench import PHASE_TITLES, TIMING_KEYS, format_report, run_seed, timing_table
from suction_tamp.errors import NoPath, NoSequence, TaskFailure
from suction_tamp.geom import Box, RigidTransform, compose, invert, pose_error
from suction_tamp.graspdb import load_database, shipped_database_path
from suction_tamp.motion import rrt_connect
from suction_tamp.planner import PHASES
from suction_tamp.regrasp import build_graph, delete_edge, search_sequence
from suction_tamp.render import render_frames
from suction_tamp.replay import (EPISODE_PATTERN, GOAL_POS_TOL, GOAL_ROT_TOL, check_event_grammar, object_poses,
                                 state_at_time, validate_trajectory)
from suction_tamp.robot import (ARMS, IK_POS_TOL, IK_ROT_TOL, forward_kinematics, inverse_kinematics, jacobian,
                                manipulability)
from suction_tamp.suction import (Facet, SuctionParams, SuctionPose, extract_facets, sample_suction_poses,
                                  suction_poses_for, tool_pose_on_object)

from conftest import random_transform
from test_motion import grid_connected, query2, wall
from test_regrasp import db_of, oracle_edges, oracle_hops, random_problem
from test_robot import _fd_jacobian, random_q
from test_suction import _brute_force_grid

pytestmark = pytest.mark.slow

SCENES = ("three_blocks", "two_cans", "three_boxes")
SEEDS = [run_seed(0, rep) for rep in range(10)]
ASYMMETRIC = "asymmetric_large"


def _ok(entry):
    """Successful plan result of a cache entry, else None."""
    scene, model, tool, res = entry
    if isinstance(res, TaskFailure):
        return None
    return res if not validate_trajectory(model, tool, scene, res.trajectory) else None


def _all_entries(plans):
    """Every planning run of the suite, both tools on the three-box scene included."""
    for name in SCENES:
        for seed in SEEDS:
            yield plans.get(name, seed=seed)
    for seed in SEEDS:
        yield plans.get("three_boxes", ASYMMETRIC, seed=seed)


def _final_rendered_poses(entry, tmp_path):
    scene, model, tool, res = entry
    t_end = float(res.trajectory.times[-1])
    frame = render_frames(model, tool, scene, res.trajectory, [t_end], tmp_path)[0]
    svg = open(frame).read()
    poses = object_poses(model, state_at_time(model, scene, res.trajectory, t_end))
    drawn = {}
    for name in scene.goals:
        m = re.search(rf'id="object-{name}" data-x="([-\d.e]+)" data-y="([-\d.e]+)" data-z="([-\d.e]+)"', svg)
        drawn[name] = np.array([float(v) for v in m.groups()])
    return poses, drawn


def test_criterion_1_fixtures_plan(plans, criterion, tmp_path):
    with criterion(1, "shipped fixtures reach their goals on >= 9 of 10 seeds") as note:
        counts = {}
        for name in SCENES:
            ok = 0
            for seed in SEEDS:
                entry = plans.get(name, seed=seed)
                if _ok(entry) is None:
                    continue
                scene = entry[0]
                poses, drawn = _final_rendered_poses(entry, tmp_path / f"{name}_{seed}")
                good = True
                for obj, goal in scene.goals.items():
                    dp, da = pose_error(poses[obj], goal)
                    good &= dp <= GOAL_POS_TOL and da <= GOAL_ROT_TOL
                    good &= np.linalg.norm(drawn[obj] - goal.position) <= GOAL_POS_TOL
                ok += bool(good)
            counts[name] = ok
            note.append(f"{name} {ok}/10")
        assert all(v >= 9 for v in counts.values()), counts


def test_criterion_2_timing_envelope(plans, criterion):
    with criterion(2, "three-box per-object planning time <= 120 s, five-phase statistics") as note:
        rows = []
        for seed in SEEDS:
            res = plans.get("three_boxes", seed=seed)[3]
            res = res.partial if isinstance(res, TaskFailure) else res
            if res is not None:
                rows.append({"scene": "three_boxes", "tool": "symmetric_large", "objects": res.stats["objects"]})
        objects = [o for r in rows for o in r["objects"]]
        assert objects
        for o in objects:
            assert set(PHASES) <= set(o) and "total" in o
            # the total is the object's wall clock, phases plus bookkeeping between them
            assert o["total"] >= sum(o[k] for k in PHASES) - 1e-9
        worst = max(o["total"] for o in objects)
        table = timing_table(rows)
        for row in table:
            note.append(f"{row['object']} mean {row['total']:.1f} s")
        note.append(f"worst {worst:.1f} s")
        text = format_report({"repetitions": len(rows), "seed": 0, "timing": table, "success": []})
        assert all(t in text for t in PHASE_TITLES) and len(TIMING_KEYS) == 6
        assert worst <= 120.0


def test_criterion_3_tool_comparison(plans, criterion):
    with criterion(3, "symmetric tool success >= asymmetric, more handover pairs") as note:
        sym = sum(_ok(plans.get("three_boxes", seed=s)) is not None for s in SEEDS)
        asym = sum(_ok(plans.get("three_boxes", ASYMMETRIC, seed=s)) is not None for s in SEEDS)
        n_sym = len(load_database(shipped_database_path("symmetric_large")).handover_pairs)
        n_asym = len(load_database(shipped_database_path(ASYMMETRIC)).handover_pairs)
        note.append(f"success {sym}/10 vs {asym}/10, pairs {n_sym} vs {n_asym}")
        assert sym >= asym
        assert n_sym > n_asym


def test_criterion_4_regrasp_oracle(criterion):
    with criterion(4, "regrasp search matches BFS on 100 graphs, deletion loop bounded") as note:
        rng = np.random.default_rng(2024)
        solved, worst_ratio = 0, 0.0
        for _ in range(100):
            init, goal, pairs = random_problem(rng)
            g = build_graph(db_of(pairs), init, goal)
            assert g.edges == oracle_edges(g)
            n_edges, it = len(g.edges), 0
            while True:
                hops = oracle_hops(g)
                try:
                    seq = search_sequence(g)
                except NoSequence:
                    assert hops is None
                    break
                assert len(seq) - 1 == hops
                solved += it == 0
                delete_edge(g, (seq.nodes[0], seq.nodes[1]))
                it += 1
            assert it <= n_edges
            worst_ratio = max(worst_ratio, it / max(n_edges, 1))
        note.append(f"{solved} solvable graphs, max deletions/edges {worst_ratio:.2f}")


def test_criterion_5_motion_validity(plans, criterion):
    with criterion(5, "planned trajectories valid at 0.02 and 0.002 rad; corridor NoPath matches grid") as note:
        valid = wall()
        assert not grid_connected(valid, [0.0, 0.0], [2.0, 0.0])
        with pytest.raises(NoPath):
            rrt_connect(query2([0.0, 0.0], [2.0, 0.0], valid, max_iterations=300))
        checked, within_margin = 0, 0
        for entry in _all_entries(plans):
            if _ok(entry) is None:
                continue
            scene, model, tool, res = entry
            fine = validate_trajectory(model, tool, scene, res.trajectory, 0.002)
            if fine:
                # disagreements are acceptable only inside the clearance margin
                assert not validate_trajectory(model, tool, scene, res.trajectory, 0.002, margin=0.0), fine
                within_margin += 1
            checked += 1
        note.append(f"{checked} trajectories, {within_margin} with margin-only fine-resolution flags")
        assert checked > 0


def test_criterion_6_kinematics(model, criterion):
    with criterion(6, "IK round trip >= 95%, Jacobian vs finite differences, stretched singularity") as note:
        rng = np.random.default_rng(6)
        ok = 0
        for k in range(200):
            arm = model.arm(ARMS[k % 2])
            target = forward_kinematics(arm, random_q(arm, rng))
            try:
                q = inverse_kinematics(arm, target, rng)
            except Exception:
                continue
            dp, da = pose_error(forward_kinematics(arm, q), target)
            ok += dp <= IK_POS_TOL and da <= IK_ROT_TOL
        note.append(f"IK {ok}/200")
        worst, checked = 0.0, 0
        for k in range(10_000):
            if checked == 100:
                break
            arm = model.arm(ARMS[k % 2])
            q = random_q(arm, rng, 0.98)
            if manipulability(arm, q) < 1e-3:
                continue
            fd = _fd_jacobian(arm, q)
            worst = max(worst, np.max(np.abs(jacobian(arm, q) - fd)) / max(1.0, np.max(np.abs(fd))))
            checked += 1
        note.append(f"Jacobian max error {worst:.1e} over {checked}")
        w0 = max(manipulability(model.arm(s), np.zeros(6)) for s in ARMS)
        note.append(f"stretched manipulability {w0:.1e}")
        assert ok >= 190 and checked == 100 and worst < 1e-5 and w0 < 1e-9


def test_criterion_7_transforms_and_suction(criterion):
    with criterion(7, "composition identity/equivariance, facet grid count, centroid first") as note:
        rng = np.random.default_rng(7)
        ident = RigidTransform.identity()
        for _ in range(200):
            a, w, obj, rel = (random_transform(rng, 2.0) for _ in range(4))
            assert compose(ident, a).allclose(a, 1e-12) and compose(a, ident).allclose(a, 1e-12)
            assert compose(a, invert(a)).allclose(ident, 1e-9)
            s = SuctionPose(rel, 0, rel.position, 0.0)
            assert tool_pose_on_object(compose(w, obj), s).allclose(compose(w, tool_pose_on_object(obj, s)), 1e-9)
        square = Facet.from_polygon((0, 0, 1), [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)])
        for pad, step in ((0.1, 0.25), (0.05, 0.1), (0.12, 0.07)):
            poses = sample_suction_poses([square], pad, step, 0.0, 1)
            assert len(poses) == len(_brute_force_grid(0.0, 1.0, (0.5, 0.5), step, pad))
        box = Box((0.11, 0.055, 0.045))
        poses = suction_poses_for(box, RigidTransform.rot_z(0.4, (0.3, 0.1, 0.045)),
                                  SuctionParams(0.015, 0.02, 0.005, 8))
        top = extract_facets(box)[poses[0].facet_id]
        assert np.allclose(poses[0].contact_point, top.centroid)
        note.append(f"{len(poses)} suction poses on the test box, first at the top centroid")


def test_criterion_8_cli_determinism(criterion, tmp_path):
    with criterion(8, "two identical plan runs give byte-identical trajectory files"):
        outs = []
        for k in range(2):
            out = tmp_path / f"traj{k}.json"
            r = subprocess.run([sys.executable, "-m", "suction_tamp", "-q", "plan", "--scene", "two_cans",
                                "--seed", "3", "--out", str(out)], capture_output=True, text=True)
            assert r.returncode == 0, r.stderr
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


def test_criterion_9_event_grammar(plans, criterion):
    with criterion(9, "episode event strings follow the grammar, grasps chain across episodes") as note:
        checked = 0
        for entry in _all_entries(plans):
            res = _ok(entry)
            if res is None:
                continue
            traj = res.trajectory
            assert not check_event_grammar(traj)
            episodes = sorted({e.payload["episode"] for e in traj.events if e.payload.get("episode", -1) >= 0})
            assert len(episodes) == len(entry[0].goals)
            for ep in episodes:
                assert EPISODE_PATTERN.match(" ".join(traj.event_string(ep)))
            # replay the holder from the events alone
            holder = None
            for ev in sorted(traj.events, key=lambda e: e.index):
                if ev.kind == "grasp":
                    if ev.payload["chained"]:
                        assert holder == (ev.payload["arm"], ev.payload["grasp"])
                    holder = (ev.payload["arm"], ev.payload["grasp"])
                elif ev.kind == "handover_exchange":
                    holder = (ev.payload["receiver"], ev.payload["grasp"])
                elif ev.kind == "release":
                    holder = None
            for a, b in zip(res.episodes, res.episodes[1:]):
                assert a.final_grasp == b.initial_grasp
            checked += 1
        note.append(f"{checked} successful plans checked")
        assert checked > 0
