import numpy as np
import pytest

from suction_tamp.errors import FormatError, NoPairs
from suction_tamp.geom import Capsule, RigidTransform, collide_scene, compose, pose_error
from suction_tamp.graspdb import (SHIPPED_TOOLS, ToolModel, compute_handover_pairs, generate_database,
                                  grasp_candidates, grasp_collides, grasp_contacts_handle, load_database,
                                  load_tool, regenerate, sample_tool_grasps, save_database, save_tool,
                                  segment_stations, shipped_database_path)
from suction_tamp.robot import (IK_POS_TOL, IK_ROT_TOL, DualConfig, default_ignore_pairs, forward_kinematics,
                                manipulability, robot_bodies)


def straight_tool(length):
    handle = Capsule(0.01, length + 0.04)
    return ToolModel("stick", (("handle", handle, RigidTransform.rotation_about((0, 1, 0), np.pi / 2,
                                                                                 (length / 2, 0, 0.1))),),
                     (((0, 0, 0.1), (length, 0, 0.1)),), 0.01, 0.02)


@pytest.fixture(scope="module")
def small_db(model):
    return generate_database(model, SHIPPED_TOOLS["symmetric_large"](), seed=3, region_samples=2)


def test_station_enumeration():
    assert np.allclose(segment_stations(0.10, 0.05), [0.0, 0.05, 0.10])
    assert np.allclose(segment_stations(0.03, 0.05), [0.015])
    st = segment_stations(0.11, 0.02)
    assert len(st) == 6 and np.allclose(np.diff(st), 0.02) and st[0] == pytest.approx(0.11 - st[-1])


def test_candidate_count_matches_enumeration():
    tool = straight_tool(0.10)
    cands = grasp_candidates(tool, 0.05, 1)
    assert len(cands) == 3 * 2
    assert len(grasp_candidates(tool, 0.05, 4)) == 3 * 4 * 2
    short = straight_tool(0.03)
    assert len({c.station for c in grasp_candidates(short, 0.05, 1)}) == 1


def test_symmetric_tool_has_more_grasps(model):
    sym = sample_tool_grasps(SHIPPED_TOOLS["symmetric_large"](), model=model)
    asym = sample_tool_grasps(SHIPPED_TOOLS["asymmetric_large"](), model=model)
    assert len(sym) > len(asym) > 0


@pytest.mark.parametrize("name", sorted(SHIPPED_TOOLS))
def test_grasps_revalidate(model, name):
    tool = SHIPPED_TOOLS[name]()
    for g in sample_tool_grasps(tool, model=model):
        assert grasp_contacts_handle(tool, g)
        assert not grasp_collides(model, tool, g)
        # independent containment check: the TCP sits on its segment axis
        p0, p1 = tool.grasp_segments[g.segment]
        a = (p1 - p0) / np.linalg.norm(p1 - p0)
        assert np.allclose(g.hand_pose.position, p0 + g.station * a, atol=1e-12)
        r = g.hand_pose.rotation
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-9) and abs(r[:, 0] @ a) == pytest.approx(1.0)


def test_single_grasp_has_no_pairs(model):
    tool = SHIPPED_TOOLS["symmetric_large"]()
    g = sample_tool_grasps(tool, model=model)[:1]
    with pytest.raises(NoPairs):
        compute_handover_pairs(model, tool, g, 4, 0)


def _pair_bodies(model, tool, pair, jaws):
    c = DualConfig(pair.side("left").config, pair.side("right").config)
    return robot_bodies(model, c, jaws) + tool.bodies(pair.tool_pose)


def revalidate_pair(model, tool, pair):
    assert pair.giver.arm != pair.receiver.arm
    for hs in (pair.giver, pair.receiver):
        arm = model.arm(hs.arm)
        dp, da = pose_error(forward_kinematics(arm, hs.config), compose(pair.tool_pose, hs.grasp.hand_pose))
        assert dp <= IK_POS_TOL and da <= IK_ROT_TOL
    ml = manipulability(model.left, pair.side("left").config)
    mr = manipulability(model.right, pair.side("right").config)
    assert pair.score == pytest.approx(min(ml, mr), rel=1e-9)
    # exact scene check, one hand closed on the handle and the other open
    # the tool's own parts are rigidly joined and touch each other
    parts = [f"tool/{n}" for n, _, _ in tool.body_shapes]
    ign = default_ignore_pairs(model) | {(a, b) for a in parts for b in parts if a < b}
    open_w, closed_w = model.gripper_stroke, tool.handle_width
    for closed in ("left", "right"):
        jaws = (closed_w, open_w) if closed == "left" else (open_w, closed_w)
        extra = {(f"{closed}/finger{k}", "tool/handle") for k in (0, 1)}
        assert not collide_scene(_pair_bodies(model, tool, pair, jaws), ign | extra)


def test_small_db_pairs_revalidate(model, small_db):
    tool = SHIPPED_TOOLS["symmetric_large"]()
    assert small_db.handover_pairs
    for p in small_db.handover_pairs:
        revalidate_pair(model, tool, p)
    scores = [p.score for p in small_db.handover_pairs]
    assert scores == sorted(scores, reverse=True)


def test_database_round_trip(small_db, tmp_path):
    path = tmp_path / "db.json"
    save_database(small_db, path)
    assert load_database(path) == small_db
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(FormatError):
        load_database(path)


def test_regeneration_and_determinism(model, small_db, tmp_path):
    tool = SHIPPED_TOOLS["symmetric_large"]()
    save_database(small_db, tmp_path / "a.json")
    loaded = load_database(tmp_path / "a.json")
    again = regenerate(loaded, model, tool)
    assert again == loaded
    save_database(again, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_tool_file_round_trip(tmp_path):
    for name, make in SHIPPED_TOOLS.items():
        save_tool(make(), tmp_path / f"{name}.json")
        t = load_tool(tmp_path / f"{name}.json")
        assert t.name == name and len(t.body_shapes) == 3


@pytest.mark.parametrize("name", sorted(SHIPPED_TOOLS))
def test_shipped_database(model, name):
    path = shipped_database_path(name)
    if not path.exists():
        pytest.skip("database not generated")
    db = load_database(path)
    tool = SHIPPED_TOOLS[name]()
    assert db.tool_name == name and len(db.handover_pairs) >= 1
    assert len(db.grasps) == len(sample_tool_grasps(tool, model=model))
    for p in db.handover_pairs[:: max(1, len(db.handover_pairs) // 25)]:
        revalidate_pair(model, tool, p)
