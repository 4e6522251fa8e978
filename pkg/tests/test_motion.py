import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from suction_tamp.collision import ArmChecker, HeldState, body_solids, tcp_pose, torso_solids
from suction_tamp.errors import InvalidQuery, NoPath
from suction_tamp.geom import Body, Box, RigidTransform, compose
from suction_tamp.motion import (MotionQuery, Path, RRTParams, interpolate, plan_motion, rrt_connect,
                                 shortcut_path, time_parameterize, validate_path)

LO2, HI2 = np.array([-np.pi, -np.pi]), np.array([np.pi, np.pi])


def wall(x0=0.9, x1=1.1, gap=None):
    def valid(qs):
        qs = np.atleast_2d(qs)
        hit = (qs[:, 0] >= x0) & (qs[:, 0] <= x1)
        if gap is not None:
            hit &= ~((qs[:, 1] > gap[0]) & (qs[:, 1] < gap[1]))
        return ~hit
    return valid


def free(qs):
    return np.ones(len(np.atleast_2d(qs)), bool)


def query2(start, goal, valid, **kw):
    return MotionQuery("left", start, goal, LO2, HI2, valid, RRTParams(**kw))


def grid_connected(valid, start, goal, cell=0.02):
    """Independent oracle: 4-connected flood fill over cell centres."""
    xs = np.arange(LO2[0] + cell / 2, HI2[0], cell)
    ys = np.arange(LO2[1] + cell / 2, HI2[1], cell)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    ok = valid(np.stack([gx.ravel(), gy.ravel()], 1)).reshape(gx.shape)
    lab, _ = ndimage.label(ok)
    cell_of = lambda q: tuple(np.clip(((np.asarray(q) - LO2) // cell).astype(int), 0, len(xs) - 1))
    a, b = lab[cell_of(start)], lab[cell_of(goal)]
    return a != 0 and a == b


def test_start_equals_goal_single_waypoint():
    p = rrt_connect(query2([0.1, 0.2], [0.1, 0.2], free))
    assert len(p.waypoints) == 1


def test_free_space_straight_line():
    q = query2([-1.0, -1.0], [1.0, 0.5], free)
    p = rrt_connect(q)
    assert len(p.waypoints) == 2 and validate_path(p, q)
    # arc length along the chain grows monotonically toward the goal
    w = p.array()
    assert np.all(np.diff(np.linalg.norm(w - w[0], axis=1)) > 0)


def test_blocked_corridor_no_path_matches_grid_oracle():
    valid = wall()
    start, goal = [0.0, 0.0], [2.0, 0.0]
    assert not grid_connected(valid, start, goal)
    with pytest.raises(NoPath):
        rrt_connect(query2(start, goal, valid, max_iterations=300))


def test_slit_corridor_found_and_matches_grid_oracle():
    valid = wall(gap=(0.5, 0.7))
    start, goal = [0.0, 0.0], [2.0, 0.0]
    assert grid_connected(valid, start, goal)
    q = query2(start, goal, valid, max_iterations=5000)
    p = rrt_connect(q)
    assert validate_path(p, q)
    assert validate_path(p, q, q.params.validation_resolution / 10)


def test_invalid_endpoints_are_not_no_path():
    with pytest.raises(InvalidQuery):
        rrt_connect(query2([1.0, 0.0], [2.0, 0.0], wall()))
    with pytest.raises(InvalidQuery):
        rrt_connect(query2([0.0, 0.0], [1.0, 0.0], wall()))
    with pytest.raises(InvalidQuery):
        rrt_connect(query2([0.0, 0.0], [4.0, 0.0], free))


def test_params_must_be_positive():
    with pytest.raises(ValueError):
        RRTParams(step_size=0)
    with pytest.raises(ValueError):
        RRTParams(validation_resolution=-1)


def test_validate_path_rejects_teleport_and_wrong_ends():
    valid = wall()
    q = query2([0.0, 0.0], [0.5, 0.5], valid)
    good = Path([np.array([0.0, 0.0]), np.array([0.5, 0.5])])
    assert validate_path(good, q)
    bad = Path([np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([0.5, 0.5])])
    assert not validate_path(bad, q)
    assert not validate_path(Path([np.array([0.0, 0.0]), np.array([0.4, 0.5])]), q)
    assert not validate_path(Path([]), q)


def test_validation_resolution_catches_thin_walls():
    # a 0.01 rad wall slips between 0.02 rad samples only at coarse resolution
    valid = wall(1.0, 1.005)
    q = query2([0.0, 0.013], [2.0, 0.013], free)
    p = Path([q.start, q.goal])
    q.valid = valid
    assert not validate_path(p, q, 0.002)


def test_plan_motion_replans_paths_that_clip_thin_walls():
    # samples of the straight line at 0.02 rad land at x = 1.00 and 1.02, both outside the wall
    valid = wall(1.005, 1.012, gap=(0.5, 0.7))
    q = query2([0.0, 0.013], [2.0, 0.013], valid, max_iterations=5000)
    raw = rrt_connect(q)
    assert validate_path(raw, q) and not validate_path(raw, q, 0.002)
    for seed in range(5):
        q = query2([0.0, 0.013], [2.0, 0.013], valid, max_iterations=5000, seed=seed)
        p = plan_motion(q)
        assert validate_path(p, q) and validate_path(p, q, 0.002)
        assert np.any((p.array()[:, 1] > 0.5) & (p.array()[:, 1] < 0.7))


def test_random_planned_paths_agree_with_finer_resolution():
    # planning sees the wall inflated by a margin, the fine check sees the true wall
    margin = 0.02
    planned = wall(0.9 - margin, 1.1 + margin, gap=(-0.2 + margin, 0.4 - margin))
    true = wall(gap=(-0.2, 0.4))
    rng = np.random.default_rng(5)
    n = 0
    while n < 50:
        s, g = rng.uniform(LO2, HI2, (2, 2))
        if not planned(np.stack([s, g])).all():
            continue
        q = query2(s, g, planned, seed=n)
        p = plan_motion(q, 20)
        assert validate_path(p, q)
        q.valid = true
        assert validate_path(p, q, q.params.validation_resolution / 10)
        n += 1


def test_determinism():
    valid = wall(gap=(0.5, 0.7))
    runs = [rrt_connect(query2([0.0, 0.0], [2.0, 0.0], valid, seed=9)).array() for _ in range(2)]
    assert runs[0].tobytes() == runs[1].tobytes()


# ---------------------------------------------------------------- shortcutting

def test_shortcut_straight_unchanged():
    q = query2([0.0, 0.0], [1.0, 1.0], free)
    p = Path([q.start, q.goal])
    assert shortcut_path(p, q, 50).array().tobytes() == p.array().tobytes()


def test_shortcut_zigzag_reduced():
    w = [np.array([0.1 * k, 0.3 * (k % 2)]) for k in range(11)]
    q = query2(w[0], w[-1], free)
    p = Path(w)
    out = shortcut_path(p, q, 50)
    assert out.length() < p.length()
    assert validate_path(out, q)


def test_shortcut_zero_attempts_identity():
    w = [np.array([0.1 * k, 0.3 * (k % 2)]) for k in range(11)]
    q = query2(w[0], w[-1], free)
    assert shortcut_path(Path(w), q, 0).array().tobytes() == np.array(w).tobytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_shortcut_never_lengthens_and_stays_valid(seed):
    valid = wall(gap=(0.5, 0.7))
    q = query2([0.0, 0.0], [2.0, 0.0], valid, seed=seed % 7)
    p = rrt_connect(q)
    out = shortcut_path(p, q, 30, seed)
    assert out.length() <= p.length() + 1e-12
    assert validate_path(out, q)


# ---------------------------------------------------------------- timing

def test_time_single_waypoint():
    t, w = time_parameterize(Path([np.zeros(6)]), 1.0)
    assert t.tolist() == [0.0] and len(w) == 1


def test_time_one_radian_half_speed():
    t, _ = time_parameterize(Path([np.zeros(6), np.eye(6)[2]]), 0.5)
    assert t[-1] == pytest.approx(2.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 5.0), st.floats(1.1, 10.0))
def test_time_scales_inversely_and_respects_speed(seed, speed, factor):
    w = list(np.random.default_rng(seed).uniform(-1, 1, (5, 6)))
    t1, _ = time_parameterize(Path(w), speed)
    t2, _ = time_parameterize(Path(w), speed * factor)
    assert t1[-1] == pytest.approx(t2[-1] * factor, rel=1e-9)
    v = np.abs(np.diff(np.array(w), axis=0)) / np.diff(t1)[:, None]
    assert v.max() <= speed * (1 + 1e-9)
    with pytest.raises(ValueError):
        time_parameterize(Path(w), 0.0)


def test_interpolate_spacing():
    pts = interpolate(np.zeros(3), np.ones(3), 0.1)
    assert np.all(np.linalg.norm(np.diff(pts, axis=0), axis=1) <= 0.1 + 1e-12)
    assert np.array_equal(pts[0], np.zeros(3)) and np.array_equal(pts[-1], np.ones(3))


# ---------------------------------------------------------------- default robot

def _robot_query(model, side, start, goal, obstacles=(), seed=0, held=None, tool=None):
    arm = model.arm(side)
    other = "right" if side == "left" else "left"
    configs = {side: start, other: model.arm(other).home_config()}
    jaws = {"left": 0.04, "right": 0.04}
    chk = ArmChecker(model, side, configs, jaws, held or HeldState(), tool, list(obstacles),
                     torso_solids(model) + body_solids(obstacles))
    return MotionQuery(side, start, goal, arm.lower, arm.upper, chk.valid, RRTParams(seed=seed)), chk


def test_default_robot_free_space_queries(model):
    rng = np.random.default_rng(11)
    arm = model.arm("left")
    _, chk = _robot_query(model, "left", arm.home_config(), arm.home_config())
    solved = 0
    while solved < 20:
        s, g = rng.uniform(arm.lower, arm.upper, (2, arm.dof)) * 0.6
        if not chk.valid(np.stack([s, g])).all():
            continue
        q, _ = _robot_query(model, "left", s, g, seed=solved)
        p = plan_motion(q)
        assert validate_path(p, q)
        solved += 1


def test_fine_resolution_disagreements_only_within_margin(model):
    rng = np.random.default_rng(12)
    arm = model.arm("right")
    box = Body(Box((0.08, 0.08, 0.15)), RigidTransform.translation(0.45, -0.15, 0.15), "post")
    n, coarse_only = 0, 0
    while n < 10:
        s, g = rng.uniform(arm.lower, arm.upper, (2, arm.dof)) * 0.6
        q, chk = _robot_query(model, "right", s, g, [box], seed=n)
        if not chk.valid(np.stack([s, g])).all():
            continue
        p = plan_motion(q)
        assert validate_path(p, q)
        if not validate_path(p, q, q.params.validation_resolution / 10):
            coarse_only += 1
            # no true contact: the strict checker accepts every fine interpolant
            strict = ArmChecker(model, "right", {"right": s, "left": model.arm("left").home_config()},
                                {"left": 0.04, "right": 0.04}, HeldState(), None, [box],
                                torso_solids(model) + body_solids([box]), margin=0.0)
            w = p.array()
            fine = np.concatenate([interpolate(a, b, 0.002) for a, b in zip(w, w[1:])])
            assert strict.valid(fine).all()
        n += 1


def test_object_is_stationary_obstacle_when_not_attached(model):
    arm = model.arm("left")
    q = arm.home_config()
    tcp = tcp_pose(model, "left", q)
    obj = Body(Box((0.02, 0.02, 0.02)), tcp, "obj")
    _, without = _robot_query(model, "left", q, q)
    _, with_obj = _robot_query(model, "left", q, q, [obj])
    assert without.valid(q[None])[0] and not with_obj.valid(q[None])[0]


def test_attached_object_moves_rigidly(model):
    arm = model.arm("left")
    rel = RigidTransform.translation(0.0, 0.0, 0.2)
    rng = np.random.default_rng(13)
    for q in rng.uniform(arm.lower, arm.upper, (20, arm.dof)):
        world = compose(tcp_pose(model, "left", q), rel)
        back = compose(tcp_pose(model, "left", q).inverse(), world)
        assert np.allclose(back.matrix4(), rel.matrix4(), atol=1e-12)
