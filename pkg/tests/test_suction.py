import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from suction_tamp.errors import NoPoses, UnsupportedShape
from suction_tamp.geom import Box, Capsule, Cylinder, RigidTransform, compose
from suction_tamp.suction import (Facet, SuctionParams, SuctionPose, extract_facets, sample_suction_poses,
                                  suction_poses_for, tool_pose_on_object)

from conftest import transforms

UNIT_SQUARE = Facet.from_polygon((0, 0, 1), [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)])


def test_box_facets():
    facets = extract_facets(Box((0.5, 0.5, 0.5)))
    normals = {tuple(np.round(f.normal).astype(int)) for f in facets}
    assert len(facets) == 6
    assert normals == {(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)}
    for f in facets:
        # every vertex lies in the facet plane at distance 0.5
        assert np.allclose(f.polygon @ f.normal, 0.5)


def test_cylinder_and_capsule_facets():
    assert len(extract_facets(Cylinder(0.033, 0.12))) == 2
    with pytest.raises(UnsupportedShape):
        extract_facets(Capsule(0.1, 0.3))


def _brute_force_grid(lo, hi, centre, step, clearance):
    """Points centre + k*step inside [lo+c, hi-c], enumerated over a generous index range."""
    out = []
    for i, j in itertools.product(range(-50, 51), repeat=2):
        x, y = centre[0] + i * step, centre[1] + j * step
        if lo + clearance - 1e-12 <= x <= hi - clearance + 1e-12 and lo + clearance - 1e-12 <= y <= hi - clearance + 1e-12:
            out.append((x, y))
    return sorted(out)


def test_unit_square_grid_matches_enumeration():
    poses = sample_suction_poses([UNIT_SQUARE], 0.1, 0.25, 0.0, 1)
    got = sorted((round(p.contact_point[0], 12), round(p.contact_point[1], 12)) for p in poses)
    oracle = _brute_force_grid(0.0, 1.0, (0.5, 0.5), 0.25, 0.1)
    assert len(poses) == 9
    assert got == [(round(x, 12), round(y, 12)) for x, y in oracle]
    assert {x for x, _ in got} == {0.25, 0.5, 0.75}
    assert np.allclose(poses[0].contact_point, (0.5, 0.5, 0.0))


@pytest.mark.parametrize("step,pad,margin", [(0.1, 0.05, 0.0), (0.07, 0.12, 0.03), (0.3, 0.2, 0.0)])
def test_square_counts_match_enumeration(step, pad, margin):
    poses = sample_suction_poses([UNIT_SQUARE], pad, step, margin, 1)
    assert len(poses) == len(_brute_force_grid(0.0, 1.0, (0.5, 0.5), step, pad + margin))


def test_spin_multiplies_count_keeps_positions():
    one = sample_suction_poses([UNIT_SQUARE], 0.1, 0.25, 0.0, 1)
    four = sample_suction_poses([UNIT_SQUARE], 0.1, 0.25, 0.0, 4)
    assert len(four) == 4 * len(one)
    assert {tuple(np.round(p.contact_point, 12)) for p in four} == {tuple(np.round(p.contact_point, 12)) for p in one}


def test_facet_smaller_than_pad():
    tiny = Facet.from_polygon((0, 0, 1), [(0, 0, 0), (0.01, 0, 0), (0.01, 0.01, 0), (0, 0.01, 0)])
    with pytest.raises(NoPoses):
        sample_suction_poses([tiny], 0.015, 0.005, 0.0, 1)


def _check_invariants(poses, facets, pad, margin):
    for s in poses:
        f = facets[s.facet_id]
        approach = s.relative.rotation @ np.array([0.0, 0.0, -1.0])
        assert np.dot(approach, f.normal) == pytest.approx(-1.0, abs=1e-6)
        assert np.allclose(s.relative.position, s.contact_point)
        assert abs(np.dot(s.contact_point - f.centroid, f.normal)) < 1e-9
        assert f.edge_clearance(s.contact_point)[0] >= pad + margin - 1e-9


@settings(max_examples=30, deadline=None)
@given(st.tuples(*[st.floats(0.02, 0.15)] * 3), st.floats(0.005, 0.03), st.floats(0.012, 0.04),
       st.floats(0.0, 0.01), st.integers(1, 3))
def test_box_pose_invariants(half, pad, step, margin, spin):
    facets = extract_facets(Box(half))
    # the centroid is always a candidate, so some facet admits the pad iff the
    # widest facet (normal to the shortest axis) is wide enough
    admits = sorted(half)[1] >= pad + margin
    try:
        poses = sample_suction_poses(facets, pad, step, margin, spin)
    except NoPoses:
        assert not admits
        return
    assert admits
    _check_invariants(poses, facets, pad, margin)
    keys = [p.sort_key for p in poses]
    assert keys == sorted(keys)


def test_cylinder_pose_invariants():
    facets = extract_facets(Cylinder(0.033, 0.12))
    poses = sample_suction_poses(facets, 0.015, 0.005, 0.002, 2)
    _check_invariants(poses, facets, 0.015, 0.002)


def test_first_pose_is_centroid_of_top_facet():
    box = Box((0.11, 0.055, 0.045))
    pose = RigidTransform.rot_z(0.4, (0.3, 0.1, 0.045))
    poses = suction_poses_for(box, pose, SuctionParams(0.015, 0.02, 0.005, 8))
    top = extract_facets(box)[poses[0].facet_id]
    assert (pose.rotation @ top.normal)[2] > 0.99
    assert np.allclose(poses[0].contact_point, top.centroid)
    # centroid-nearest first: no pose on that facet is closer to the centroid
    d = [np.linalg.norm(p.contact_point - top.centroid) for p in poses if p.facet_id == poses[0].facet_id]
    assert min(d) == pytest.approx(0.0)


def test_tool_pose_on_object_cases():
    rel = SuctionPose(RigidTransform.translation(0, 0, 0.1), 0, np.array([0, 0, 0.1]), 0.0)
    assert tool_pose_on_object(RigidTransform.identity(), rel).allclose(rel.relative, 1e-15)
    obj = RigidTransform.rot_z(0.3, (1, 2, 3))
    ident = SuctionPose(RigidTransform.identity(), 0, np.zeros(3), 0.0)
    assert tool_pose_on_object(obj, ident).allclose(obj, 1e-15)
    got = tool_pose_on_object(RigidTransform.rot_z(math.pi / 2, (1, 0, 0)), rel)
    m = RigidTransform.rot_z(math.pi / 2, (1, 0, 0)).matrix4() @ rel.relative.matrix4()
    assert np.allclose(got.matrix4(), m, atol=1e-12)
    assert np.allclose(got.position, [1, 0, 0.1])


@given(transforms(), transforms(), transforms())
def test_tool_pose_equivariant(w, obj, rel):
    s = SuctionPose(rel, 0, rel.position, 0.0)
    assert tool_pose_on_object(compose(w, obj), s).allclose(compose(w, tool_pose_on_object(obj, s)), 1e-9)


def test_tool_stays_attached_under_object_rotation():
    # the attachment point follows the facet when the object turns
    box = Box((0.1, 0.05, 0.04))
    s = suction_poses_for(box, RigidTransform.identity(), SuctionParams(0.015, 0.02, 0.0, 1))[3]
    for yaw in np.linspace(0, 2 * math.pi, 7):
        obj = RigidTransform.rot_z(yaw, (0.2, -0.1, 0.04))
        assert np.allclose(tool_pose_on_object(obj, s).position, obj.apply(s.contact_point))
