"""Offline grasp set and dual-arm handover pairs of the suction tool.

Grasps live in the tool frame: ``hand_pose`` is the gripper TCP frame
(x along the handle, y the closing axis, z the approach) expressed in the
tool frame.  Handover pairs are grasps of both arms at a common tool pose in
the handover region, each with an IK witness.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .collision import ArmChecker, ArmCloud, HeldState, clouds_collide, hand_bodies_in_tcp, torso_solids
from .errors import FormatError, NoGrasps, NoPairs, SchemaError
from .geom import (Body, Cylinder, RigidTransform, collide_pair, compose, pose_from_dict, pose_to_dict,
                   shape_from_dict, shape_to_dict, capsule_between)
from .jsonio import FORMAT_VERSION, check_header, loads, require, write_json
from .robot import ARMS, DualArmModel, jacobian_batch, manipulability_from_jacobian, solve_ik_many

DATA_DIR = Path(__file__).parent / "data"
MIN_GRASP_SEPARATION = 0.03  # along the handle, between the two hands of a pair


# --------------------------------------------------------------------------
# tool model


@dataclass(frozen=True, eq=False)
class ToolModel:
    """Rigid suction tool.  Origin at the pad centre, -Z is the suction direction."""

    name: str
    body_shapes: tuple  # (name, Shape, local pose)
    grasp_segments: tuple  # ((3,), (3,)) end points on the handle axis
    handle_radius: float
    pad_radius: float
    grasp_body: str = "handle"
    pad_center: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if not self.grasp_segments:
            raise ValueError("a tool needs at least one grasp segment")
        segs = tuple((np.asarray(a, float), np.asarray(b, float)) for a, b in self.grasp_segments)
        object.__setattr__(self, "grasp_segments", segs)

    def bodies(self, pose: RigidTransform | None = None, prefix: str = "tool/") -> list:
        pose = pose or RigidTransform.identity()
        return [Body(s, compose(pose, local), prefix + n) for n, s, local in self.body_shapes]

    @property
    def handle_width(self) -> float:
        return 2.0 * self.handle_radius


def make_symmetric_tool(pad_radius: float = 0.04, name: str = "symmetric") -> ToolModel:
    """Long T-shaped tool: a handle either side of the stem, like a stamp."""
    handle, hl = capsule_between((-0.13, 0, 0.08), (0.13, 0, 0.08), 0.01)
    stem, sl = capsule_between((0, 0, 0.022), (0, 0, 0.07), 0.012)
    pad = Cylinder(pad_radius, 0.01)
    return ToolModel(
        name,
        (("pad", pad, RigidTransform.translation(0, 0, 0.005)), ("stem", stem, sl), ("handle", handle, hl)),
        (((-0.12, 0, 0.08), (-0.04, 0, 0.08)), ((0.04, 0, 0.08), (0.12, 0, 0.08))),
        0.01, pad_radius,
    )


def make_asymmetric_tool(pad_radius: float = 0.04, name: str = "asymmetric") -> ToolModel:
    """Short tool with a one-sided handle and little room to grasp."""
    handle, hl = capsule_between((-0.02, 0, 0.08), (0.10, 0, 0.08), 0.01)
    stem, sl = capsule_between((0, 0, 0.022), (0, 0, 0.07), 0.012)
    pad = Cylinder(pad_radius, 0.01)
    return ToolModel(
        name,
        (("pad", pad, RigidTransform.translation(0, 0, 0.005)), ("stem", stem, sl), ("handle", handle, hl)),
        (((0.04, 0, 0.08), (0.10, 0, 0.08)),),
        0.01, pad_radius,
    )


def tool_to_dict(tool: ToolModel) -> dict:
    return {
        "format": "tool",
        "format_version": FORMAT_VERSION,
        "units": {"length": "m", "angle": "rad"},
        "name": tool.name,
        "handle_radius": tool.handle_radius,
        "pad_radius": tool.pad_radius,
        "grasp_body": tool.grasp_body,
        "pad_center": pose_to_dict(tool.pad_center),
        "bodies": [{"name": n, "shape": shape_to_dict(s), "pose": pose_to_dict(p)} for n, s, p in tool.body_shapes],
        "grasp_segments": [[list(map(float, a)), list(map(float, b))] for a, b in tool.grasp_segments],
    }


def tool_from_dict(d: dict) -> ToolModel:
    check_header(d, "tool")
    try:
        bodies = tuple((b["name"], shape_from_dict(b["shape"]), pose_from_dict(b["pose"])) for b in d["bodies"])
        segs = tuple((tuple(a), tuple(b)) for a, b in require(d, "grasp_segments"))
        return ToolModel(d["name"], bodies, segs, float(d["handle_radius"]), float(d["pad_radius"]),
                         d.get("grasp_body", "handle"), pose_from_dict(d.get("pad_center", {"position": [0, 0, 0]})))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed tool: {exc}") from None


SHIPPED_TOOLS = {
    "symmetric_large": lambda: make_symmetric_tool(0.04, "symmetric_large"),
    "symmetric_small": lambda: make_symmetric_tool(0.015, "symmetric_small"),
    "asymmetric_large": lambda: make_asymmetric_tool(0.04, "asymmetric_large"),
    "asymmetric_small": lambda: make_asymmetric_tool(0.015, "asymmetric_small"),
}


def load_tool(name_or_path) -> ToolModel:
    """A shipped tool by name, or a tool file."""
    if str(name_or_path) in SHIPPED_TOOLS:
        return SHIPPED_TOOLS[str(name_or_path)]()
    return tool_from_dict(loads(Path(name_or_path).read_text()))


def save_tool(tool: ToolModel, path) -> None:
    write_json(tool_to_dict(tool), path)


# --------------------------------------------------------------------------
# grasps


@dataclass(frozen=True, eq=False)
class Grasp:
    hand_pose: RigidTransform  # TCP frame in the tool frame
    jaw_width: float
    approach: np.ndarray  # tool frame
    segment: int = 0
    station: float = 0.0  # arc length along the segment
    spin: int = 0
    flip: int = 0

    def key(self):
        return (self.segment, round(self.station, 9), self.spin, self.flip)


def segment_stations(length: float, step: float) -> np.ndarray:
    """Arc-length stations spaced ``step`` apart, centred on the segment."""
    if step <= 0:
        raise ValueError("step must be positive")
    if length < step:
        return np.array([length / 2])
    n = int(math.floor(length / step + 1e-9)) + 1
    off = (length - (n - 1) * step) / 2
    return off + step * np.arange(n)


def grasp_candidates(tool: ToolModel, step: float, spin_count: int) -> list:
    """Every grasp frame before collision filtering."""
    out = []
    for si, (p0, p1) in enumerate(tool.grasp_segments):
        d = p1 - p0
        length = float(np.linalg.norm(d))
        a = d / length if length > 0 else np.array([1.0, 0.0, 0.0])
        r0 = np.array([0.0, 0.0, -1.0]) - (-a[2]) * a
        if np.linalg.norm(r0) < 1e-6:
            r0 = np.array([0.0, -1.0, 0.0]) - (-a[1]) * a
        r0 /= np.linalg.norm(r0)
        r1 = np.cross(a, r0)
        for s in segment_stations(length, step):
            p = p0 + s * a
            for k in range(spin_count):
                phi = 2 * math.pi * k / spin_count
                z = math.cos(phi) * r0 + math.sin(phi) * r1
                for flip in (0, 1):
                    x = a if flip == 0 else -a
                    y = np.cross(z, x)
                    rot = np.stack([x, y, z], axis=1)
                    out.append(Grasp(RigidTransform.from_matrix(rot, p), tool.handle_width, z.copy(),
                                     si, float(s), k, flip))
    return out


def grasp_collides(model: DualArmModel, tool: ToolModel, g: Grasp) -> bool:
    """Hand against tool, with jaws closed on the handle and fully open."""
    tool_bodies = tool.bodies(prefix="")
    for jaw, closed in ((g.jaw_width, True), (model.gripper_stroke, False)):
        for hb in hand_bodies_in_tcp(model, "left", jaw):
            posed = Body(hb.shape, compose(g.hand_pose, hb.pose), hb.name)
            for tb in tool_bodies:
                if closed and hb.name.startswith("finger") and tb.name == tool.grasp_body:
                    continue
                if collide_pair(posed, tb):
                    return True
    return False


def grasp_contacts_handle(tool: ToolModel, g: Grasp, tol: float = 1e-9) -> bool:
    """The TCP lies on a grasp segment, the closing axis is across it, and the jaws span the handle."""
    p0, p1 = tool.grasp_segments[g.segment]
    a = (p1 - p0) / np.linalg.norm(p1 - p0)
    tcp = g.hand_pose.position
    t = float(np.dot(tcp - p0, a))
    on_axis = np.linalg.norm(p0 + t * a - tcp) < 1e-7 and -tol <= t <= np.linalg.norm(p1 - p0) + tol
    closing = g.hand_pose.rotation[:, 1]
    return bool(on_axis and abs(np.dot(closing, a)) < 1e-7 and abs(g.jaw_width - tool.handle_width) < 1e-12)


def sample_tool_grasps(tool: ToolModel, step: float = 0.02, spin_count: int = 8,
                       model: DualArmModel | None = None) -> list:
    """Grasps along the handle whose hand clears the tool; raises NoGrasps if none do."""
    from .robot import default_robot
    model = model or default_robot()
    if tool.handle_width > model.gripper_stroke:
        raise NoGrasps("handle wider than the gripper stroke")
    out = [g for g in grasp_candidates(tool, step, spin_count) if not grasp_collides(model, tool, g)]
    if not out:
        raise NoGrasps(f"every grasp of tool {tool.name!r} collides")
    return out


# --------------------------------------------------------------------------
# handover pairs


@dataclass(frozen=True)
class HandoverParams:
    region_center: tuple = (0.38, 0.0, 0.38)
    region_size: tuple = (0.3, 0.3, 0.2)
    tilt: float = 0.2  # max roll/pitch jitter of the tool, rad
    restarts: int = 6
    pairs_per_sample: int = 8
    max_checks: int = 400


@dataclass(frozen=True, eq=False)
class HandSide:
    arm: str
    grasp_id: int
    grasp: Grasp
    config: np.ndarray


@dataclass(frozen=True, eq=False)
class HandoverPair:
    giver: HandSide
    receiver: HandSide
    tool_pose: RigidTransform
    score: float
    sample: int = 0

    def side(self, arm: str) -> HandSide:
        return self.giver if self.giver.arm == arm else self.receiver


def region_poses(count: int, seed: int, params: HandoverParams = HandoverParams()) -> list:
    """Quasi-random tool poses in the handover box (scrambled Halton)."""
    pts = qmc.Halton(d=6, scramble=True, seed=np.random.default_rng([seed, 7919])).random(count)
    c, size = np.asarray(params.region_center), np.asarray(params.region_size)
    out = []
    for row in pts:
        pos = c + (row[:3] - 0.5) * size
        yaw = (row[3] - 0.5) * 2 * math.pi
        roll, pitch = (row[4:6] - 0.5) * 2 * params.tilt
        t = compose(RigidTransform.rot_z(yaw, pos),
                    compose(RigidTransform.rotation_about((0, 1, 0), pitch),
                            RigidTransform.rotation_about((1, 0, 0), roll)))
        out.append(t)
    return out


def grasps_overlap(a: Grasp, b: Grasp, min_sep: float = MIN_GRASP_SEPARATION) -> bool:
    return a.segment == b.segment and abs(a.station - b.station) < min_sep


def _feasible_side(model, tool, side, tool_pose, grasps, rng, params):
    """First collision-free IK solution per grasp for one arm at one tool pose."""
    arm = model.arm(side)
    targets = [compose(tool_pose, g.hand_pose) for g in grasps]
    sols = solve_ik_many(arm, targets, rng, params.restarts, seed_configs=[arm.home_config()])
    flat, owner = [], []
    for gi, lst in enumerate(sols):
        for q in lst:
            flat.append(q), owner.append(gi)
    if not flat:
        return []
    checker = ArmChecker(model, side, {side: arm.home_config()}, {side: model.gripper_stroke},
                         HeldState(tool_pose=tool_pose), tool=tool, static_solids=torso_solids(model))
    ok = checker.valid(np.array(flat))
    chosen = {}
    for q, gi, good in zip(flat, owner, ok):
        if good and gi not in chosen:
            chosen[gi] = q
    if not chosen:
        return []
    ids = sorted(chosen)
    qs = np.array([chosen[i] for i in ids])
    manip = manipulability_from_jacobian(jacobian_batch(arm, qs)[0])
    return [(i, q, float(m)) for i, q, m in zip(ids, qs, manip)]


def compute_handover_pairs(model: DualArmModel, tool: ToolModel, grasps: list, region_samples: int,
                           seed: int, params: HandoverParams = HandoverParams()) -> list:
    """Collision-free, IK-feasible, non-overlapping (left, right) grasp pairs, best score first."""
    if not grasps:
        raise NoPairs("no grasps given")
    open_jaw, closed_jaw = model.gripper_stroke, tool.handle_width
    clouds = {(s, w): ArmCloud(model, s, w) for s in ARMS for w in (open_jaw, closed_jaw)}
    pairs = []
    for k, pose in enumerate(region_poses(region_samples, seed, params)):
        rng = np.random.default_rng([seed, k])
        feas = {s: _feasible_side(model, tool, s, pose, grasps, rng, params) for s in ARMS}
        if not feas["left"] or not feas["right"]:
            continue
        cand = []
        for li, (gl, ql, ml) in enumerate(feas["left"]):
            for ri, (gr, qr, mr) in enumerate(feas["right"]):
                if not grasps_overlap(grasps[gl], grasps[gr]):
                    cand.append((-min(ml, mr), gl, gr, li, ri))
        cand.sort()
        cand = cand[:params.max_checks]
        if not cand:
            continue
        ql = np.array([feas["left"][c[3]][1] for c in cand])
        qr = np.array([feas["right"][c[4]][1] for c in cand])
        lo, lc = clouds[("left", open_jaw)], clouds[("left", closed_jaw)]
        ro, rc = clouds[("right", open_jaw)], clouds[("right", closed_jaw)]
        bad = clouds_collide(lo.world(ql), lo.radii, rc.world(qr), rc.radii)
        bad |= clouds_collide(lc.world(ql), lc.radii, ro.world(qr), ro.radii)
        kept = 0
        for c, b, a1, a2 in zip(cand, bad, ql, qr):
            if b:
                continue
            pairs.append(HandoverPair(HandSide("left", c[1], grasps[c[1]], a1),
                                      HandSide("right", c[2], grasps[c[2]], a2), pose, -c[0], k))
            kept += 1
            if kept >= params.pairs_per_sample:
                break
    if not pairs:
        raise NoPairs("no feasible handover pair in the region")
    pairs.sort(key=lambda p: (-p.score, p.sample, p.giver.grasp_id, p.receiver.grasp_id))
    return pairs


# --------------------------------------------------------------------------
# database


@dataclass(eq=False)
class GraspDatabase:
    tool_name: str
    grasps: list
    handover_pairs: list
    params: dict
    seed: int
    robot_name: str = "default_dual_arm"

    def to_dict(self) -> dict:
        return {
            "format": "grasp_database",
            "format_version": FORMAT_VERSION,
            "units": {"length": "m", "angle": "rad"},
            "tool_name": self.tool_name,
            "robot_name": self.robot_name,
            "seed": int(self.seed),
            "params": dict(self.params),
            "grasps": [_grasp_to_dict(g) for g in self.grasps],
            "handover_pairs": [_pair_to_dict(p) for p in self.handover_pairs],
        }

    def __eq__(self, other):
        if not isinstance(other, GraspDatabase):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def _grasp_to_dict(g: Grasp) -> dict:
    return {"position": [float(v) for v in g.hand_pose.position],
            "quaternion": [float(v) for v in g.hand_pose.quaternion],
            "jaw_width": float(g.jaw_width), "approach": [float(v) for v in g.approach],
            "segment": g.segment, "station": float(g.station), "spin": g.spin, "flip": g.flip}


def _side_to_dict(s: HandSide) -> dict:
    return {"arm": s.arm, "grasp": s.grasp_id, "config": [float(v) for v in s.config]}


def _pair_to_dict(p: HandoverPair) -> dict:
    return {"tool_pose": pose_to_dict(p.tool_pose), "giver": _side_to_dict(p.giver),
            "receiver": _side_to_dict(p.receiver), "score": float(p.score), "sample": p.sample}


def database_from_dict(d: dict) -> GraspDatabase:
    check_header(d, "grasp_database")
    grasps = []
    for i, gd in enumerate(require(d, "grasps", kind=list)):
        try:
            grasps.append(Grasp(RigidTransform(gd["position"], gd["quaternion"]), float(gd["jaw_width"]),
                                np.array(gd["approach"], float), int(gd["segment"]), float(gd["station"]),
                                int(gd["spin"]), int(gd["flip"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad grasp entry: {exc}", field=f"grasps[{i}]") from None
    pairs = []
    for i, pd in enumerate(require(d, "handover_pairs", kind=list)):
        try:
            sides = []
            for role in ("giver", "receiver"):
                sd = pd[role]
                gid = int(sd["grasp"])
                if not 0 <= gid < len(grasps):
                    raise ValueError(f"grasp index {gid} out of range")
                sides.append(HandSide(sd["arm"], gid, grasps[gid], np.array(sd["config"], float)))
            pairs.append(HandoverPair(sides[0], sides[1], pose_from_dict(pd["tool_pose"]), float(pd["score"]),
                                      int(pd.get("sample", 0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad handover pair: {exc}", field=f"handover_pairs[{i}]") from None
    return GraspDatabase(require(d, "tool_name"), grasps, pairs, dict(require(d, "params", kind=dict)),
                         int(require(d, "seed")), d.get("robot_name", "default_dual_arm"))


def save_database(db: GraspDatabase, path) -> None:
    write_json(db.to_dict(), path)


def load_database(path) -> GraspDatabase:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read grasp database {path}: {exc.strerror}") from exc
    d = loads(text)
    try:
        return database_from_dict(d)
    except SchemaError as exc:
        raise FormatError(str(exc), field=exc.path or None) from None


def generate_database(model: DualArmModel, tool: ToolModel, seed: int = 0, grasp_step: float = 0.02,
                      spin_count: int = 8, region_samples: int = 64,
                      handover: HandoverParams = HandoverParams()) -> GraspDatabase:
    grasps = sample_tool_grasps(tool, grasp_step, spin_count, model)
    pairs = compute_handover_pairs(model, tool, grasps, region_samples, seed, handover)
    params = {
        "grasp_step": grasp_step, "spin_count": spin_count, "region_samples": region_samples,
        "region_center": list(handover.region_center), "region_size": list(handover.region_size),
        "tilt": handover.tilt, "restarts": handover.restarts,
        "pairs_per_sample": handover.pairs_per_sample, "max_checks": handover.max_checks,
    }
    return GraspDatabase(tool.name, grasps, pairs, params, seed, model.name)


def regenerate(db: GraspDatabase, model: DualArmModel, tool: ToolModel) -> GraspDatabase:
    """Rebuild a database from the parameters and seed it records."""
    p = db.params
    hp = HandoverParams(tuple(p["region_center"]), tuple(p["region_size"]), p["tilt"], p["restarts"],
                        p["pairs_per_sample"], p["max_checks"])
    return generate_database(model, tool, db.seed, p["grasp_step"], p["spin_count"], p["region_samples"], hp)


def shipped_database_path(tool_name: str) -> Path:
    return DATA_DIR / "db" / f"{tool_name}.json"
