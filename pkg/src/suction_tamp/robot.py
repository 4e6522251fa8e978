"""Kinematics of the dual-arm robot: FK, Jacobian, manipulability, numeric IK.

Every kinematic routine is vectorised over a leading batch axis because the
planner solves IK for hundreds of grasps at a time.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import LimitViolation, NoSolution, SchemaError, StrokeExceeded
from .jsonio import read_json, write_json
from .geom import (Body, Box, RigidTransform, capsule_between, collide_scene, pose_from_dict,
                   pose_to_dict, rotation_matrices, shape_from_dict, shape_to_dict)

ARMS = ("left", "right")
IK_POS_TOL = 1e-4
IK_ROT_TOL = 1e-3
IK_DAMPING = 1e-2
IK_STEP_CLAMP = 0.2
IK_MAX_ITER = 200
IK_STALL_WINDOW = 20  # iterations; a descent that fails to halve its error over one is dropped
LIMIT_EPS = 1e-9


def other_arm(arm: str) -> str:
    return "right" if arm == "left" else "left"


@dataclass(frozen=True, eq=False)
class Joint:
    offset: RigidTransform
    axis: tuple
    limits: tuple

    def __post_init__(self):
        axis = np.asarray(self.axis, float)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ValueError("joint axis must be a unit vector")
        lo, hi = (float(v) for v in self.limits)
        if not lo < hi:
            raise ValueError("joint limits must be a non-empty interval")
        object.__setattr__(self, "axis", tuple(float(v) for v in axis))
        object.__setattr__(self, "limits", (lo, hi))


@dataclass(frozen=True, eq=False)
class ArmModel:
    """Serial chain of revolute joints.

    ``link_capsules[i]`` holds the collision capsules of the link moved by
    joint ``i``, each as ``(Capsule, pose in that link's frame)``.
    """

    name: str
    base_pose: RigidTransform
    joints: tuple
    link_capsules: tuple
    tcp_offset: RigidTransform
    home: tuple = ()

    @property
    def dof(self) -> int:
        return len(self.joints)

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    @cached_property
    def _arrays(self):
        off_r = np.stack([j.offset.rotation for j in self.joints])
        off_p = np.stack([j.offset.position for j in self.joints])
        axes = np.array([j.axis for j in self.joints])
        return off_r, off_p, axes

    @cached_property
    def _fk_plan(self):
        off_r, off_p, axes = self._arrays
        pure = [bool(np.array_equal(r, np.eye(3))) for r in off_r]
        idx = []
        for a in axes:
            hits = np.nonzero(np.abs(a) == 1.0)[0]
            idx.append(int(hits[0]) if len(hits) == 1 and a[hits[0]] == 1.0 else None)
        return off_r, off_p, axes, pure, idx

    def home_config(self) -> np.ndarray:
        if len(self.home):
            return np.array(self.home, float)
        return np.clip(np.zeros(self.dof), self.lower, self.upper)

    def with_base(self, base_pose: RigidTransform) -> "ArmModel":
        return ArmModel(self.name, base_pose, self.joints, self.link_capsules, self.tcp_offset, self.home)


@dataclass(frozen=True)
class GripperGeometry:
    """Parallel-jaw fingers, expressed in the frame of the last link."""

    stroke: float = 0.085
    finger_radius: float = 0.007
    finger_z: tuple = (0.085, 0.14)

    def finger_segments(self, jaw_width: float):
        y = jaw_width / 2 + self.finger_radius
        z0, z1 = self.finger_z
        return [((0.0, y, z0), (0.0, y, z1)), ((0.0, -y, z0), (0.0, -y, z1))]


@dataclass(frozen=True, eq=False)
class DualArmModel:
    left: ArmModel
    right: ArmModel
    gripper: GripperGeometry = field(default_factory=GripperGeometry)
    torso_bodies: tuple = ()
    name: str = "dual_arm"

    def __post_init__(self):
        if np.allclose(self.left.base_pose.position, self.right.base_pose.position):
            raise ValueError("arm base poses must be distinct")
        if self.gripper.stroke <= 0:
            raise ValueError("gripper stroke must be positive")

    @property
    def gripper_stroke(self) -> float:
        return self.gripper.stroke

    def arm(self, side: str) -> ArmModel:
        if side == "left":
            return self.left
        if side == "right":
            return self.right
        raise KeyError(side)


@dataclass
class DualConfig:
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        self.left = np.asarray(self.left, float)
        self.right = np.asarray(self.right, float)

    def __getitem__(self, side):
        return self.left if side == "left" else self.right

    def replace(self, side, q) -> "DualConfig":
        if side == "left":
            return DualConfig(np.asarray(q, float), self.right)
        return DualConfig(self.left, np.asarray(q, float))


# --------------------------------------------------------------------------
# forward kinematics


def check_limits(arm: ArmModel, q) -> None:
    q = np.asarray(q, float)
    if q.shape[-1] != arm.dof:
        raise LimitViolation(f"expected {arm.dof} joint values, got {q.shape[-1]}")
    if np.any(q < arm.lower - LIMIT_EPS) or np.any(q > arm.upper + LIMIT_EPS):
        raise LimitViolation(f"configuration outside joint limits of arm {arm.name!r}")


def _axis_rotations(axis_index, axis, angles):
    if axis_index is None:
        return rotation_matrices(axis, angles)
    c, s = np.cos(angles), np.sin(angles)
    out = np.zeros(angles.shape + (3, 3))
    i, j = {0: (1, 2), 1: (2, 0), 2: (0, 1)}[axis_index]
    out[..., axis_index, axis_index] = 1.0
    out[..., i, i] = c
    out[..., j, j] = c
    out[..., i, j] = -s
    out[..., j, i] = s
    return out


def fk_batch(arm: ArmModel, q):
    """Batched FK.

    Returns ``(link_r, link_p, axes_w, origins_w, tcp_r, tcp_p)`` where the link
    arrays have shape (B, dof, 3, 3) / (B, dof, 3) and hold the frame of each
    link after its joint has rotated.
    """
    q = np.atleast_2d(np.asarray(q, float))
    b = q.shape[0]
    off_r, off_p, axes, pure, axis_idx = arm._fk_plan
    r = np.repeat(arm.base_pose.rotation[None], b, axis=0)
    p = np.repeat(arm.base_pose.position[None], b, axis=0)
    n = arm.dof
    link_r = np.empty((b, n, 3, 3))
    link_p = np.empty((b, n, 3))
    axes_w = np.empty((b, n, 3))
    for i in range(n):
        p = p + r @ off_p[i]
        if not pure[i]:
            r = r @ off_r[i]
        axes_w[:, i] = r @ axes[i]
        link_p[:, i] = p
        r = r @ _axis_rotations(axis_idx[i], axes[i], q[:, i])
        link_r[:, i] = r
    tcp_p = p + r @ arm.tcp_offset.position
    tcp_r = r @ arm.tcp_offset.rotation
    return link_r, link_p, axes_w, link_p, tcp_r, tcp_p


def forward_kinematics(arm: ArmModel, q) -> RigidTransform:
    """World pose of the tool-centre point."""
    check_limits(arm, q)
    *_, tcp_r, tcp_p = fk_batch(arm, q)
    return RigidTransform.from_matrix(tcp_r[0], tcp_p[0])


def jacobian_batch(arm: ArmModel, q):
    _, _, axes_w, origins, tcp_r, tcp_p = fk_batch(arm, q)
    lin = np.cross(axes_w, tcp_p[:, None, :] - origins)
    jac = np.concatenate([lin, axes_w], axis=2)  # (B, n, 6)
    return np.swapaxes(jac, 1, 2), tcp_r, tcp_p


def jacobian(arm: ArmModel, q) -> np.ndarray:
    """Geometric Jacobian (6 x dof): rows are linear then angular velocity."""
    check_limits(arm, q)
    return jacobian_batch(arm, q)[0][0]


def manipulability_from_jacobian(jac) -> np.ndarray:
    jj = jac @ np.swapaxes(jac, -1, -2)
    return np.sqrt(np.clip(np.linalg.det(jj), 0.0, None))


def manipulability(arm: ArmModel, q) -> float:
    """Yoshikawa measure sqrt(det(J J^T))."""
    return float(manipulability_from_jacobian(jacobian(arm, q)))


# --------------------------------------------------------------------------
# inverse kinematics


def _rot_error(target_r, cur_r):
    """Rotation vector of target * cur^T, batched (world frame)."""
    m = target_r @ np.swapaxes(cur_r, -1, -2)
    cos = np.clip((np.trace(m, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos)
    vee = np.stack([m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]], -1)
    sin = np.sin(angle)
    ok = sin > 1e-6
    scale = np.where(ok, angle / (2.0 * np.where(ok, sin, 1.0)), 0.5)
    out = vee * scale[..., None]
    flip = (~ok) & (cos < 0)
    if np.any(flip):
        sym = (m[flip] + np.eye(3)) / 2.0
        k = np.argmax(np.diagonal(sym, axis1=-2, axis2=-1), axis=-1)
        ax = sym[np.arange(len(k)), :, k]
        ax /= np.linalg.norm(ax, axis=-1, keepdims=True)
        out[flip] = ax * angle[flip][:, None]
    return out, angle


def ik_batch(arm: ArmModel, target_r, target_p, seeds, max_iter=IK_MAX_ITER,
             damping=IK_DAMPING, step_clamp=IK_STEP_CLAMP):
    """Damped-least-squares descent from every seed towards its target.

    ``target_r`` (B,3,3), ``target_p`` (B,3), ``seeds`` (B,dof).  Returns the
    final configurations and the boolean success mask (contract tolerances).
    """
    q = np.array(seeds, float)
    target_r = np.asarray(target_r, float)
    target_p = np.asarray(target_p, float)
    b, n = q.shape
    pos_err = np.full(b, np.inf)
    rot_err = np.full(b, np.inf)
    active = np.arange(b)
    lam2 = damping * damping
    eye6 = np.eye(6)
    snapshot = np.full(b, np.inf)
    dropped = []
    for it in range(max_iter):
        if active.size == 0:
            break
        jac, cur_r, cur_p = jacobian_batch(arm, q[active])
        ep = target_p[active] - cur_p
        er, ang = _rot_error(target_r[active], cur_r)
        pos_err[active] = np.linalg.norm(ep, axis=1)
        rot_err[active] = ang
        done = (pos_err[active] < 1e-7) & (rot_err[active] < 1e-6)
        e = np.concatenate([ep, er], axis=1)
        jjt = jac @ np.swapaxes(jac, 1, 2) + lam2 * eye6
        dq = np.einsum("bji,bj->bi", jac, np.linalg.solve(jjt, e[..., None])[..., 0])
        big = np.max(np.abs(dq), axis=1)
        dq *= np.minimum(1.0, step_clamp / np.maximum(big, 1e-300))[:, None]
        upd = active[~done]
        q[upd] = np.clip(q[upd] + dq[~done], arm.lower, arm.upper)
        active = upd
        if it and it % IK_STALL_WINDOW == 0:
            err = pos_err[active] + 0.1 * rot_err[active]
            keep = (err < 0.5 * snapshot[active]) | ((pos_err[active] <= IK_POS_TOL) & (rot_err[active] <= IK_ROT_TOL))
            snapshot[active] = err
            dropped.append(active[~keep])
            active = active[keep]
    # errors were measured before the last step of these descents
    stale = np.concatenate([active] + dropped).astype(int)
    if stale.size:
        _, _, _, _, cur_r, cur_p = fk_batch(arm, q[stale])
        pos_err[stale] = np.linalg.norm(target_p[stale] - cur_p, axis=1)
        rot_err[stale] = _rot_error(target_r[stale], cur_r)[1]
    ok = (pos_err <= IK_POS_TOL) & (rot_err <= IK_ROT_TOL)
    return q, ok


def random_configs(arm: ArmModel, rng: np.random.Generator, count: int) -> np.ndarray:
    return rng.uniform(arm.lower, arm.upper, size=(count, arm.dof))


def solve_ik_many(arm: ArmModel, targets, rng: np.random.Generator, restarts: int = 8,
                  seed_configs=()) -> list:
    """IK for a list of target poses.

    Every target is attempted from the given ``seed_configs`` followed by
    random seeds, up to ``restarts`` descents in total.  Returns, per target,
    the list of successful solutions in seed order (possibly empty).
    """
    targets = list(targets)
    if not targets:
        return []
    fixed = [np.asarray(s, float) for s in seed_configs][:restarts]
    n_rand = restarts - len(fixed)
    rand = random_configs(arm, rng, len(targets) * n_rand).reshape(len(targets), n_rand, arm.dof)
    seeds = np.empty((len(targets), restarts, arm.dof))
    for k, s in enumerate(fixed):
        seeds[:, k] = s
    seeds[:, len(fixed):] = rand
    tr = np.stack([t.rotation for t in targets])
    tp = np.stack([t.position for t in targets])
    q, ok = ik_batch(arm, np.repeat(tr, restarts, axis=0), np.repeat(tp, restarts, axis=0),
                     seeds.reshape(-1, arm.dof))
    q = q.reshape(len(targets), restarts, arm.dof)
    ok = ok.reshape(len(targets), restarts)
    return [[q[i, k] for k in range(restarts) if ok[i, k]] for i in range(len(targets))]


def inverse_kinematics(arm: ArmModel, target: RigidTransform, seed: np.random.Generator,
                       restarts: int = 16, seed_configs=()) -> np.ndarray:
    """First solution (in restart order) reaching ``target``; raises NoSolution."""
    sols = solve_ik_many(arm, [target], seed, restarts, seed_configs)[0]
    if not sols:
        raise NoSolution(f"no IK solution for arm {arm.name!r} after {restarts} restarts")
    return sols[0]


# --------------------------------------------------------------------------
# collision bodies


def link_capsules_world(arm: ArmModel, q):
    """World (Capsule, pose) per link, one list per link."""
    link_r, link_p, *_ = fk_batch(arm, q)
    out = []
    for i, caps in enumerate(arm.link_capsules):
        frame = RigidTransform.from_matrix(link_r[0, i], link_p[0, i])
        out.append([(c, frame @ local) for c, local in caps])
    return out


def robot_bodies(model: DualArmModel, c: DualConfig, jaw_widths=None) -> list:
    """World-posed bodies for the torso, every link and both fingers of each arm."""
    if jaw_widths is None:
        jaw_widths = (model.gripper_stroke, model.gripper_stroke)
    bodies = [Body(shape, pose, f"torso{i}") for i, (shape, pose) in enumerate(model.torso_bodies)]
    for side, jaw in zip(ARMS, jaw_widths):
        arm = model.arm(side)
        q = c[side]
        check_limits(arm, q)
        if jaw > model.gripper_stroke + 1e-12 or jaw < 0:
            raise StrokeExceeded(f"jaw width {jaw} outside [0, {model.gripper_stroke}]")
        per_link = link_capsules_world(arm, q)
        for i, caps in enumerate(per_link):
            # one body per link; links are modelled with a single capsule
            shape, pose = caps[0]
            bodies.append(Body(shape, pose, f"{side}/link{i + 1}"))
        link_r, link_p, *_ = fk_batch(arm, q)
        last = RigidTransform.from_matrix(link_r[0, -1], link_p[0, -1])
        for k, (p0, p1) in enumerate(model.gripper.finger_segments(jaw)):
            shape, local = capsule_between(p0, p1, model.gripper.finger_radius)
            bodies.append(Body(shape, last @ local, f"{side}/finger{k}"))
    return bodies


def default_ignore_pairs(model: DualArmModel) -> set:
    pairs = set()
    for side in ARMS:
        n = model.arm(side).dof
        links = [f"{side}/link{i + 1}" for i in range(n)]
        for a, b in zip(links, links[1:]):
            pairs.add((a, b))
        for i in range(len(model.torso_bodies)):
            pairs.add((f"torso{i}", links[0]))
        fingers = [f"{side}/finger0", f"{side}/finger1"]
        pairs.add(tuple(fingers))
        for f in fingers:
            pairs.add((links[-1], f))
            pairs.add((links[-2], f))
    return {tuple(sorted(p)) for p in pairs}


def robot_in_collision(model: DualArmModel, c: DualConfig, jaw_widths=None) -> bool:
    return collide_scene(robot_bodies(model, c, jaw_widths), default_ignore_pairs(model))


# --------------------------------------------------------------------------
# the shipped model

LINK_RADII = (0.05, 0.045, 0.04, 0.04, 0.035, 0.012)


def _default_arm(name: str, base: RigidTransform, home) -> ArmModel:
    ident = RigidTransform.identity()
    t = RigidTransform.translation
    z, y = (0.0, 0.0, 1.0), (0.0, 1.0, 0.0)
    joints = (
        Joint(ident, z, (-3.1, 3.1)),
        Joint(t(0, 0, 0.10), y, (-1.6, 2.4)),
        Joint(t(0, 0, 0.30), y, (-2.6, 2.6)),
        Joint(t(0, 0, 0.15), z, (-3.1, 3.1)),
        Joint(t(0, 0, 0.15), y, (-1.9, 1.9)),
        Joint(t(0, 0, 0.06), z, (-3.1, 3.1)),
    )
    segs = (
        ((0, 0, 0), (0, 0, 0.10)),
        ((0, 0, 0), (0, 0, 0.30)),
        ((0, 0, 0), (0, 0, 0.15)),
        ((0, 0, 0), (0, 0, 0.15)),
        ((0, 0, 0), (0, 0, 0.13)),  # wrist, flange and gripper housing
        ((0, -0.045, 0.075), (0, 0.045, 0.075)),  # palm cross-bar
    )
    caps = tuple((capsule_between(p0, p1, r),) for (p0, p1), r in zip(segs, LINK_RADII))
    return ArmModel(name, base, joints, caps, t(0, 0, 0.125), tuple(home))


# found by IK for a raised, gripper-down pose beside the body
DEFAULT_HOME = {
    "left": (0.5, 0.2, 1.9, 0.0, 1.0, 0.0),
    "right": (-0.5, 0.2, 1.9, 0.0, 1.0, 0.0),
}


def default_robot() -> DualArmModel:
    """Two mirrored 6-DOF arms on a box torso, bases 0.5 m apart."""
    left = _default_arm("left", RigidTransform.translation(0.0, 0.25, 0.25), DEFAULT_HOME["left"])
    right = _default_arm("right", RigidTransform.translation(0.0, -0.25, 0.25), DEFAULT_HOME["right"])
    torso = ((Box((0.09, 0.34, 0.12)), RigidTransform.translation(-0.06, 0.0, 0.12)),)
    return DualArmModel(left, right, GripperGeometry(), torso, "default_dual_arm")


# --------------------------------------------------------------------------
# file format

ROBOT_FORMAT_VERSION = 1


def arm_to_dict(arm: ArmModel) -> dict:
    return {
        "name": arm.name,
        "base_pose": pose_to_dict(arm.base_pose),
        "joints": [{"offset": pose_to_dict(j.offset), "axis": list(j.axis), "limits": list(j.limits)}
                   for j in arm.joints],
        "link_capsules": [[{"shape": shape_to_dict(c), "pose": pose_to_dict(p)} for c, p in caps]
                          for caps in arm.link_capsules],
        "tcp_offset": pose_to_dict(arm.tcp_offset),
        "home": list(arm.home),
    }


def arm_from_dict(d: dict) -> ArmModel:
    joints = tuple(Joint(pose_from_dict(j["offset"]), tuple(j["axis"]), tuple(j["limits"])) for j in d["joints"])
    caps = tuple(tuple((shape_from_dict(c["shape"]), pose_from_dict(c["pose"])) for c in link)
                 for link in d["link_capsules"])
    if len(caps) != len(joints):
        raise SchemaError("one capsule list per joint is required", "link_capsules")
    return ArmModel(d["name"], pose_from_dict(d["base_pose"]), joints, caps,
                    pose_from_dict(d["tcp_offset"]), tuple(d.get("home", ())))


def robot_to_dict(model: DualArmModel) -> dict:
    g = model.gripper
    return {
        "format": "robot",
        "format_version": ROBOT_FORMAT_VERSION,
        "units": {"length": "m", "angle": "rad"},
        "name": model.name,
        "left": arm_to_dict(model.left),
        "right": arm_to_dict(model.right),
        "gripper": {"stroke": g.stroke, "finger_radius": g.finger_radius, "finger_z": list(g.finger_z)},
        "torso": [{"shape": shape_to_dict(s), "pose": pose_to_dict(p)} for s, p in model.torso_bodies],
    }


def robot_from_dict(d: dict) -> DualArmModel:
    if d.get("format") != "robot":
        raise SchemaError("not a robot file", "format")
    if d.get("format_version") != ROBOT_FORMAT_VERSION:
        raise SchemaError(f"unsupported version {d.get('format_version')!r}", "format_version")
    g = d["gripper"]
    gripper = GripperGeometry(g["stroke"], g["finger_radius"], tuple(g["finger_z"]))
    torso = tuple((shape_from_dict(t["shape"]), pose_from_dict(t["pose"])) for t in d.get("torso", []))
    return DualArmModel(arm_from_dict(d["left"]), arm_from_dict(d["right"]), gripper, torso, d.get("name", "robot"))


def load_robot(path) -> DualArmModel:
    if path in (None, "default"):
        return default_robot()
    try:
        return robot_from_dict(read_json(path))
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed robot file: {exc}") from None


def save_robot(model: DualArmModel, path) -> None:
    write_json(robot_to_dict(model), path)
