"""Scene and trajectory files."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, SchemaError, ValidationError
from .geom import Body, Box, Capsule, Cylinder, RigidTransform, collide_pair, pose_to_dict, shape_from_dict, shape_to_dict
from .jsonio import FORMAT_VERSION, check_header, check_keys, loads, require, vector, write_json

DATA_DIR = Path(__file__).parent / "data"
SUPPORT_TOL = 1e-3
PENETRATION_TOL = 1.5e-3


# --------------------------------------------------------------------------
# scenes


@dataclass
class Scene:
    name: str
    table: Body
    objects: list  # Body at initial pose
    goals: dict  # object name -> RigidTransform
    tool: str  # shipped tool name or path
    tool_pose: RigidTransform
    robot: str = "default"
    obstacles: list = field(default_factory=list)

    def object(self, name: str) -> Body:
        for o in self.objects:
            if o.name == name:
                return o
        raise KeyError(name)

    def static_bodies(self) -> list:
        return [self.table] + list(self.obstacles)


def vertical_extent(shape, pose: RigidTransform):
    """(lowest z, highest z) of a posed shape."""
    r = pose.rotation
    c = pose.position[2]
    if isinstance(shape, Box):
        h = float(np.sum(np.abs(r[2]) * np.asarray(shape.half_extents)))
    elif isinstance(shape, Cylinder):
        az = abs(r[2, 2])
        h = az * shape.height / 2 + shape.radius * math.sqrt(max(0.0, 1 - az * az))
    elif isinstance(shape, Capsule):
        h = abs(r[2, 2]) * shape.length / 2 + shape.radius
    else:
        raise TypeError(shape)
    return c - h, c + h


def _penetrates(a: Body, b: Body) -> bool:
    sa = Body(a.shape.shrunk(PENETRATION_TOL), a.pose, a.name)
    sb = Body(b.shape.shrunk(PENETRATION_TOL), b.pose, b.name)
    return collide_pair(sa, sb, margin=0.0)


def _footprint_contains(body: Body, xy) -> bool:
    local = (np.array([xy[0], xy[1], body.pose.position[2]]) - body.pose.position) @ body.pose.rotation
    s = body.shape
    if isinstance(s, Box):
        return bool(np.all(np.abs(local[:2]) <= np.asarray(s.half_extents[:2]) + 1e-9))
    if isinstance(s, Cylinder):
        return bool(np.hypot(local[0], local[1]) <= s.radius + 1e-9)
    return False


def _supported(body: Body, supports) -> bool:
    low, _ = vertical_extent(body.shape, body.pose)
    for s in supports:
        if s is body:
            continue
        _, top = vertical_extent(s.shape, s.pose)
        if abs(low - top) <= SUPPORT_TOL and _footprint_contains(s, body.pose.position[:2]):
            return True
    return False


def validate_scene(scene: Scene, tool=None) -> None:
    bodies = scene.static_bodies() + list(scene.objects)
    names = [b.name for b in bodies]
    if len(set(names)) != len(names):
        raise ValidationError("body names must be unique")
    _, table_top = vertical_extent(scene.table.shape, scene.table.pose)
    for o in scene.objects:
        low, _ = vertical_extent(o.shape, o.pose)
        if low < table_top - SUPPORT_TOL:
            raise ValidationError(f"object {o.name} is below the table")
    for i, a in enumerate(bodies):
        for b in bodies[i + 1:]:
            if _penetrates(a, b):
                raise ValidationError(f"{a.name} interpenetrates {b.name}")
    for o in scene.objects:
        if not _supported(o, bodies):
            raise ValidationError(f"object {o.name} is not resting on a support surface")
    if set(scene.goals) - {o.name for o in scene.objects}:
        raise ValidationError("goal given for an unknown object")
    goal_bodies = [Body(scene.object(n).shape, g, n) for n, g in scene.goals.items()]
    for gb in goal_bodies:
        low, _ = vertical_extent(gb.shape, gb.pose)
        if low < table_top - SUPPORT_TOL:
            raise ValidationError(f"goal of {gb.name} is below the table")
        for s in scene.static_bodies():
            if _penetrates(gb, s):
                raise ValidationError(f"goal of {gb.name} interpenetrates {s.name}")
    for i, a in enumerate(goal_bodies):
        for b in goal_bodies[i + 1:]:
            if _penetrates(a, b):
                raise ValidationError(f"goals of {a.name} and {b.name} interpenetrate")
    if tool is not None:
        for tb in tool.bodies(scene.tool_pose):
            for b in bodies:
                if _penetrates(tb, b):
                    raise ValidationError(f"tool interpenetrates {b.name}")


def _body_from(d, path) -> Body:
    check_keys(d, ("name", "shape", "pose", "goal"), path)
    name = require(d, "name", path, str)
    try:
        shape = shape_from_dict(require(d, "shape", path, dict))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad shape: {exc}", f"{path}.shape") from None
    return Body(shape, _pose_from(require(d, "pose", path, dict), f"{path}.pose"), name)


def _pose_from(d, path) -> RigidTransform:
    check_keys(d, ("position", "quaternion"), path)
    p = vector(d, "position", 3, path)
    q = vector(d, "quaternion", 4, path) if "quaternion" in d else np.array([1.0, 0, 0, 0])
    if np.linalg.norm(q) < 1e-9:
        raise SchemaError("zero quaternion", f"{path}.quaternion")
    return RigidTransform(p, q)


SCENE_KEYS = ("format", "format_version", "units", "name", "robot", "table", "obstacles", "tool", "objects")


def scene_from_dict(d: dict, validate: bool = True) -> Scene:
    if not isinstance(d, dict):
        raise SchemaError("expected an object", "<root>")
    check_keys(d, SCENE_KEYS)
    check_header(d, "scene")
    units = d.get("units", {"length": "m", "angle": "rad"})
    if units.get("length", "m") != "m" or units.get("angle", "rad") != "rad":
        raise SchemaError("only metres and radians are supported", "units")
    table = _body_from(require(d, "table", kind=dict), "table")
    obstacles = [_body_from(o, f"obstacles[{i}]") for i, o in enumerate(d.get("obstacles", []))]
    tool = require(d, "tool", kind=dict)
    check_keys(tool, ("name", "pose"), "tool")
    objects, goals = [], {}
    for i, od in enumerate(require(d, "objects", kind=list)):
        b = _body_from(od, f"objects[{i}]")
        objects.append(b)
        if "goal" in od:
            goals[b.name] = _pose_from(od["goal"], f"objects[{i}].goal")
    scene = Scene(str(d.get("name", "scene")), table, objects, goals, require(tool, "name", "tool", str),
                  _pose_from(require(tool, "pose", "tool", dict), "tool.pose"), str(d.get("robot", "default")),
                  obstacles)
    if validate:
        from .graspdb import load_tool
        validate_scene(scene, load_tool(scene.tool))
    return scene


def _body_to(b: Body, goal=None) -> dict:
    d = {"name": b.name, "shape": shape_to_dict(b.shape), "pose": pose_to_dict(b.pose)}
    if goal is not None:
        d["goal"] = pose_to_dict(goal)
    return d


def scene_to_dict(scene: Scene) -> dict:
    d = {
        "format": "scene",
        "format_version": FORMAT_VERSION,
        "units": {"length": "m", "angle": "rad"},
        "name": scene.name,
        "robot": scene.robot,
        "table": _body_to(scene.table),
        "obstacles": [_body_to(o) for o in scene.obstacles],
        "tool": {"name": scene.tool, "pose": pose_to_dict(scene.tool_pose)},
        "objects": [_body_to(o, scene.goals.get(o.name)) for o in scene.objects],
    }
    return d


def parse_scene(path) -> Scene:
    p = Path(path)
    if not p.exists() and (DATA_DIR / "scenes" / f"{path}.json").exists():
        p = DATA_DIR / "scenes" / f"{path}.json"
    try:
        text = p.read_text()
    except OSError as exc:
        raise OSError(f"cannot read scene {path}: {exc.strerror}") from exc
    return scene_from_dict(loads(text))


def save_scene(scene: Scene, path) -> None:
    write_json(scene_to_dict(scene), path)


def shipped_scenes() -> list:
    return sorted(p.stem for p in (DATA_DIR / "scenes").glob("*.json"))


# --------------------------------------------------------------------------
# trajectories

EVENT_KINDS = ("grasp", "release", "handover_exchange", "suction_on", "suction_off", "place")


@dataclass
class Event:
    t: float
    kind: str
    payload: dict = field(default_factory=dict)
    index: int = 0  # number of samples that precede the event


@dataclass
class Trajectory:
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    left: np.ndarray = field(default_factory=lambda: np.zeros((0, 6)))
    right: np.ndarray = field(default_factory=lambda: np.zeros((0, 6)))
    jaws: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    events: list = field(default_factory=list)
    segments: list = field(default_factory=list)  # dicts: t0, t1, arm, kind, episode
    max_joint_speed: float = 1.0

    def __len__(self):
        return len(self.times)

    @property
    def duration(self) -> float:
        return float(self.times[-1]) if len(self.times) else 0.0

    def to_dict(self) -> dict:
        return {
            "format": "trajectory",
            "format_version": FORMAT_VERSION,
            "units": {"length": "m", "angle": "rad", "time": "s"},
            "max_joint_speed": float(self.max_joint_speed),
            "samples": [{"t": float(t), "left": list(map(float, l)), "right": list(map(float, r)),
                         "jaws": list(map(float, j))}
                        for t, l, r, j in zip(self.times, self.left, self.right, self.jaws)],
            "segments": [dict(s) for s in self.segments],
            "events": [{"t": float(e.t), "index": int(e.index), "kind": e.kind, "payload": e.payload}
                       for e in self.events],
        }

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def event_string(self, episode=None) -> list:
        names = {"handover_exchange": "handover", "place": "release_place"}
        return [names.get(e.kind, e.kind) for e in self.events
                if episode is None or e.payload.get("episode") == episode]


def trajectory_from_dict(d: dict) -> Trajectory:
    try:
        check_header(d, "trajectory")
    except SchemaError as exc:
        raise FormatError(str(exc), field=exc.path) from None
    samples = d.get("samples")
    if not isinstance(samples, list):
        raise FormatError("samples must be a list", field="samples")
    n = len(samples)
    times = np.zeros(n)
    left, right, jaws = np.zeros((n, 6)), np.zeros((n, 6)), np.zeros((n, 2))
    for i, s in enumerate(samples):
        try:
            times[i] = float(s["t"])
            left[i], right[i], jaws[i] = s["left"], s["right"], s["jaws"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad sample: {exc}", field=f"samples[{i}]") from None
        if i and times[i] < times[i - 1]:
            raise FormatError("timestamps decrease", field=f"samples[{i}].t")
    events = []
    for i, e in enumerate(d.get("events", [])):
        try:
            ev = Event(float(e["t"]), str(e["kind"]), dict(e.get("payload", {})), int(e["index"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad event: {exc}", field=f"events[{i}]") from None
        if ev.kind not in EVENT_KINDS:
            raise FormatError(f"unknown event kind {ev.kind!r}", field=f"events[{i}].kind")
        if events and (ev.t < events[-1].t or ev.index < events[-1].index):
            raise FormatError("events out of order", field=f"events[{i}]")
        if not 0 <= ev.index <= n:
            raise FormatError("event index outside the samples", field=f"events[{i}].index")
        events.append(ev)
    return Trajectory(times, left, right, jaws, events, [dict(s) for s in d.get("segments", [])],
                      float(d.get("max_joint_speed", 1.0)))


def write_trajectory(tr: Trajectory, path) -> None:
    write_json(tr.to_dict(), path)


def read_trajectory(path) -> Trajectory:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read trajectory {path}: {exc.strerror}") from exc
    return trajectory_from_dict(loads(text))
