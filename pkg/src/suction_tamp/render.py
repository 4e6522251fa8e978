"""Static SVG frames of a trajectory, top-down by default or from the side.

Every shape is drawn as the convex hull of its projected outline; capsules
become round-capped strokes.  Objects carry ``data-x/y/z`` attributes with
their world position so frames can be checked without parsing geometry.
"""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from scipy.spatial import ConvexHull

from .errors import TimeOutOfRange
from .geom import Box, Capsule, Cylinder, RigidTransform, capsule_between
from .replay import object_poses, state_at_time
from .collision import tool_world_pose
from .robot import ARMS, fk_batch, link_capsules_world

SCALE = 800.0  # pixels per metre
MARGIN_PX = 20.0
TIME_TOL = 1e-9

# (fill colour, extra polygon attributes)
STYLE = {
    "table": ("#d8cbb0", 'stroke="#8a7a5a"'),
    "torso": ("#b0b0b0", 'stroke="#606060"'),
    "object": ("#4a78c2", 'stroke="#1d3d70"'),
    "goal": ("#2ca02c", 'fill-opacity="0.3" stroke="#2ca02c" stroke-opacity="0.6" stroke-dasharray="4 2"'),
    "tool": ("#e07b22", 'stroke="#8a4310"'),
    "left": ("#7a3fa0", ""),
    "right": ("#c23b5a", ""),
}


def _project(points, view: str) -> np.ndarray:
    """World points to unscaled screen coordinates (y down)."""
    p = np.atleast_2d(points)
    if view == "top":
        # robot faces +x; draw +x up and +y to the left
        return np.column_stack([-p[:, 1], -p[:, 0]])
    if view == "side":
        return np.column_stack([p[:, 0], -p[:, 2]])
    raise ValueError(f"unknown view {view!r}")


def _outline(shape, pose: RigidTransform) -> np.ndarray:
    """Points spanning the shape's silhouette, in world coordinates."""
    if isinstance(shape, Box):
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
        local = signs * np.asarray(shape.half_extents)
    elif isinstance(shape, Cylinder):
        a = np.linspace(0.0, 2 * np.pi, 32, endpoint=False)
        ring = np.column_stack([shape.radius * np.cos(a), shape.radius * np.sin(a)])
        h = shape.height / 2
        local = np.vstack([np.column_stack([ring, np.full(len(a), -h)]),
                           np.column_stack([ring, np.full(len(a), h)])])
    else:
        raise TypeError(f"no outline for {type(shape).__name__}")
    return pose.apply(local)


def _polygon(pts2d) -> np.ndarray:
    try:
        hull = ConvexHull(pts2d)
        return pts2d[hull.vertices]
    except Exception:  # degenerate (flat in this view)
        return pts2d


class _Canvas:
    def __init__(self, view: str, bounds):
        self.view = view
        lo, hi = bounds
        self.origin = lo
        self.size = (hi - lo) * SCALE + 2 * MARGIN_PX
        self.items = []

    def xy(self, world) -> np.ndarray:
        return (_project(world, self.view) - self.origin) * SCALE + MARGIN_PX

    def shape(self, shape, pose, style, attrs=""):
        colour, extra = style
        if isinstance(shape, Capsule):
            half = np.array([[0, 0, -shape.length / 2], [0, 0, shape.length / 2]])
            self.stroke(pose.apply(half), shape.radius, colour, attrs)
            return
        pts = self.xy(_outline(shape, pose))
        poly = " ".join(f"{x:.2f},{y:.2f}" for x, y in _polygon(pts))
        self.items.append(f'<polygon points="{poly}" fill="{colour}" {extra}{attrs}/>')

    def stroke(self, ends, radius, colour, attrs=""):
        (x0, y0), (x1, y1) = self.xy(ends)
        self.items.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" stroke="{colour}" '
                          f'stroke-width="{2 * radius * SCALE:.2f}" stroke-linecap="round" '
                          f'stroke-opacity="0.85"{attrs}/>')

    def text(self, s):
        self.items.append(f'<text x="{MARGIN_PX:.0f}" y="{MARGIN_PX * 0.8:.0f}" font-size="12" '
                          f'font-family="monospace">{escape(s)}</text>')

    def svg(self) -> str:
        w, h = self.size
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
                f'viewBox="0 0 {w:.2f} {h:.2f}">')
        return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *self.items, "</svg>", ""])


def _view_bounds(scene, view):
    pts = [np.zeros((1, 3))]
    for b in [scene.table, *scene.objects, *scene.obstacles]:
        pts.append(_outline(b.shape, b.pose))
    pts.append(np.array([[0, 0, 0.6], [-0.15, 0, 0]]))
    p2 = _project(np.vstack(pts), view)
    return p2.min(axis=0) - 0.05, p2.max(axis=0) + 0.05


def render_svg(model, tool, scene, traj, t: float, view: str = "top") -> str:
    """One frame at time ``t`` as SVG text."""
    if len(traj) == 0 or t < traj.times[0] - TIME_TOL or t > traj.times[-1] + TIME_TOL:
        span = (traj.times[0], traj.times[-1]) if len(traj) else "empty"
        raise TimeOutOfRange(f"time {t} outside the trajectory span {span}")
    state = state_at_time(model, scene, traj, t)
    c = _Canvas(view, _view_bounds(scene, view))
    c.text(f"{scene.name}  t = {t:.2f} s")
    # painter's order: nearer to the viewer is drawn later
    depth = (lambda pose: pose.position[2]) if view == "top" else (lambda pose: -pose.position[1])

    c.shape(scene.table.shape, scene.table.pose, STYLE["table"])
    for ob in scene.obstacles:
        c.shape(ob.shape, ob.pose, STYLE["table"])
    for shape, pose in model.torso_bodies:
        c.shape(shape, pose, STYLE["torso"])
    for name, goal in sorted(scene.goals.items(), key=lambda kv: kv[1].position[2]):
        shape = next(o.shape for o in scene.objects if o.name == name)
        c.shape(shape, goal, STYLE["goal"], f' id="goal-{escape(name)}"')

    poses = object_poses(model, state)
    bodies = []
    for o in scene.objects:
        p = poses[o.name]
        attrs = (f' id="object-{escape(o.name)}" data-x="{p.position[0]:.6f}" data-y="{p.position[1]:.6f}" '
                 f'data-z="{p.position[2]:.6f}"')
        bodies.append((o.shape, p, STYLE["object"], attrs))
    tw = tool_world_pose(model, state.configs, state.held)
    for b in tool.bodies(tw):
        bodies.append((b.shape, b.pose, STYLE["tool"], ""))
    for shape, pose, style, attrs in sorted(bodies, key=lambda x: depth(x[1])):
        c.shape(shape, pose, style, attrs)

    for side in ARMS:
        arm = model.arm(side)
        q = state.configs[side]
        for caps in link_capsules_world(arm, q):
            for cap, pose in caps:
                c.shape(cap, pose, STYLE[side])
        link_r, link_p, *_ = fk_batch(arm, q)
        last = RigidTransform.from_matrix(link_r[0, -1], link_p[0, -1])
        for p0, p1 in model.gripper.finger_segments(state.jaws[side]):
            cap, local = capsule_between(p0, p1, model.gripper.finger_radius)
            c.shape(cap, last @ local, STYLE[side])
    return c.svg()


def render_frames(model, tool, scene, traj, times, out_dir, view: str = "top") -> list:
    """Write one SVG per requested time; returns the paths in request order."""
    frames = [render_svg(model, tool, scene, traj, float(t), view) for t in times]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, text in enumerate(frames):
        path = out / f"frame_{k:03d}_{view}.svg"
        path.write_text(text)
        paths.append(path)
    return paths
