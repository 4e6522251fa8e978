"""Joint-space planning for one arm: RRT-Connect, validation, shortcutting, timing.

A query only needs joint limits and a batched validity function, so the
same code plans for the 6-DOF arms and for small test models.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import InvalidQuery, NoPath

FINE_FACTOR = 10  # final paths are re-checked this many times finer than they were planned


@dataclass(frozen=True)
class RRTParams:
    step_size: float = 0.1
    max_iterations: int = 5000
    goal_connect_threshold: float = 0.1
    validation_resolution: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if min(self.step_size, self.max_iterations, self.goal_connect_threshold, self.validation_resolution) <= 0:
            raise ValueError("RRT parameters must be positive")


@dataclass
class MotionQuery:
    """Plan ``moving_arm`` from ``start`` to ``goal`` with everything else frozen.

    ``valid`` maps a (B, dof) batch to a (B,) boolean array.
    """

    moving_arm: str
    start: np.ndarray
    goal: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    valid: Callable
    params: RRTParams = field(default_factory=RRTParams)
    attachment: str = "none"

    def __post_init__(self):
        self.start = np.asarray(self.start, float)
        self.goal = np.asarray(self.goal, float)
        self.lower = np.asarray(self.lower, float)
        self.upper = np.asarray(self.upper, float)


@dataclass
class Path:
    waypoints: list
    arm: str = ""
    attachment: str = "none"

    def array(self) -> np.ndarray:
        return np.array(self.waypoints, float)

    def length(self) -> float:
        w = self.array()
        if len(w) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(w, axis=0), axis=1)))


def interpolate(a, b, resolution: float, include_start: bool = True) -> np.ndarray:
    """Points from ``a`` to ``b`` no more than ``resolution`` apart (Euclidean)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(1, int(math.ceil(np.linalg.norm(b - a) / resolution - 1e-12)))
    t = np.linspace(0.0, 1.0, n + 1)
    if not include_start:
        t = t[1:]
    return a + t[:, None] * (b - a)


def within_limits(q: MotionQuery, qs) -> np.ndarray:
    qs = np.atleast_2d(qs)
    return np.all((qs >= q.lower - 1e-12) & (qs <= q.upper + 1e-12), axis=1)


def segment_free(q: MotionQuery, a, b, resolution=None) -> bool:
    pts = interpolate(a, b, resolution or q.params.validation_resolution, include_start=False)
    return bool(np.all(q.valid(pts)))


def _free_prefix(q: MotionQuery, a, b) -> float:
    """Largest fraction of the straight segment a->b that is collision free."""
    res = q.params.validation_resolution
    pts = interpolate(a, b, res, include_start=False)
    ok = q.valid(pts)
    if ok.all():
        return 1.0
    first = int(np.argmin(ok))
    return first / len(pts)


class _Tree:
    def __init__(self, root, dof):
        self.q = np.empty((64, dof))
        self.parent = np.empty(64, int)
        self.n = 0
        self.add(root, -1)

    def add(self, q, parent) -> int:
        if self.n == len(self.q):
            self.q = np.concatenate([self.q, np.empty_like(self.q)])
            self.parent = np.concatenate([self.parent, np.empty_like(self.parent)])
        self.q[self.n] = q
        self.parent[self.n] = parent
        self.n += 1
        return self.n - 1

    def nearest(self, q) -> int:
        d = np.sum((self.q[:self.n] - q) ** 2, axis=1)
        return int(np.argmin(d))

    def path_to_root(self, i) -> list:
        out = []
        while i >= 0:
            out.append(self.q[i].copy())
            i = int(self.parent[i])
        return out


def _grow(q: MotionQuery, tree: _Tree, target, connect: bool):
    """Extend ``tree`` toward ``target``; with ``connect`` keep going until blocked.

    Returns (index of the last node added or the nearest node, reached flag).
    """
    p = q.params
    i = tree.nearest(target)
    near = tree.q[i].copy()
    d = float(np.linalg.norm(target - near))
    if d <= p.goal_connect_threshold:
        if segment_free(q, near, target):
            return tree.add(target, i), True
        return i, False
    span = d if connect else min(d, p.step_size)
    end = near + (target - near) * (span / d)
    frac = _free_prefix(q, near, end)
    reach = frac * span
    if reach < min(p.step_size, span) - 1e-12 and not (connect and reach > 0):
        return i, False
    # lay nodes every step_size along the free part
    n_steps = int(math.floor(reach / p.step_size + 1e-9))
    last = i
    for k in range(1, n_steps + 1):
        last = tree.add(near + (target - near) * (k * p.step_size / d), last)
    reached = frac == 1.0 and abs(span - d) < 1e-12
    if reached:
        if n_steps * p.step_size < d - 1e-12:
            last = tree.add(target, last)
        return last, True
    if connect and last != i:
        # the remaining gap may already be within the connect threshold
        rem = float(np.linalg.norm(target - tree.q[last]))
        if rem <= p.goal_connect_threshold and segment_free(q, tree.q[last], target):
            return tree.add(target, last), True
    return last, False


def rrt_connect(q: MotionQuery) -> Path:
    """Bidirectional RRT with the greedy connect heuristic; deterministic per seed."""
    p = q.params
    ends = np.stack([q.start, q.goal])
    ok = within_limits(q, ends) & q.valid(ends)
    if not ok[0]:
        raise InvalidQuery("start configuration is invalid")
    if not ok[1]:
        raise InvalidQuery("goal configuration is invalid")
    if np.array_equal(q.start, q.goal):
        return Path([q.start.copy()], q.moving_arm, q.attachment)
    if segment_free(q, q.start, q.goal):
        return Path([q.start.copy(), q.goal.copy()], q.moving_arm, q.attachment)
    rng = np.random.default_rng(p.seed)
    dof = len(q.start)
    ta, tb = _Tree(q.start, dof), _Tree(q.goal, dof)
    a_is_start = True
    for _ in range(p.max_iterations):
        sample = rng.uniform(q.lower, q.upper)
        before = ta.n
        ia, _ = _grow(q, ta, sample, connect=False)
        if ta.n > before:
            ib, reached = _grow(q, tb, ta.q[ia].copy(), connect=True)
            if reached:
                if a_is_start:
                    way = ta.path_to_root(ia)[::-1] + tb.path_to_root(ib)[1:]
                else:
                    way = tb.path_to_root(ib)[::-1] + ta.path_to_root(ia)[1:]
                return Path(_dedupe(way), q.moving_arm, q.attachment)
        ta, tb = tb, ta
        a_is_start = not a_is_start
    raise NoPath(f"no path within {p.max_iterations} iterations")


def _dedupe(way) -> list:
    out = [way[0]]
    for w in way[1:]:
        if not np.array_equal(w, out[-1]):
            out.append(w)
    return out


def validate_path(path: Path, q: MotionQuery, resolution: float | None = None) -> bool:
    """Endpoints match the query and every interpolant is within limits and valid."""
    w = path.array()
    if len(w) == 0:
        return False
    if not (np.allclose(w[0], q.start, atol=1e-9, rtol=0) and np.allclose(w[-1], q.goal, atol=1e-9, rtol=0)):
        return False
    res = resolution or q.params.validation_resolution
    pts = [w[:1]] + [interpolate(a, b, res, include_start=False) for a, b in zip(w, w[1:])]
    pts = np.concatenate(pts)
    return bool(np.all(within_limits(q, pts)) and np.all(q.valid(pts)))


def shortcut_path(path: Path, q: MotionQuery, attempts: int = 50, seed: int = 0) -> Path:
    """Random shortcutting; never lengthens the path."""
    w = [np.asarray(x, float) for x in path.waypoints]
    if attempts <= 0 or len(w) < 3:
        return Path(list(w), path.arm, path.attachment)
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        if len(w) < 3:
            break
        i, j = sorted(rng.choice(len(w), size=2, replace=False))
        if j - i < 2:
            continue
        if segment_free(q, w[i], w[j]):
            w = w[:i + 1] + w[j:]
    return Path(w, path.arm, path.attachment)


def time_parameterize(path: Path, max_joint_speed: float = 1.0):
    """Timestamps so no joint exceeds ``max_joint_speed``; returns (times, waypoints)."""
    if max_joint_speed <= 0:
        raise ValueError("max_joint_speed must be positive")
    w = path.array()
    if len(w) < 2:
        return np.zeros(len(w)), w
    dt = np.max(np.abs(np.diff(w, axis=0)), axis=1) / max_joint_speed
    return np.concatenate([[0.0], np.cumsum(dt)]), w


def _rrt_and_shortcut(q: MotionQuery, shortcut_attempts: int) -> Path:
    path = rrt_connect(q)
    if len(path.waypoints) > 2:
        path = shortcut_path(path, q, shortcut_attempts, q.params.seed + 1)
    return path


def plan_motion(q: MotionQuery, shortcut_attempts: int = 40, fine_factor: int = FINE_FACTOR) -> Path:
    """RRT-Connect followed by shortcutting.

    The result is re-checked at ``fine_factor`` times the validation
    resolution.  A path that only passes the coarse check clips something
    between samples; the query is then planned again at the fine resolution.
    """
    path = _rrt_and_shortcut(q, shortcut_attempts)
    if fine_factor > 1:
        fine_res = q.params.validation_resolution / fine_factor
        if not validate_path(path, q, fine_res):
            fine = replace(q, params=replace(q.params, validation_resolution=fine_res))
            path = _rrt_and_shortcut(fine, shortcut_attempts)
    return path
