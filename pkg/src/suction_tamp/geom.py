"""Rigid transforms, primitive shapes and boolean collision tests.

Rotations are unit quaternions (w, x, y, z), renormalised after every
composition and kept in the ``w >= 0`` hemisphere so that equal rotations
compare equal.  Pair collision tests run a boolean GJK on the cores of the
two shapes inflated by their rounding radii plus a safety margin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Union

import numpy as np

MARGIN = 1e-3  # metres, conservative buffer on every overlap test


# --------------------------------------------------------------------------
# quaternion helpers


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if n == 0.0:
        raise ValueError("zero quaternion")
    # leave already-unit input untouched so serialised poses reload bit-exactly
    if abs(n - 1.0) > 1e-13:
        q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m):
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def axis_angle_quat(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    s = math.sin(angle / 2.0)
    return quat_normalize([math.cos(angle / 2.0), *(axis * s)])


def rotation_angle(m):
    """Angle of the rotation matrix ``m`` in [0, pi]."""
    c = (np.trace(m) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def rotvec_from_matrices(r):
    """Batched log map: (..., 3, 3) rotation matrices -> (..., 3) rotation vectors."""
    r = np.asarray(r, dtype=float)
    cos = np.clip((np.trace(r, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos)
    vee = np.stack([r[..., 2, 1] - r[..., 1, 2],
                    r[..., 0, 2] - r[..., 2, 0],
                    r[..., 1, 0] - r[..., 0, 1]], axis=-1)
    sin = np.sin(angle)
    small = sin < 1e-6
    scale = np.where(small, 0.5, angle / (2.0 * np.where(small, 1.0, sin)))
    out = vee * scale[..., None]
    # near pi the antisymmetric part vanishes; recover the axis from the symmetric part
    near_pi = small & (cos < 0.0)
    if np.any(near_pi):
        for idx in zip(*np.nonzero(near_pi)) if r.ndim > 2 else [()]:
            m = r[idx]
            diag = np.clip((np.diag(m) + 1.0) / 2.0, 0.0, None)
            k = int(np.argmax(diag))
            axis = (m[:, k] + np.eye(3)[k]) / 2.0
            axis /= np.linalg.norm(axis)
            out[idx] = axis * angle[idx]
    return out


def rotation_matrices(axes, angles):
    """Rodrigues formula, batched over angles.  axes: (3,) or (..., 3); angles: (...)."""
    angles = np.asarray(angles, dtype=float)
    axes = np.broadcast_to(np.asarray(axes, dtype=float), angles.shape + (3,))
    x, y, z = axes[..., 0], axes[..., 1], axes[..., 2]
    c, s = np.cos(angles), np.sin(angles)
    t = 1.0 - c
    out = np.empty(angles.shape + (3, 3))
    out[..., 0, 0] = t * x * x + c
    out[..., 0, 1] = t * x * y - s * z
    out[..., 0, 2] = t * x * z + s * y
    out[..., 1, 0] = t * x * y + s * z
    out[..., 1, 1] = t * y * y + c
    out[..., 1, 2] = t * y * z - s * x
    out[..., 2, 0] = t * x * z - s * y
    out[..., 2, 1] = t * y * z + s * x
    out[..., 2, 2] = t * z * z + c
    return out


# --------------------------------------------------------------------------
# rigid transforms


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Position (m) plus unit-quaternion rotation (w, x, y, z)."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        object.__setattr__(self, "position", _frozen(p))
        object.__setattr__(self, "quaternion", _frozen(quat_normalize(self.quaternion)))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, rotation, position=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(position, matrix_to_quat(rotation))

    @classmethod
    def from_matrix4(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls.from_matrix(m[:3, :3], m[:3, 3])

    @classmethod
    def translation(cls, x, y=None, z=None) -> "RigidTransform":
        if y is None:
            return cls(np.asarray(x, dtype=float))
        return cls((x, y, z))

    @classmethod
    def rotation_about(cls, axis, angle, position=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(position, axis_angle_quat(axis, angle))

    @classmethod
    def rot_z(cls, angle, position=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls.rotation_about((0, 0, 1), angle, position)

    @cached_property
    def rotation(self) -> np.ndarray:
        m = quat_to_matrix(self.quaternion)
        m.setflags(write=False)
        return m

    def matrix4(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.position
        return m

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.position

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def inverse(self) -> "RigidTransform":
        return invert(self)

    def allclose(self, other: "RigidTransform", atol=1e-9) -> bool:
        return (np.allclose(self.position, other.position, atol=atol, rtol=0.0)
                and np.allclose(self.rotation, other.rotation, atol=atol, rtol=0.0))

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return (np.array_equal(self.position, other.position)
                and np.array_equal(self.quaternion, other.quaternion))

    def __hash__(self):
        return hash((self.position.tobytes(), self.quaternion.tobytes()))

    def __repr__(self):
        p = ", ".join(f"{v:.4g}" for v in self.position)
        q = ", ".join(f"{v:.4g}" for v in self.quaternion)
        return f"RigidTransform(p=({p}), q=({q}))"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """The transform that applies ``b`` first, then ``a``."""
    return RigidTransform(a.position + a.rotation @ b.position,
                          quat_multiply(a.quaternion, b.quaternion))


def invert(t: RigidTransform) -> RigidTransform:
    qc = t.quaternion * np.array([1.0, -1.0, -1.0, -1.0])
    return RigidTransform(-(t.rotation.T @ t.position), qc)


def pose_error(a: RigidTransform, b: RigidTransform) -> tuple[float, float]:
    """(translation distance in m, rotation angle in rad) between two poses."""
    dp = float(np.linalg.norm(a.position - b.position))
    return dp, rotation_angle(a.rotation @ b.rotation.T)


# --------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class Box:
    half_extents: tuple

    def __post_init__(self):
        h = tuple(float(v) for v in self.half_extents)
        if len(h) != 3 or min(h) <= 0:
            raise ValueError(f"box half extents must be three positive numbers, got {h}")
        object.__setattr__(self, "half_extents", h)

    @property
    def bounding_radius(self):
        return math.sqrt(sum(v * v for v in self.half_extents))

    def shrunk(self, d):
        return Box(tuple(max(v - d, 1e-4) for v in self.half_extents))


@dataclass(frozen=True)
class Cylinder:
    """Solid cylinder centred on its frame origin, axis along local z."""

    radius: float
    height: float

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("cylinder dimensions must be positive")
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "height", float(self.height))

    @property
    def bounding_radius(self):
        return math.hypot(self.radius, self.height / 2)

    def shrunk(self, d):
        return Cylinder(max(self.radius - d, 1e-4), max(self.height - 2 * d, 1e-4))


@dataclass(frozen=True)
class Capsule:
    """Segment of ``length`` along local z (centred) swept by a ball of ``radius``."""

    radius: float
    length: float

    def __post_init__(self):
        if self.radius <= 0 or self.length <= 0:
            raise ValueError("capsule dimensions must be positive")
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "length", float(self.length))

    @property
    def bounding_radius(self):
        return self.radius + self.length / 2

    def shrunk(self, d):
        return Capsule(max(self.radius - d, 1e-4), self.length)


Shape = Union[Box, Cylinder, Capsule]


def shape_to_dict(shape: Shape) -> dict:
    if isinstance(shape, Box):
        return {"type": "box", "half_extents": list(shape.half_extents)}
    if isinstance(shape, Cylinder):
        return {"type": "cylinder", "radius": shape.radius, "height": shape.height}
    if isinstance(shape, Capsule):
        return {"type": "capsule", "radius": shape.radius, "length": shape.length}
    raise TypeError(shape)


def shape_from_dict(d: dict) -> Shape:
    kind = d.get("type")
    if kind == "box":
        return Box(tuple(d["half_extents"]))
    if kind == "cylinder":
        return Cylinder(d["radius"], d["height"])
    if kind == "capsule":
        return Capsule(d["radius"], d["length"])
    raise ValueError(f"unknown shape type {kind!r}")


@dataclass(frozen=True, eq=False)
class Body:
    shape: Shape
    pose: RigidTransform
    name: str


def capsule_between(p0, p1, radius) -> tuple[Capsule, RigidTransform]:
    """Capsule whose core segment runs from ``p0`` to ``p1``, with its local pose."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    d = p1 - p0
    length = float(np.linalg.norm(d))
    z = d / length
    return Capsule(radius, length), RigidTransform(0.5 * (p0 + p1), _quat_z_to(z))


def _quat_z_to(z):
    z = np.asarray(z, float)
    c = float(z[2])
    if c > 1 - 1e-12:
        return np.array([1.0, 0, 0, 0])
    if c < -1 + 1e-12:
        return np.array([0.0, 1, 0, 0])
    axis = np.cross([0.0, 0.0, 1.0], z)
    return axis_angle_quat(axis, math.acos(c))


# --------------------------------------------------------------------------
# GJK on shape cores

def _core_radius(shape):
    return shape.radius if isinstance(shape, Capsule) else 0.0


class _Support:
    __slots__ = ("shape", "r", "p", "radius")

    def __init__(self, shape, pose, inflate):
        self.shape = shape
        self.r = pose.rotation.tolist()
        self.p = pose.position.tolist()
        self.radius = inflate

    def __call__(self, d):
        r = self.r
        dx, dy, dz = d
        lx = r[0][0] * dx + r[1][0] * dy + r[2][0] * dz
        ly = r[0][1] * dx + r[1][1] * dy + r[2][1] * dz
        lz = r[0][2] * dx + r[1][2] * dy + r[2][2] * dz
        s = self.shape
        if isinstance(s, Box):
            hx, hy, hz = s.half_extents
            sx = hx if lx >= 0 else -hx
            sy = hy if ly >= 0 else -hy
            sz = hz if lz >= 0 else -hz
        elif isinstance(s, Cylinder):
            n = math.hypot(lx, ly)
            if n > 1e-12:
                sx, sy = s.radius * lx / n, s.radius * ly / n
            else:
                sx = sy = 0.0
            sz = s.height / 2 if lz >= 0 else -s.height / 2
        else:
            sx = sy = 0.0
            sz = s.length / 2 if lz >= 0 else -s.length / 2
        p = self.p
        wx = p[0] + r[0][0] * sx + r[0][1] * sy + r[0][2] * sz
        wy = p[1] + r[1][0] * sx + r[1][1] * sy + r[1][2] * sz
        wz = p[2] + r[2][0] * sx + r[2][1] * sy + r[2][2] * sz
        if self.radius:
            n = math.sqrt(dx * dx + dy * dy + dz * dz)
            if n > 0:
                k = self.radius / n
                wx += dx * k
                wy += dy * k
                wz += dz * k
        return (wx, wy, wz)


def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def _neg(a):
    return (-a[0], -a[1], -a[2])


def _triple(a, b, c):
    # (a x b) x c
    return _cross(_cross(a, b), c)


def _tiny(v):
    return _dot(v, v) < 1e-24


def gjk_intersect(sa, sb, start_dir, max_iter=64) -> bool:
    """Boolean GJK: True when the Minkowski difference of the two supports holds the origin."""
    d = start_dir if not _tiny(start_dir) else (1.0, 0.0, 0.0)

    def support(v):
        return _sub(sa(v), sb(_neg(v)))

    a = support(d)
    simplex = [a]
    d = _neg(a)
    if _tiny(d):
        return True
    for _ in range(max_iter):
        a = support(d)
        if _dot(a, d) < 0.0:
            return False
        simplex.append(a)
        hit, d = _do_simplex(simplex)
        if hit or _tiny(d):
            return True
    return True


def _do_simplex(s):
    # s is ordered oldest..newest; newest point is "a"
    if len(s) == 2:
        b, a = s
        ab, ao = _sub(b, a), _neg(a)
        if _dot(ab, ao) > 0:
            d = _triple(ab, ao, ab)
            if _tiny(d):
                return True, d
            return False, d
        s[:] = [a]
        return False, ao
    if len(s) == 3:
        c, b, a = s
        ab, ac, ao = _sub(b, a), _sub(c, a), _neg(a)
        abc = _cross(ab, ac)
        if _dot(_cross(abc, ac), ao) > 0:
            if _dot(ac, ao) > 0:
                s[:] = [c, a]
                return False, _triple(ac, ao, ac)
            return _line_case(s, b, a, ab, ao)
        if _dot(_cross(ab, abc), ao) > 0:
            return _line_case(s, b, a, ab, ao)
        v = _dot(abc, ao)
        if v > 0:
            return False, abc
        if v < 0:
            s[:] = [b, c, a]
            return False, _neg(abc)
        return True, abc
    # tetrahedron
    d_, c, b, a = s
    ab, ac, ad, ao = _sub(b, a), _sub(c, a), _sub(d_, a), _neg(a)
    abc = _cross(ab, ac)
    acd = _cross(ac, ad)
    adb = _cross(ad, ab)
    if _dot(abc, ad) > 0:
        abc = _neg(abc)
    if _dot(acd, ab) > 0:
        acd = _neg(acd)
    if _dot(adb, ac) > 0:
        adb = _neg(adb)
    if _dot(abc, ao) > 0:
        s[:] = [c, b, a]
        return _do_simplex(s)
    if _dot(acd, ao) > 0:
        s[:] = [d_, c, a]
        return _do_simplex(s)
    if _dot(adb, ao) > 0:
        s[:] = [b, d_, a]
        return _do_simplex(s)
    return True, ao


def _line_case(s, b, a, ab, ao):
    if _dot(ab, ao) > 0:
        s[:] = [b, a]
        return False, _triple(ab, ao, ab)
    s[:] = [a]
    return False, ao


def collide_pair(a: Body, b: Body, margin: float = MARGIN) -> bool:
    """True when the two bodies overlap or come closer than ``margin``."""
    pa, pb = a.pose.position, b.pose.position
    gap = float(np.linalg.norm(pa - pb)) - a.shape.bounding_radius - b.shape.bounding_radius
    if gap > margin:
        return False
    inflate = _core_radius(a.shape) + _core_radius(b.shape) + margin
    sa = _Support(a.shape, a.pose, inflate)
    sb = _Support(b.shape, b.pose, 0.0)
    return gjk_intersect(sa, sb, tuple((pb - pa).tolist()))


def _pair_key(a: str, b: str):
    return (a, b) if a <= b else (b, a)


def collide_scene(bodies: Iterable[Body], ignore_pairs=(), margin: float = MARGIN) -> bool:
    """True when any pair of bodies not listed in ``ignore_pairs`` collides."""
    bodies = list(bodies)
    ignore = {_pair_key(*p) for p in ignore_pairs}
    for i, a in enumerate(bodies):
        for b in bodies[i + 1:]:
            if _pair_key(a.name, b.name) in ignore:
                continue
            if collide_pair(a, b, margin):
                return True
    return False


def colliding_pairs(bodies: Iterable[Body], ignore_pairs=(), margin: float = MARGIN):
    bodies = list(bodies)
    ignore = {_pair_key(*p) for p in ignore_pairs}
    out = []
    for i, a in enumerate(bodies):
        for b in bodies[i + 1:]:
            if _pair_key(a.name, b.name) not in ignore and collide_pair(a, b, margin):
                out.append(_pair_key(a.name, b.name))
    return out


# --------------------------------------------------------------------------
# pose (de)serialisation


def pose_to_dict(t: RigidTransform) -> dict:
    return {"position": [float(v) for v in t.position],
            "quaternion": [float(v) for v in t.quaternion]}


def pose_from_dict(d: dict) -> RigidTransform:
    return RigidTransform(d["position"], d.get("quaternion", (1.0, 0.0, 0.0, 0.0)))
