"""Suction poses: planar facets of an object and tool placements on them.

A suction pose is the tool frame expressed in the object frame.  The tool
frame has its origin at the pad centre and approaches along its -Z axis, so a
pose on a facet puts tool +Z on the facet's outward normal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoPoses, UnsupportedShape
from .geom import Box, Capsule, Cylinder, RigidTransform, compose

CYLINDER_SEGMENTS = 32


@dataclass(frozen=True)
class SuctionParams:
    pad_radius: float = 0.015
    grid_step: float = 0.02
    margin: float = 0.005
    spin_count: int = 8


@dataclass(frozen=True, eq=False)
class Facet:
    normal: np.ndarray
    polygon: np.ndarray  # (k, 3) vertices in the object frame, counter-clockwise about normal
    centroid: np.ndarray
    u: np.ndarray  # in-plane axes, u x v = normal
    v: np.ndarray

    @classmethod
    def from_polygon(cls, normal, vertices) -> "Facet":
        n = np.asarray(normal, float)
        n = n / np.linalg.norm(n)
        verts = np.asarray(vertices, float)
        u, v = _plane_axes(n)
        c = verts.mean(axis=0)
        # keep counter-clockwise order in (u, v)
        uv = np.stack([(verts - c) @ u, (verts - c) @ v], axis=1)
        area = 0.5 * np.sum(uv[:, 0] * np.roll(uv[:, 1], -1) - np.roll(uv[:, 0], -1) * uv[:, 1])
        if area < 0:
            verts = verts[::-1]
        return cls(n, verts, c, u, v)

    def to_plane(self, points) -> np.ndarray:
        d = np.asarray(points, float) - self.centroid
        return np.stack([d @ self.u, d @ self.v], axis=-1)

    def edge_clearance(self, points) -> np.ndarray:
        """Signed distance from in-facet points to the nearest polygon edge (positive inside)."""
        uv = np.atleast_2d(self.to_plane(points))
        poly = self.to_plane(self.polygon)
        a, b = poly, np.roll(poly, -1, axis=0)
        e = b - a
        inward = np.stack([-e[:, 1], e[:, 0]], axis=1)
        inward /= np.linalg.norm(inward, axis=1, keepdims=True)
        d = np.einsum("pkj,kj->pk", uv[:, None, :] - a[None], inward)
        return d.min(axis=1)


FacetSet = list


def _plane_axes(n):
    if abs(n[2]) < 0.9:
        u = np.cross((0.0, 0.0, 1.0), n)
    else:
        u = np.array([1.0, 0.0, 0.0]) - n[0] * n
    u = u / np.linalg.norm(u)
    return u, np.cross(n, u)


def extract_facets(shape) -> list:
    """Planar facets of a primitive in its own frame: 6 for a box, 2 for a cylinder."""
    if isinstance(shape, Box):
        h = np.array(shape.half_extents)
        facets = []
        for axis in range(3):
            for sign in (1.0, -1.0):
                n = np.zeros(3)
                n[axis] = sign
                i, j = [k for k in range(3) if k != axis]
                corners = []
                for si, sj in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                    p = np.zeros(3)
                    p[axis] = sign * h[axis]
                    p[i], p[j] = si * h[i], sj * h[j]
                    corners.append(p)
                facets.append(Facet.from_polygon(n, corners))
        return facets
    if isinstance(shape, Cylinder):
        ang = 2 * math.pi * np.arange(CYLINDER_SEGMENTS) / CYLINDER_SEGMENTS
        ring = np.stack([shape.radius * np.cos(ang), shape.radius * np.sin(ang), np.zeros_like(ang)], axis=1)
        top = ring + (0, 0, shape.height / 2)
        bottom = ring - (0, 0, shape.height / 2)
        return [Facet.from_polygon((0, 0, 1), top), Facet.from_polygon((0, 0, -1), bottom)]
    if isinstance(shape, Capsule):
        raise UnsupportedShape("capsules have no planar facet")
    raise UnsupportedShape(f"unsupported shape {shape!r}")


@dataclass(frozen=True, eq=False)
class SuctionPose:
    relative: RigidTransform  # tool frame in the object frame
    facet_id: int
    contact_point: np.ndarray
    rank_key: float  # distance of the contact from the facet centroid
    grid_index: tuple = (0, 0)
    spin_index: int = 0

    @property
    def sort_key(self):
        return (round(self.rank_key, 9), self.facet_id, self.grid_index, self.spin_index)


def sample_suction_poses(facets, pad_radius: float, grid_step: float, margin: float,
                         spin_count: int) -> list:
    """Grid samples on every facet that fit the pad, each spun about the facet normal.

    The grid is anchored at the facet centroid so the centroid is always a
    candidate.  Output is sorted centroid-first.
    """
    if pad_radius <= 0 or grid_step <= 0 or margin < 0 or spin_count < 1:
        raise ValueError("pad_radius and grid_step must be positive, spin_count >= 1")
    clearance = pad_radius + margin
    poses = []
    for fid, facet in enumerate(facets):
        uv = facet.to_plane(facet.polygon)
        lo, hi = uv.min(axis=0), uv.max(axis=0)
        ni = range(int(math.floor(lo[0] / grid_step + 1e-9)), int(math.ceil(hi[0] / grid_step - 1e-9)) + 1)
        nj = range(int(math.floor(lo[1] / grid_step + 1e-9)), int(math.ceil(hi[1] / grid_step - 1e-9)) + 1)
        grid = [(i, j) for i in ni for j in nj]
        if not grid:
            continue
        pts = np.array([facet.centroid + i * grid_step * facet.u + j * grid_step * facet.v for i, j in grid])
        ok = facet.edge_clearance(pts) >= clearance - 1e-12
        for (i, j), p, good in zip(grid, pts, ok):
            if not good:
                continue
            rank = float(np.linalg.norm(p - facet.centroid))
            for k in range(spin_count):
                a = 2 * math.pi * k / spin_count
                x = math.cos(a) * facet.u + math.sin(a) * facet.v
                y = np.cross(facet.normal, x)
                rot = np.stack([x, y, facet.normal], axis=1)
                rel = RigidTransform.from_matrix(rot, p)
                poses.append(SuctionPose(rel, fid, p.copy(), rank, (i, j), k))
    if not poses:
        raise NoPoses("no facet admits the suction pad")
    poses.sort(key=lambda s: s.sort_key)
    return poses


def tool_pose_on_object(object_pose: RigidTransform, suction: SuctionPose) -> RigidTransform:
    """World pose of the tool attached at ``suction`` to an object at ``object_pose``."""
    return compose(object_pose, suction.relative)


def upward_poses(poses, facets, object_pose: RigidTransform, min_dot: float = 0.9) -> list:
    """Keep poses whose facet normal points up (world +Z) at ``object_pose``."""
    up = {fid for fid, f in enumerate(facets) if (object_pose.rotation @ f.normal)[2] > min_dot}
    return [s for s in poses if s.facet_id in up]


def suction_poses_for(shape, object_pose: RigidTransform, params: SuctionParams, all_facets=False) -> list:
    facets = extract_facets(shape)
    poses = sample_suction_poses(facets, params.pad_radius, params.grid_step, params.margin, params.spin_count)
    if all_facets:
        return poses
    poses = upward_poses(poses, facets, object_pose)
    if not poses:
        raise NoPoses("no upward-facing facet admits the suction pad")
    return poses
