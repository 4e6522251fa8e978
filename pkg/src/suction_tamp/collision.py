"""Batched validity checking for one moving arm against a frozen world.

Capsules (robot links, fingers, tool handle) are replaced by chains of
spheres whose radii are inflated so the chain covers the capsule; boxes and
cylinders are kept as exact solids.  All tests for a batch of joint
configurations of the moving arm run as a handful of numpy operations.

Held bodies (tool pad, attached object) may rest on static solids: against
static solids they are tested shrunk by ``contact_allowance``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import (MARGIN, Body, Box, Capsule, Cylinder, RigidTransform, _Support, capsule_between, compose,
                   gjk_intersect)
from .robot import DualArmModel, fk_batch, other_arm

CONTACT_ALLOWANCE = 3e-3
SPHERE_SPACING = 0.5  # sphere spacing as a fraction of the capsule radius
CHUNK = 256  # configurations per vectorised batch, bounds memory
CLUSTER = 16  # spheres per bounding cluster

# moving-group ids
HAND_LINKS = (4, 5)  # wrist housing and palm of the default model
FINGER0, FINGER1 = 6, 7
TOOL_CLOUD = 8
TOOL_SOLID = 9
OBJECT_SOLID = 10


def capsule_spheres(capsule: Capsule, pose: RigidTransform, spacing=SPHERE_SPACING):
    """Centres (n, 3) and radii (n,) of spheres covering the capsule."""
    n = max(2, int(math.ceil(capsule.length / (spacing * capsule.radius))) + 1)
    d = capsule.length / (n - 1)
    z = np.linspace(-capsule.length / 2, capsule.length / 2, n)
    local = np.stack([np.zeros(n), np.zeros(n), z], axis=1)
    r = math.sqrt(capsule.radius ** 2 + (d / 2) ** 2)
    return pose.apply(local), np.full(n, r)


def point_solid_distance(shape, local_points):
    """Distance from points (expressed in the solid's frame) to a box or cylinder."""
    if isinstance(shape, Box):
        q = np.abs(local_points) - np.asarray(shape.half_extents)
        return np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    if isinstance(shape, Cylinder):
        rho = np.hypot(local_points[..., 0], local_points[..., 1])
        dr = np.maximum(rho - shape.radius, 0.0)
        dz = np.maximum(np.abs(local_points[..., 2]) - shape.height / 2, 0.0)
        return np.hypot(dr, dz)
    raise TypeError(f"not a solid: {shape!r}")


def _to_local(points, r, p):
    # points (..., 3), r (3, 3) or (B, 3, 3)
    if r.ndim == 2:
        return (points - p) @ r
    return np.einsum("b...j,bjk->b...k", points - p[:, None, :], r)


@dataclass
class Solid:
    shape: object
    pose: RigidTransform
    name: str


@dataclass
class HeldState:
    """What the world looks like apart from the joint angles.

    ``tool_pose`` is the world pose of the tool while it is not held.  When it
    is held, ``tool_holder`` names the arm and ``tool_rel`` is the tool pose in
    that arm's TCP frame.  ``attached`` maps object names to their pose in the
    tool frame.
    """

    tool_pose: RigidTransform | None = None
    tool_holder: str | None = None
    tool_rel: RigidTransform | None = None
    attached: dict = field(default_factory=dict)


def _split_tool(tool):
    clouds, solids = [], []
    for name, shape, local in tool.body_shapes:
        if isinstance(shape, Capsule):
            clouds.append(capsule_spheres(shape, local))
        else:
            solids.append((name, shape, local))
    if clouds:
        c = np.concatenate([c for c, _ in clouds])
        r = np.concatenate([r for _, r in clouds])
    else:
        c, r = np.zeros((0, 3)), np.zeros(0)
    return c, r, solids


class ArmChecker:
    """Validity of configurations of ``side`` with everything else frozen."""

    def __init__(self, model: DualArmModel, side: str, configs: dict, jaws: dict, held: HeldState,
                 tool=None, objects=(), static_solids=(), margin=MARGIN,
                 contact_allowance=CONTACT_ALLOWANCE):
        self.model = model
        self.side = side
        self.arm = model.arm(side)
        self.margin = margin
        self.allowance = contact_allowance
        objects = {o.name: o for o in objects}
        other = other_arm(side)
        n_links = self.arm.dof

        # ---- moving spheres, each tied to a link frame
        cen, rad, grp, frame = [], [], [], []
        for i, caps in enumerate(self.arm.link_capsules):
            for cap, local in caps:
                c, r = capsule_spheres(cap, local)
                cen.append(c), rad.append(r), grp.append(np.full(len(r), i)), frame.append(np.full(len(r), i))
        last = n_links - 1
        fingers = model.gripper.finger_segments(jaws[side])
        for k, (p0, p1) in enumerate(fingers):
            cap, local = capsule_between(p0, p1, model.gripper.finger_radius)
            c, r = capsule_spheres(cap, local)
            cen.append(c), rad.append(r), grp.append(np.full(len(r), FINGER0 + k)), frame.append(np.full(len(r), last))

        self.moving_solids = []  # (group, shape, pose in last-link frame)
        holds_tool = held.tool_holder == side and tool is not None
        if holds_tool:
            link_tool = compose(self.arm.tcp_offset, held.tool_rel)
            tc, tr, tsolids = _split_tool(tool)
            if len(tr):
                cen.append(link_tool.apply(tc)), rad.append(tr)
                grp.append(np.full(len(tr), TOOL_CLOUD)), frame.append(np.full(len(tr), last))
            for name, shape, local in tsolids:
                self.moving_solids.append((TOOL_SOLID, shape, compose(link_tool, local), f"tool/{name}"))
            for name, rel in held.attached.items():
                o = objects[name]
                self.moving_solids.append((OBJECT_SOLID, o.shape, compose(link_tool, rel), name))
        self.m_cen = np.concatenate(cen)
        self.m_rad = np.concatenate(rad)
        self.m_grp = np.concatenate(grp)
        self.m_frame = np.concatenate(frame).astype(int)

        # ---- self pairs among moving spheres
        g = self.m_grp
        gi, gj = g[:, None], g[None, :]
        links_i, links_j = gi < n_links, gj < n_links
        check = np.zeros((len(g), len(g)), bool)
        check |= links_i & links_j & (np.abs(gi - gj) >= 2)
        body_links_j = links_j & ~np.isin(gj, list(HAND_LINKS))
        fingers_i = np.isin(gi, [FINGER0, FINGER1])
        check |= fingers_i & body_links_j
        check |= (gi == TOOL_CLOUD) & body_links_j
        check = np.triu(check | check.T, 1)
        self.self_i, self.self_j = np.nonzero(check)
        self._build_clusters(check | check.T)

        # which moving spheres each moving solid must avoid
        self.solid_vs_moving = []
        for grp_id, shape, local, name in self.moving_solids:
            if grp_id == TOOL_SOLID:
                mask = np.isin(g, list(range(n_links))) & ~np.isin(g, list(HAND_LINKS))
            else:
                mask = (g < n_links) | np.isin(g, [FINGER0, FINGER1])
            self.solid_vs_moving.append(np.nonzero(mask)[0])

        # ---- static spheres: the other arm (+ tool cloud if not held by us)
        s_cen, s_rad, s_tag = [], [], []
        if other in configs:
            oc, orad = _arm_world_spheres(model, other, configs[other], jaws[other])
            s_cen.append(oc), s_rad.append(orad), s_tag.append(np.zeros(len(orad), int))
        self.static_solids = [Solid(s.shape, s.pose, s.name) for s in static_solids]
        if tool is not None and not holds_tool:
            if held.tool_holder is None:
                tool_world = held.tool_pose
            else:
                *_, tcp_r, tcp_p = fk_batch(model.arm(held.tool_holder), configs[held.tool_holder])
                tool_world = compose(RigidTransform.from_matrix(tcp_r[0], tcp_p[0]), held.tool_rel)
            tc, tr, tsolids = _split_tool(tool)
            if len(tr):
                s_cen.append(tool_world.apply(tc)), s_rad.append(tr), s_tag.append(np.ones(len(tr), int))
            for name, shape, local in tsolids:
                self.static_solids.append(Solid(shape, compose(tool_world, local), f"tool/{name}"))
            for name, rel in held.attached.items():
                o = objects[name]
                self.static_solids.append(Solid(o.shape, compose(tool_world, rel), name))
        for name, o in objects.items():
            if name in held.attached:
                continue
            self.static_solids.append(Solid(o.shape, o.pose, name))
        self.s_cen = np.concatenate(s_cen) if s_cen else np.zeros((0, 3))
        self.s_rad = np.concatenate(s_rad) if s_rad else np.zeros(0)
        self.s_tag = np.concatenate(s_tag) if s_tag else np.zeros(0, int)
        # static spheres in runs of at most CLUSTER with a bounding sphere each
        runs = np.array_split(np.arange(len(self.s_rad)), max(1, int(math.ceil(len(self.s_rad) / CLUSTER))))
        k = max(len(r) for r in runs)
        self.sc_members = np.zeros((len(runs), k), int)
        self.sc_rad = np.full((len(runs), k), -np.inf)
        self.sc_cen = np.zeros((len(runs), 3))
        self.sc_bound = np.zeros(len(runs))
        for j, r in enumerate(runs):
            if not len(r):
                continue
            self.sc_members[j, :len(r)] = r
            self.sc_members[j, len(r):] = r[0]
            self.sc_rad[j, :len(r)] = self.s_rad[r]
            self.sc_cen[j] = self.s_cen[r].mean(axis=0)
            self.sc_bound[j] = np.max(np.linalg.norm(self.s_cen[r] - self.sc_cen[j], axis=1) + self.s_rad[r])
        self.sc_world = self.s_cen[self.sc_members]  # (SC, k, 3)

        # moving clusters vs static solids: the first link sits on the torso
        self.cluster_solid_masks = []
        for s in self.static_solids:
            mask = np.ones(len(self.c_frame), bool)
            if s.name.startswith("torso"):
                mask &= self.c_group != 0
            self.cluster_solid_masks.append(np.nonzero(mask)[0])
        self._static_local = [(s.pose.rotation, s.pose.position) for s in self.static_solids]
        self.static_bounds = np.array([s.shape.bounding_radius for s in self.static_solids]) if self.static_solids else np.zeros(0)

    def _build_clusters(self, check) -> None:
        """Split each moving group into runs of at most CLUSTER spheres with a bounding sphere each.

        ``check`` is the symmetric sphere-pair matrix of self tests.  Pairs of
        clusters containing at least one checked sphere pair are kept along
        with the sphere-pair mask between them.
        """
        members = []
        for gid in np.unique(self.m_grp):
            idx = np.nonzero(self.m_grp == gid)[0]
            members += np.array_split(idx, int(math.ceil(len(idx) / CLUSTER)))
        k = max(len(m) for m in members)
        n = len(members)
        self.c_members = np.zeros((n, k), int)
        self.c_rad = np.full((n, k), -np.inf)  # padding never collides
        self.c_local = np.zeros((n, 3))
        self.c_bound = np.zeros(n)
        self.c_frame = np.zeros(n, int)
        self.c_group = np.zeros(n, int)
        for c, m in enumerate(members):
            self.c_members[c, :len(m)] = m
            self.c_members[c, len(m):] = m[0]
            self.c_rad[c, :len(m)] = self.m_rad[m]
            centre = self.m_cen[m].mean(axis=0)
            self.c_local[c] = centre
            self.c_bound[c] = np.max(np.linalg.norm(self.m_cen[m] - centre, axis=1) + self.m_rad[m])
            self.c_frame[c] = self.m_frame[m[0]]
            self.c_group[c] = self.m_grp[m[0]]
        pa, pb, masks = [], [], []
        for a in range(n):
            for b in range(a + 1, n):
                sub = np.zeros((k, k), bool)
                ma, mb = members[a], members[b]
                sub[:len(ma), :len(mb)] = check[np.ix_(ma, mb)]
                if sub.any():
                    pa.append(a), pb.append(b), masks.append(sub)
        self.pair_a = np.array(pa, int)
        self.pair_b = np.array(pb, int)
        self.pair_mask = np.array(masks, bool).reshape(len(pa), k, k)

    # ------------------------------------------------------------------
    def valid(self, qs) -> np.ndarray:
        """Boolean validity for each row of ``qs`` (B, dof)."""
        qs = np.atleast_2d(np.asarray(qs, float))
        if len(qs) > CHUNK:
            return np.concatenate([self._valid(qs[k:k + CHUNK]) for k in range(0, len(qs), CHUNK)])
        return self._valid(qs)

    def _valid(self, qs) -> np.ndarray:
        b = len(qs)
        ok = np.ones(b, bool)
        link_r, link_p, *_ = fk_batch(self.arm, qs)
        fr = link_r[:, self.m_frame]  # (B, S, 3, 3)
        w = np.einsum("bsij,sj->bsi", fr, self.m_cen) + link_p[:, self.m_frame]

        # cluster bounding spheres prune every sphere test below
        cw = np.einsum("bcij,cj->bci", link_r[:, self.c_frame], self.c_local) + link_p[:, self.c_frame]
        mg = self.margin
        if len(self.pair_a):
            d = np.linalg.norm(cw[:, self.pair_a] - cw[:, self.pair_b], axis=-1)
            bi, pi = np.nonzero(d < self.c_bound[self.pair_a] + self.c_bound[self.pair_b] + mg)
            if len(bi):
                ca, cb = self.pair_a[pi], self.pair_b[pi]
                wa = w[bi[:, None], self.c_members[ca]]
                wb = w[bi[:, None], self.c_members[cb]]
                diff = wa[:, :, None] - wb[:, None]
                lim = self.c_rad[ca][:, :, None] + self.c_rad[cb][:, None, :] + mg
                close = np.einsum("nijk,nijk->nij", diff, diff) < np.where(lim > 0, lim, 0.0) ** 2
                hit = np.any(close & self.pair_mask[pi], axis=(1, 2))
                ok[bi[hit]] = False
        if len(self.s_rad):
            diff = cw[:, :, None] - self.sc_cen
            lim = self.c_bound[:, None] + self.sc_bound + mg
            bi, ci, sj = np.nonzero(np.einsum("bcsk,bcsk->bcs", diff, diff) < lim * lim)
            if len(bi):
                # moving spheres near the static cluster's bound, then against its members
                wa = w[bi[:, None], self.c_members[ci]]
                diff = wa - self.sc_cen[sj][:, None]
                lim = self.c_rad[ci] + self.sc_bound[sj][:, None] + mg
                n, i = np.nonzero(np.einsum("nik,nik->ni", diff, diff) < np.where(lim > 0, lim, 0.0) ** 2)
                if len(n):
                    diff = wa[n, i][:, None] - self.sc_world[sj[n]]
                    lim = self.c_rad[ci[n], i][:, None] + self.sc_rad[sj[n]] + mg
                    close = np.einsum("mjk,mjk->mj", diff, diff) < np.where(lim > 0, lim, 0.0) ** 2
                    ok[bi[n[np.any(close, axis=1)]]] = False
        for (rot, pos), s, cl in zip(self._static_local, self.static_solids, self.cluster_solid_masks):
            d = point_solid_distance(s.shape, (cw[:, cl] - pos) @ rot)
            bi, k = np.nonzero(d < self.c_bound[cl] + mg)
            if len(bi):
                ci = cl[k]
                d = point_solid_distance(s.shape, (w[bi[:, None], self.c_members[ci]] - pos) @ rot)
                hit = np.any(d < self.c_rad[ci] + mg, axis=1)
                ok[bi[hit]] = False
        if not self.moving_solids:
            return ok
        last_r, last_p = link_r[:, -1], link_p[:, -1]
        for (grp, shape, local_pose, name), mov_idx in zip(self.moving_solids, self.solid_vs_moving):
            sr = last_r @ local_pose.rotation
            sp = last_p + last_r @ local_pose.position
            if len(mov_idx):
                loc = _to_local(w[:, mov_idx], sr, sp)
                d = point_solid_distance(shape, loc)
                ok &= ~np.any(d < self.m_rad[mov_idx] + self.margin, axis=1)
            if len(self.s_rad):
                near = np.linalg.norm(sp[:, None] - self.sc_cen, axis=-1) < shape.bounding_radius + self.sc_bound + mg
                bi, sj = np.nonzero(near)
                if len(bi):
                    loc = np.einsum("nmj,njk->nmk", self.sc_world[sj] - sp[bi][:, None], sr[bi])
                    d = point_solid_distance(shape, loc)
                    hit = np.any(d < self.sc_rad[sj] + mg, axis=1)
                    ok[bi[hit]] = False
            shrunk = shape.shrunk(self.allowance)
            bound = shrunk.bounding_radius
            for s, (rot, pos), sb in zip(self.static_solids, self._static_local, self.static_bounds):
                if name == s.name:
                    continue
                centre_d = point_solid_distance(s.shape, (sp - pos) @ rot)
                near = ok & (centre_d < bound + self.margin)
                for k in np.nonzero(near)[0]:
                    pose = RigidTransform.from_matrix(sr[k], sp[k])
                    sa = _Support(shrunk, pose, self.margin)
                    sb_ = _Support(s.shape, s.pose, 0.0)
                    if gjk_intersect(sa, sb_, tuple((s.pose.position - sp[k]).tolist())):
                        ok[k] = False
        return ok

    def world_spheres(self, q):
        """World sphere centres/radii of the moving arm at one configuration (debug helper)."""
        link_r, link_p, *_ = fk_batch(self.arm, q)
        fr = link_r[:, self.m_frame]
        w = np.einsum("bsij,sj->bsi", fr, self.m_cen) + link_p[:, self.m_frame]
        return w[0], self.m_rad


class ArmCloud:
    """Sphere cover of one arm (links and fingers) at a fixed jaw width."""

    def __init__(self, model: DualArmModel, side: str, jaw: float):
        self.arm = model.arm(side)
        cen, rad, frame = [], [], []
        for i, caps in enumerate(self.arm.link_capsules):
            for cap, local in caps:
                c, r = capsule_spheres(cap, local)
                cen.append(c), rad.append(r), frame.append(np.full(len(r), i))
        last = self.arm.dof - 1
        for p0, p1 in model.gripper.finger_segments(jaw):
            cap, local = capsule_between(p0, p1, model.gripper.finger_radius)
            c, r = capsule_spheres(cap, local)
            cen.append(c), rad.append(r), frame.append(np.full(len(r), last))
        self.local = np.concatenate(cen)
        self.radii = np.concatenate(rad)
        self.frame = np.concatenate(frame).astype(int)

    def world(self, qs) -> np.ndarray:
        """Sphere centres (B, S, 3) for configurations ``qs`` (B, dof)."""
        link_r, link_p, *_ = fk_batch(self.arm, np.atleast_2d(qs))
        return np.einsum("bsij,sj->bsi", link_r[:, self.frame], self.local) + link_p[:, self.frame]


def clouds_collide(ca, ra, cb, rb, margin=MARGIN) -> np.ndarray:
    """Overlap of sphere sets ``ca`` (B, S, 3) and ``cb`` (B, M, 3), per batch row."""
    diff = ca[:, :, None, :] - cb[:, None, :, :]
    d2 = np.einsum("bsmk,bsmk->bsm", diff, diff)
    lim = ra[:, None] + rb[None, :] + margin
    return np.any(d2 < lim * lim, axis=(1, 2))


def _arm_world_spheres(model: DualArmModel, side, q, jaw):
    cloud = ArmCloud(model, side, jaw)
    return cloud.world(q)[0], cloud.radii


def body_solids(bodies) -> list:
    return [Solid(b.shape, b.pose, b.name) for b in bodies]


def torso_solids(model: DualArmModel) -> list:
    return [Solid(s, p, f"torso{i}") for i, (s, p) in enumerate(model.torso_bodies)]


def tcp_pose(model: DualArmModel, side: str, q) -> RigidTransform:
    *_, r, p = fk_batch(model.arm(side), q)
    return RigidTransform.from_matrix(r[0], p[0])


def tool_world_pose(model, configs, held: HeldState) -> RigidTransform:
    if held.tool_holder is None:
        return held.tool_pose
    return compose(tcp_pose(model, held.tool_holder, configs[held.tool_holder]), held.tool_rel)


def hand_bodies_in_tcp(model: DualArmModel, side: str, jaw: float) -> list:
    """Bodies of the hand (wrist housing, palm, fingers) expressed in the TCP frame."""
    arm = model.arm(side)
    q = arm.home_config()
    link_r, link_p, *_ = fk_batch(arm, q)
    tcp = tcp_pose(model, side, q).inverse()
    out = []
    for i in HAND_LINKS:
        frame = compose(tcp, RigidTransform.from_matrix(link_r[0, i], link_p[0, i]))
        for k, (cap, local) in enumerate(arm.link_capsules[i]):
            out.append(Body(cap, compose(frame, local), f"link{i + 1}"))
    last = compose(tcp, RigidTransform.from_matrix(link_r[0, -1], link_p[0, -1]))
    for k, (p0, p1) in enumerate(model.gripper.finger_segments(jaw)):
        cap, local = capsule_between(p0, p1, model.gripper.finger_radius)
        out.append(Body(cap, compose(last, local), f"finger{k}"))
    return out
