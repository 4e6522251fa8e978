"""Task planner: suction-pose iteration, two regrasp-and-motion phases, backtracking.

For every object (closest to its goal first) suction poses are tried in rank
order.  A pose is only used when grasps of the tool exist both where the tool
must meet the object and where the tool must be when the object sits at its
goal.  Phase 1 brings the bare tool to the object; phase 2 carries the
tool-object complex to the goal.  A failed motion deletes its regrasp edge
and the graph is searched again; an exhausted phase-2 graph kills the phase-1
goal node that led to it; an exhausted phase-1 graph moves on to the next
suction pose.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .collision import CONTACT_ALLOWANCE, ArmChecker, HeldState, body_solids, tcp_pose, torso_solids, tool_world_pose
from .errors import InvalidQuery, NoPath, NoPoses, NoSequence, TaskFailure
from .geom import Body, RigidTransform, collide_pair, compose
from .motion import MotionQuery, Path, RRTParams, plan_motion, time_parameterize
from .regrasp import (GOAL, HANDOVER_EDGE, INITIAL, TRANSFER, TRANSIT, GraspNode, build_graph, delete_edge,
                      filter_handover_for_attachment, kill_node, replace_goal_layer, search_sequence, to_dot)
from .robot import ARMS, solve_ik_many
from .scene import Event, Trajectory
from .suction import SuctionParams, suction_poses_for

log = logging.getLogger(__name__)

PHASES = ("suction", "regrasp1", "motion1", "regrasp2", "motion2")


@dataclass(frozen=True)
class PlannerParams:
    max_suction_poses: int = 24
    motion_iterations: int = 2000
    ik_restarts: int = 6
    wall_clock: float = 900.0  # seconds for the whole task
    max_joint_speed: float = 1.0
    shortcut_attempts: int = 40
    transit_edges: bool = False
    retreat_after_handover: bool = True
    stow_tool: bool = False
    grid_step: float = 0.02
    suction_margin: float = 0.005
    spin_count: int = 8


class Failure(Exception):
    """Sub-planner failure routed by the backtracking loop."""

    def __init__(self, kind, edge=None, node=None, reasons=None):
        super().__init__(kind)
        self.kind = kind
        self.edge = edge
        self.node = node
        self.reasons = reasons or {}


@dataclass
class WorldState:
    configs: dict
    jaws: dict
    held: HeldState
    objects: dict  # name -> Body at its current pose (attached ones are moved on release)

    def copy(self) -> "WorldState":
        return WorldState({k: v.copy() for k, v in self.configs.items()}, dict(self.jaws),
                          HeldState(self.held.tool_pose, self.held.tool_holder, self.held.tool_rel,
                                    dict(self.held.attached)),
                          dict(self.objects))


@dataclass
class Episode:
    object: str
    suction: object  # SuctionPose
    sequence1: list  # (layer, arm, grasp id) per node
    kinds1: list
    sequence2: list
    kinds2: list
    initial_grasp: tuple  # (arm, grasp id)
    final_grasp: tuple
    final_tool_pose: RigidTransform
    stats: dict


@dataclass
class PlanResult:
    episodes: list
    trajectory: Trajectory
    stats: dict
    final_state: WorldState = None
    graphs: list = field(default_factory=list)  # DOT dumps when requested


def order_objects(objects, goals) -> list:
    """Names sorted by distance to their goal position, ties by name."""
    def key(o):
        return (float(np.linalg.norm(o.pose.position - goals[o.name].position)), o.name)
    return [o.name for o in sorted((o for o in objects if o.name in goals), key=key)]


class _Builder:
    """Accumulates timed samples and events."""

    def __init__(self, state: WorldState, speed: float):
        self.t = 0.0
        self.speed = speed
        self.times = [0.0]
        self.left = [state.configs["left"].copy()]
        self.right = [state.configs["right"].copy()]
        self.jaws = [[state.jaws["left"], state.jaws["right"]]]
        self.events = []
        self.segments = []

    def motion(self, arm: str, path: Path, kind: str, meta: dict):
        times, way = time_parameterize(path, self.speed)
        t0 = self.t
        for dt, q in zip(times[1:], way[1:]):
            self.times.append(t0 + float(dt))
            self.left.append(q.copy() if arm == "left" else self.left[-1].copy())
            self.right.append(q.copy() if arm == "right" else self.right[-1].copy())
            self.jaws.append(list(self.jaws[-1]))
        self.t = self.times[-1]
        self.segments.append({"t0": t0, "t1": self.t, "arm": arm, "kind": kind, **meta})

    def event(self, kind: str, payload: dict, jaws=None):
        self.events.append(Event(self.t, kind, payload, len(self.times)))
        if jaws is not None:
            self.times.append(self.t)
            self.left.append(self.left[-1].copy())
            self.right.append(self.right[-1].copy())
            self.jaws.append([jaws["left"], jaws["right"]])

    def build(self) -> Trajectory:
        return Trajectory(np.array(self.times), np.array(self.left), np.array(self.right),
                          np.array(self.jaws, float), list(self.events), list(self.segments), self.speed)


def _pose_payload(t: RigidTransform) -> dict:
    return {"position": [float(v) for v in t.position], "quaternion": [float(v) for v in t.quaternion]}


class TaskPlanner:
    def __init__(self, model, tool, db, scene, params: PlannerParams = PlannerParams(), seed: int = 0,
                 dump_graph: bool = False):
        self.model = model
        self.tool = tool
        self.db = db
        self.scene = scene
        self.params = params
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.dump_graph = dump_graph
        self.statics = torso_solids(model) + body_solids(scene.static_bodies())
        self.open_jaw = model.gripper_stroke
        self.closed_jaw = tool.handle_width
        self.suction_params = SuctionParams(tool.pad_radius, params.grid_step, params.suction_margin,
                                            params.spin_count)
        self.counters = {"motion_queries": 0, "edges_deleted": 0, "nodes_killed": 0, "suction_poses": 0,
                         "loop_iterations": 0, "loop_bound": 0}

    # ------------------------------------------------------------------ helpers
    def _seed(self) -> int:
        return int(self.rng.integers(0, 2 ** 31 - 1))

    def _checker(self, state: WorldState, side: str) -> ArmChecker:
        return ArmChecker(self.model, side, state.configs, state.jaws, state.held, self.tool,
                          list(state.objects.values()), self.statics)

    def _motion(self, state: WorldState, side: str, goal, attachment: str) -> Path:
        chk = self._checker(state, side)
        arm = self.model.arm(side)
        q = MotionQuery(side, state.configs[side], goal, arm.lower, arm.upper, chk.valid,
                        RRTParams(max_iterations=self.params.motion_iterations, seed=self._seed()), attachment)
        self.counters["motion_queries"] += 1
        return plan_motion(q, self.params.shortcut_attempts)

    def tool_pose(self, state: WorldState) -> RigidTransform:
        return tool_world_pose(self.model, state.configs, state.held)

    def layer_nodes(self, state: WorldState, tool_pose: RigidTransform, layer: str, attachment=None) -> list:
        """Grasp nodes (both arms) with the tool at ``tool_pose``.

        ``attachment`` is (object name, object pose in the tool frame).  Each
        node's arm is checked with open jaws against the scene and the tool;
        the other arm is left to the motion planner.
        """
        if not self.complex_clear(state, tool_pose, attachment):
            return []
        held = HeldState(tool_pose=tool_pose, attached={attachment[0]: attachment[1]} if attachment else {})
        grasps = self.db.grasps
        targets = [compose(tool_pose, g.hand_pose) for g in grasps]
        nodes = []
        for side in ARMS:
            arm = self.model.arm(side)
            seeds = [state.configs[side], arm.home_config()]
            sols = solve_ik_many(arm, targets, self.rng, self.params.ik_restarts, seeds)
            flat, owner = [], []
            for gi, lst in enumerate(sols):
                for q in lst:
                    flat.append(q), owner.append(gi)
            if not flat:
                continue
            chk = ArmChecker(self.model, side, {side: state.configs[side]}, {side: self.open_jaw}, held,
                             self.tool, list(state.objects.values()), self.statics)
            ok = chk.valid(np.array(flat))
            seen = set()
            for q, gi, good in zip(flat, owner, ok):
                if good and gi not in seen:
                    seen.add(gi)
                    nodes.append(GraspNode(layer, side, gi, tool_pose, q,
                                           attachment[0] if attachment else None))
        nodes.sort(key=lambda n: (n.arm, n.grasp_id))
        return nodes

    def complex_clear(self, state: WorldState, tool_pose: RigidTransform, attachment=None) -> bool:
        """The tool (and attached object) at ``tool_pose`` clear the torso, the scene and other objects.

        Resting contact is allowed: the held bodies are shrunk by the contact allowance.
        """
        held = self.tool.bodies(tool_pose)
        if attachment is not None:
            o = state.objects[attachment[0]]
            held.append(Body(o.shape, compose(tool_pose, attachment[1]), o.name))
        others = [Body(s.shape, s.pose, s.name) for s in self.statics]
        others += [o for n, o in state.objects.items() if attachment is None or n != attachment[0]]
        return not any(collide_pair(Body(h.shape.shrunk(CONTACT_ALLOWANCE), h.pose, h.name), b)
                       for h in held for b in others)

    def handover_pairs(self, state: WorldState, attachment=None) -> list:
        """Database pairs still valid in the current scene (and with the object attached)."""
        pairs = list(self.db.handover_pairs)
        if attachment is not None:
            obj = state.objects[attachment[0]]
            pairs = filter_handover_for_attachment(pairs, attachment[1], obj, self.model)
        if not pairs:
            return []
        static_objects = [o for n, o in state.objects.items() if attachment is None or n != attachment[0]]
        keep = np.ones(len(pairs), bool)
        for role in ("giver", "receiver"):
            for side in ARMS:
                idx = [k for k, p in enumerate(pairs) if getattr(p, role).arm == side]
                if not idx:
                    continue
                chk = ArmChecker(self.model, side, {side: self.model.arm(side).home_config()},
                                 {side: self.open_jaw}, HeldState(), None, static_objects, self.statics)
                qs = np.array([getattr(pairs[k], role).config for k in idx])
                keep[idx] &= chk.valid(qs)
        # the tool (and attached object) must clear the scene at each handover pose
        scene_bodies = [Body(s.shape, s.pose, s.name) for s in self.statics] + static_objects
        pose_ok = {}
        for k, p in enumerate(pairs):
            if not keep[k]:
                continue
            key = p.sample
            if key not in pose_ok:
                held = self.tool.bodies(p.tool_pose)
                if attachment is not None:
                    o = state.objects[attachment[0]]
                    held.append(Body(o.shape, compose(p.tool_pose, attachment[1]), o.name))
                pose_ok[key] = not any(collide_pair(a, b) for a in held for b in scene_bodies)
            keep[k] = pose_ok[key]
        return [p for p, k in zip(pairs, keep) if k]

    # ------------------------------------------------------------------ execution
    def execute(self, g, seq, state: WorldState, phase: int, episode: int):
        """Plan every motion of ``seq``; returns (pieces, new state) or raises Failure."""
        st = state.copy()
        nodes = [g.nodes[i] for i in seq.nodes]
        pieces = []
        meta = {"episode": episode, "phase": phase}

        def motion(side, goal, kind, edge, attach):
            try:
                path = self._motion(st, side, goal, attach)
            except (NoPath, InvalidQuery) as exc:
                raise Failure("NoMotion", edge=edge) from exc
            pieces.append(("motion", side, path, kind, meta))
            st.configs[side] = np.array(path.waypoints[-1], float)

        # leading run of initial nodes joined by transit edges
        start = 0
        while start + 1 < len(nodes) and seq.kinds[start] == TRANSIT:
            start += 1
        n0 = nodes[start]
        attach_name = "tool_plus_object" if st.held.attached else "tool"
        if st.held.tool_holder is None:
            edge = (seq.nodes[0], seq.nodes[1]) if len(seq.nodes) > 1 else None
            try:
                path = self._motion(st, n0.arm, n0.config, "none")
            except (NoPath, InvalidQuery) as exc:
                raise Failure("NoMotion", edge=edge, node=seq.nodes[start]) from exc
            pieces.append(("motion", n0.arm, path, "transit", meta))
            st.configs[n0.arm] = n0.config.copy()
            tool_w = self.tool_pose(st)
            st.jaws[n0.arm] = self.closed_jaw
            st.held = HeldState(None, n0.arm, compose(tcp_pose(self.model, n0.arm, n0.config).inverse(), tool_w),
                                dict(st.held.attached))
            pieces.append(("event", "grasp", {"arm": n0.arm, "grasp": n0.grasp_id, "chained": False,
                                              "tool_rel": _pose_payload(st.held.tool_rel), **meta}, dict(st.jaws)))
        elif phase == 1:
            pieces.append(("event", "grasp", {"arm": n0.arm, "grasp": n0.grasp_id, "chained": True,
                                              "tool_rel": _pose_payload(st.held.tool_rel), **meta}, None))
        for k in range(start, len(nodes) - 1):
            a, b = nodes[k], nodes[k + 1]
            edge = (seq.nodes[k], seq.nodes[k + 1])
            kind = seq.kinds[k]
            if kind == TRANSFER:
                motion(a.arm, b.config, "transfer", edge, attach_name)
            elif kind == HANDOVER_EDGE:
                giver, receiver = a.arm, b.arm
                motion(receiver, b.config, "transit", edge, "none")
                tool_w = self.tool_pose(st)
                st.jaws[receiver] = self.closed_jaw
                st.jaws[giver] = self.open_jaw
                rel = compose(tcp_pose(self.model, receiver, st.configs[receiver]).inverse(), tool_w)
                st.held = HeldState(None, receiver, rel, dict(st.held.attached))
                pieces.append(("event", "handover_exchange",
                               {"giver": giver, "receiver": receiver, "grasp": b.grasp_id,
                                "tool_rel": _pose_payload(rel), **meta}, dict(st.jaws)))
                if self.params.retreat_after_handover:
                    home = self.model.arm(giver).home_config()
                    try:
                        path = self._motion(st, giver, home, "none")
                    except (NoPath, InvalidQuery):
                        path = None
                    if path is not None:
                        pieces.append(("motion", giver, path, "retreat", meta))
                        st.configs[giver] = home
            else:
                raise Failure("NoMotion", edge=edge)
        return pieces, st

    # ------------------------------------------------------------------ phases
    def _search_and_execute(self, g, state, phase, episode, stats, budget_key):
        """Search/delete loop; returns (seq, pieces, state) or raises Failure('NoSequence')."""
        limit = len(g.edges) + len(g.deleted_edges) + 1
        self.counters["loop_bound"] += limit + 1
        for _ in range(limit + 1):
            self.counters["loop_iterations"] += 1
            self._check_clock()
            t0 = time.perf_counter()
            try:
                seq = search_sequence(g)
            except NoSequence:
                stats[f"regrasp{phase}"] += time.perf_counter() - t0
                raise Failure("NoSequence")
            stats[f"regrasp{phase}"] += time.perf_counter() - t0
            t0 = time.perf_counter()
            try:
                pieces, st = self.execute(g, seq, state, phase, episode)
            except Failure as f:
                stats[f"motion{phase}"] += time.perf_counter() - t0
                if f.node is not None:
                    self.counters["nodes_killed"] += 1
                    self.counters["edges_deleted"] += kill_node(g, f.node)
                elif f.edge is not None:
                    delete_edge(g, f.edge)
                    self.counters["edges_deleted"] += 1
                stats["edges_deleted"] += 1
                continue
            stats[f"motion{phase}"] += time.perf_counter() - t0
            return seq, pieces, st
        raise Failure("NoSequence")

    def _check_clock(self):
        if time.perf_counter() - self._t_start > self.params.wall_clock:
            raise Failure("Timeout")

    def plan_object(self, name: str, state: WorldState, episode: int):
        """One episode; returns (Episode, pieces, new state) or raises Failure with a diagnosis."""
        stats = {p: 0.0 for p in PHASES}
        stats.update({"suction_poses_tried": 0, "edges_deleted": 0, "phase2_failures": 0})
        reasons = {}
        obj = state.objects[name]
        goal = self.scene.goals[name]
        t0 = time.perf_counter()
        try:
            poses = suction_poses_for(obj.shape, obj.pose, self.suction_params)
        except NoPoses:
            raise Failure("NoPoses")
        stats["suction"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        holder = state.held.tool_holder
        if holder is None:
            initial = self.layer_nodes(state, state.held.tool_pose, INITIAL)
            if not initial:
                stats["regrasp1"] += time.perf_counter() - t0
                raise Failure("NoGraspAtStart")
        else:
            gid = self._held_grasp
            initial = [GraspNode(INITIAL, holder, gid, self.tool_pose(state), state.configs[holder].copy())]
        pairs1 = self.handover_pairs(state)
        stats["regrasp1"] += time.perf_counter() - t0
        g1 = None
        for suction in poses[:self.params.max_suction_poses]:
            self._check_clock()
            stats["suction_poses_tried"] += 1
            self.counters["suction_poses"] += 1
            rel = suction.relative
            p1 = compose(obj.pose, rel)
            p2 = compose(goal, rel)
            attach = (name, rel.inverse())
            placed = state.copy()
            del placed.objects[name]
            placed.objects[name] = Body(obj.shape, goal, name)
            if not self.complex_clear(placed, p2, attach):
                # cheap rejection before any inverse kinematics
                reasons["NoGraspAtGoal"] = reasons.get("NoGraspAtGoal", 0) + 1
                continue
            t0 = time.perf_counter()
            goal1 = self.layer_nodes(state, p1, GOAL)
            stats["regrasp1"] += time.perf_counter() - t0
            if not goal1:
                reasons["NoGraspAtSuction"] = reasons.get("NoGraspAtSuction", 0) + 1
                continue
            t0 = time.perf_counter()
            goal2 = self.layer_nodes(placed, p2, GOAL, attach)
            stats["regrasp2"] += time.perf_counter() - t0
            if not goal2:
                reasons["NoGraspAtGoal"] = reasons.get("NoGraspAtGoal", 0) + 1
                continue
            t0 = time.perf_counter()
            if g1 is None:
                g1 = build_graph(self.db, initial, goal1, pairs1, None, self.params.transit_edges)
            else:
                replace_goal_layer(g1, goal1)
            stats["regrasp1"] += time.perf_counter() - t0
            pairs2 = None
            while True:
                try:
                    seq1, pieces1, st1 = self._search_and_execute(g1, state, 1, episode, stats, "1")
                except Failure as f:
                    reasons[f.kind] = reasons.get(f.kind, 0) + 1
                    if f.kind == "Timeout":
                        raise Failure("Timeout")
                    break
                # attach the object
                tool_w = self.tool_pose(st1)
                obj_rel = compose(tool_w.inverse(), obj.pose)
                st1.held = HeldState(None, st1.held.tool_holder, st1.held.tool_rel, {name: obj_rel})
                suction_ev = ("event", "suction_on", {"object": name, "object_rel": _pose_payload(obj_rel),
                                                      "episode": episode, "phase": 1}, None)
                last = g1.nodes[seq1.nodes[-1]]
                t0 = time.perf_counter()
                if pairs2 is None:
                    pairs2 = self.handover_pairs(state, (name, obj_rel))
                init2 = [GraspNode(INITIAL, last.arm, last.grasp_id, tool_w, st1.configs[last.arm].copy(), name)]
                g2 = build_graph(self.db, init2, goal2, pairs2, name, False)
                stats["regrasp2"] += time.perf_counter() - t0
                try:
                    seq2, pieces2, st2 = self._search_and_execute(g2, st1, 2, episode, stats, "2")
                except Failure as f:
                    if f.kind == "Timeout":
                        raise
                    reasons["Phase2" + f.kind] = reasons.get("Phase2" + f.kind, 0) + 1
                    stats["phase2_failures"] += 1
                    self.counters["nodes_killed"] += 1
                    kill_node(g1, seq1.nodes[-1])
                    if self.dump_graph:
                        self._dots.append(to_dot(g2))
                    continue
                if self.dump_graph:
                    self._dots += [to_dot(g1), to_dot(g2)]
                # place and release the object
                holder2 = st2.held.tool_holder
                final_tool = self.tool_pose(st2)
                placed_pose = compose(final_tool, obj_rel)
                st2.objects[name] = Body(obj.shape, placed_pose, name)
                st2.held = HeldState(None, holder2, st2.held.tool_rel, {})
                end = g2.nodes[seq2.nodes[-1]]
                self._held_grasp = end.grasp_id
                pieces = pieces1 + [suction_ev] + pieces2 + [
                    ("event", "place", {"object": name, "pose": _pose_payload(placed_pose),
                                        "episode": episode, "phase": 2}, None),
                    ("event", "suction_off", {"object": name, "episode": episode, "phase": 2}, None)]
                first = g1.nodes[seq1.nodes[0]]
                ep = Episode(name, suction,
                             [(g1.nodes[i].layer, g1.nodes[i].arm, g1.nodes[i].grasp_id) for i in seq1.nodes],
                             list(seq1.kinds),
                             [(g2.nodes[i].layer, g2.nodes[i].arm, g2.nodes[i].grasp_id) for i in seq2.nodes],
                             list(seq2.kinds), (first.arm, first.grasp_id), (end.arm, end.grasp_id),
                             final_tool, stats)
                return ep, pieces, st2
        stats["reasons"] = reasons
        raise Failure("Exhausted", reasons=reasons)

    def plan(self) -> PlanResult:
        self._t_start = time.perf_counter()
        self._dots = []
        self._held_grasp = None
        configs = {s: self.model.arm(s).home_config() for s in ARMS}
        state = WorldState(configs, {s: self.open_jaw for s in ARMS}, HeldState(tool_pose=self.scene.tool_pose),
                           {o.name: o for o in self.scene.objects})
        builder = _Builder(state, self.params.max_joint_speed)
        episodes = []
        diagnosis = {}
        for k, name in enumerate(order_objects(self.scene.objects, self.scene.goals)):
            t0 = time.perf_counter()
            try:
                ep, pieces, state = self.plan_object(name, state, k)
            except Failure as f:
                diagnosis[name] = {"kind": f.kind, "reasons": f.reasons}
                partial = self._assemble(builder, episodes, state)
                raise TaskFailure(f"planning failed for object {name!r} ({f.kind})", diagnosis, partial)
            ep.stats["total"] = time.perf_counter() - t0
            log.info("object %s planned in %.1f s", name, ep.stats["total"])
            self._emit(builder, pieces)
            episodes.append(ep)
        if self.params.stow_tool:
            state = self._stow(builder, state)
        return self._assemble(builder, episodes, state)

    def _assemble(self, builder, episodes, state) -> PlanResult:
        stats = {"objects": [dict(object=e.object, **{p: e.stats[p] for p in PHASES},
                                  total=e.stats.get("total", 0.0),
                                  suction_poses_tried=e.stats["suction_poses_tried"],
                                  edges_deleted=e.stats["edges_deleted"]) for e in episodes],
                 "counters": dict(self.counters)}
        return PlanResult(episodes, builder.build(), stats, state, list(self._dots))

    def _emit(self, builder: _Builder, pieces):
        for p in pieces:
            if p[0] == "motion":
                _, side, path, kind, meta = p
                builder.motion(side, path, kind, meta)
            else:
                _, kind, payload, jaws = p
                builder.event(kind, payload, jaws)

    def _stow(self, builder, state: WorldState) -> WorldState:
        """Put the tool back where it started; best effort."""
        side = state.held.tool_holder
        if side is None:
            return state
        target = compose(self.scene.tool_pose, state.held.tool_rel.inverse())
        arm = self.model.arm(side)
        sols = solve_ik_many(arm, [target], self.rng, 16, [state.configs[side]])[0]
        for q in sols:
            try:
                path = self._motion(state, side, q, "tool")
            except (NoPath, InvalidQuery):
                continue
            builder.motion(side, path, "transfer", {"episode": -1, "phase": 0})
            st = state.copy()
            st.configs[side] = q
            tool_w = self.tool_pose(st)
            st.jaws[side] = self.open_jaw
            st.held = HeldState(tool_pose=tool_w)
            builder.event("release", {"arm": side, "episode": -1}, st.jaws)
            return st
        return state


def plan_task(model, tool, db, scene, seed: int = 0, params: PlannerParams = PlannerParams(),
              dump_graph: bool = False) -> PlanResult:
    return TaskPlanner(model, tool, db, scene, params, seed, dump_graph).plan()
