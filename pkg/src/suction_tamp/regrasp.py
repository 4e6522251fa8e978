"""Three-layer regrasp graph (initial / handover / goal) and its search.

Node ids are never reused, so edges deleted in one goal layer cannot be
mistaken for edges of a replacement layer.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .collision import ArmCloud, point_solid_distance
from .errors import EmptyLayer, NoSequence, UnknownEdge
from .geom import MARGIN, RigidTransform, compose

INITIAL, HANDOVER, GOAL = "initial", "handover", "goal"
TRANSFER, HANDOVER_EDGE, TRANSIT = "transfer", "handover", "transit"


@dataclass(frozen=True, eq=False)
class GraspNode:
    layer: str
    arm: str
    grasp_id: int
    held_pose: RigidTransform  # world pose of the tool
    config: np.ndarray
    attachment: str | None = None  # id of the object stuck to the pad, if any
    pair: int | None = None  # handover pair index for handover-layer nodes
    score: float = 0.0


def _edge(a: int, b: int) -> tuple:
    return (a, b) if a < b else (b, a)


@dataclass
class GraspSequence:
    nodes: list  # node ids
    kinds: list  # edge kind between consecutive nodes

    def __len__(self):
        return len(self.nodes)


@dataclass
class RegraspGraph:
    nodes: dict = field(default_factory=dict)  # id -> GraspNode
    edges: dict = field(default_factory=dict)  # (a, b) -> kind, live only
    deleted_edges: dict = field(default_factory=dict)
    transit: bool = False
    _next: int = 0

    def add_node(self, node: GraspNode) -> int:
        nid = self._next
        self._next += 1
        self.nodes[nid] = node
        return nid

    def layer(self, name: str) -> list:
        return [i for i, n in self.nodes.items() if n.layer == name]

    def neighbours(self, nid: int):
        return self._adj.get(nid, ())

    # adjacency is rebuilt lazily after mutations
    @property
    def _adj(self):
        if getattr(self, "_adj_cache", None) is None:
            adj = {}
            for a, b in sorted(self.edges):
                adj.setdefault(a, []).append(b)
                adj.setdefault(b, []).append(a)
            for v in adj.values():
                v.sort()
            self._adj_cache = adj
        return self._adj_cache

    def _dirty(self):
        self._adj_cache = None

    def kind(self, a: int, b: int) -> str:
        return self.edges[_edge(a, b)]

    def incident(self, nid: int) -> list:
        return [e for e in self.edges if nid in e]


def _connect(g: RegraspGraph, new_ids, among_ids) -> None:
    """Insert every admissible edge between ``new_ids`` and ``among_ids``."""
    by_key = {}
    for j in among_ids:
        n = g.nodes[j]
        by_key.setdefault((n.arm, n.grasp_id), []).append(j)
    for i in new_ids:
        a = g.nodes[i]
        for j in by_key.get((a.arm, a.grasp_id), ()):
            if j == i:
                continue
            b = g.nodes[j]
            if a.layer == b.layer and a.layer != HANDOVER:
                continue
            if a.layer == HANDOVER and b.layer == HANDOVER and a.pair == b.pair:
                continue
            # same pose is only a move when the goal already holds (identity goal)
            if a.held_pose == b.held_pose and {a.layer, b.layer} != {INITIAL, GOAL}:
                continue
            e = _edge(i, j)
            if e not in g.deleted_edges:
                g.edges[e] = TRANSFER
        if g.transit and a.layer == INITIAL:
            for j in among_ids:
                b = g.nodes[j]
                if (j != i and b.layer == INITIAL and b.arm == a.arm and b.grasp_id != a.grasp_id
                        and b.held_pose == a.held_pose):
                    e = _edge(i, j)
                    if e not in g.deleted_edges:
                        g.edges[e] = TRANSIT
    g._dirty()


def handover_nodes(pairs, attachment=None) -> list:
    out = []
    for k, p in enumerate(pairs):
        for side in (p.giver, p.receiver):
            out.append(GraspNode(HANDOVER, side.arm, side.grasp_id, p.tool_pose, side.config,
                                 attachment, k, p.score))
    return out


def build_graph(db, initial_layer: list, goal_layer: list, handover_pairs=None, attachment=None,
                transit: bool = False) -> RegraspGraph:
    """Wire initial, handover and goal layers.

    ``handover_pairs`` defaults to every pair of ``db``; callers pass a
    scene-validated subset.
    """
    if not initial_layer:
        raise EmptyLayer("initial layer is empty")
    if not goal_layer:
        raise EmptyLayer("goal layer is empty")
    pairs = db.handover_pairs if handover_pairs is None else handover_pairs
    g = RegraspGraph(transit=transit)
    init_ids = [g.add_node(n) for n in initial_layer]
    hand = handover_nodes(pairs, attachment)
    hand_ids = [g.add_node(n) for n in hand]
    for k in range(0, len(hand_ids), 2):
        g.edges[_edge(hand_ids[k], hand_ids[k + 1])] = HANDOVER_EDGE
    goal_ids = [g.add_node(n) for n in goal_layer]
    _connect(g, init_ids, init_ids + hand_ids + goal_ids)
    _connect(g, hand_ids, hand_ids + goal_ids)
    return g


def search_sequence(g: RegraspGraph) -> GraspSequence:
    """Minimum-hop initial-to-goal route over live edges.

    Among shortest routes the one with the largest summed handover score
    wins, then the lexicographically smallest node-id list.
    """
    starts = sorted(g.layer(INITIAL))
    goals = set(g.layer(GOAL))
    dist = {s: 0 for s in starts}
    order = list(starts)
    q = deque(starts)
    while q:
        u = q.popleft()
        for v in g.neighbours(u):
            if v not in dist:
                dist[v] = dist[u] + 1
                order.append(v)
                q.append(v)
    reached = [v for v in goals if v in dist]
    if not reached:
        raise NoSequence("goal layer unreachable over live edges")
    best_d = min(dist[v] for v in reached)
    targets = sorted(v for v in reached if dist[v] == best_d)

    # best (score, path) ending at each node on the shortest-path DAG
    best = {s: (0.0, (s,)) for s in starts}
    for v in order:
        if v in best and dist[v] == 0:
            continue
        cands = []
        for u in g.neighbours(v):
            if dist.get(u) == dist[v] - 1 and u in best:
                s, path = best[u]
                gain = g.nodes[v].score if g.kind(u, v) == HANDOVER_EDGE else 0.0
                cands.append((-(s + gain), path + (v,)))
        if cands:
            neg, path = min(cands)
            best[v] = (-neg, path)
    neg, path = min((-best[t][0], best[t][1]) for t in targets)
    kinds = [g.kind(a, b) for a, b in zip(path, path[1:])]
    return GraspSequence(list(path), kinds)


def delete_edge(g: RegraspGraph, e) -> RegraspGraph:
    e = _edge(*e)
    if e not in g.edges:
        raise UnknownEdge(f"edge {e} is not live")
    g.deleted_edges[e] = g.edges.pop(e)
    g._dirty()
    return g


def kill_node(g: RegraspGraph, nid: int) -> int:
    """Delete every live edge touching ``nid``; returns how many went."""
    inc = g.incident(nid)
    for e in inc:
        delete_edge(g, e)
    return len(inc)


def replace_goal_layer(g: RegraspGraph, new_goal: list) -> RegraspGraph:
    if not new_goal:
        raise EmptyLayer("new goal layer is empty")
    old = set(g.layer(GOAL))
    for e in [e for e in g.edges if e[0] in old or e[1] in old]:
        del g.edges[e]
    for e in [e for e in g.deleted_edges if e[0] in old or e[1] in old]:
        del g.deleted_edges[e]
    for i in old:
        del g.nodes[i]
    ids = [g.add_node(n) for n in new_goal]
    others = [i for i in g.nodes if i not in ids]
    _connect(g, ids, others)
    g._dirty()
    return g


def filter_handover_for_attachment(pairs, attachment: RigidTransform, obj, model=None,
                                   margin: float = MARGIN) -> list:
    """Pairs whose hands stay clear of ``obj`` stuck to the pad at ``attachment``.

    ``attachment`` is the object pose in the tool frame.  Both arms are
    tested with jaws open and closed, against the object's exact shape.
    """
    from .robot import default_robot
    if not pairs:
        return []
    model = model or default_robot()
    keep = np.ones(len(pairs), bool)
    jaws = {model.gripper_stroke, pairs[0].giver.grasp.jaw_width}
    obj_poses = [compose(p.tool_pose, attachment) for p in pairs]
    rots = np.stack([t.rotation for t in obj_poses])
    pos = np.stack([t.position for t in obj_poses])
    for role in ("giver", "receiver"):
        by_arm = {}
        for k, p in enumerate(pairs):
            by_arm.setdefault(getattr(p, role).arm, []).append(k)
        for arm, idx in by_arm.items():
            idx = np.array(idx)
            qs = np.array([getattr(pairs[k], role).config for k in idx])
            for jaw in jaws:
                cloud = ArmCloud(model, arm, jaw)
                w = cloud.world(qs)
                local = np.einsum("bsj,bjk->bsk", w - pos[idx][:, None, :], rots[idx])
                d = point_solid_distance(obj.shape, local)
                keep[idx] &= ~np.any(d < cloud.radii + margin, axis=1)
    return [p for p, k in zip(pairs, keep) if k]


def to_dot(g: RegraspGraph) -> str:
    """Graphviz dump; deleted edges dashed."""
    lines = ["graph regrasp {"]
    for i, n in sorted(g.nodes.items()):
        lines.append(f'  n{i} [label="{n.layer[0]}{i} {n.arm[0]}:g{n.grasp_id}"];')
    for (a, b), kind in sorted(g.edges.items()):
        lines.append(f'  n{a} -- n{b} [label="{kind}"];')
    for (a, b), kind in sorted(g.deleted_edges.items()):
        lines.append(f'  n{a} -- n{b} [label="{kind}", style=dashed];')
    lines.append("}")
    return "\n".join(lines) + "\n"
