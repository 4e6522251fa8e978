"""Re-simulate a trajectory against its scene and check it independently.

The replay reconstructs, for every sample, where the tool and objects are
from the discrete events alone, then re-checks every motion between samples
for collisions, joint limits and joint speed.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .collision import ArmChecker, HeldState, body_solids, tcp_pose, tool_world_pose, torso_solids
from .geom import MARGIN, Body, compose, pose_error, pose_from_dict
from .motion import interpolate
from .robot import ARMS

GOAL_POS_TOL = 1e-3
GOAL_ROT_TOL = 1e-2
EPISODE_PATTERN = re.compile(r"^grasp( handover)* suction_on( handover)* release_place suction_off$")


@dataclass
class ReplayState:
    configs: dict
    jaws: dict
    held: HeldState
    objects: dict

    def copy(self) -> "ReplayState":
        return ReplayState({k: v.copy() for k, v in self.configs.items()}, dict(self.jaws),
                           HeldState(self.held.tool_pose, self.held.tool_holder, self.held.tool_rel,
                                     dict(self.held.attached)), dict(self.objects))


def object_poses(model, state: ReplayState) -> dict:
    """World pose of every object, attached ones following the tool."""
    out = {n: b.pose for n, b in state.objects.items()}
    if state.held.attached:
        tw = tool_world_pose(model, state.configs, state.held)
        for n, rel in state.held.attached.items():
            out[n] = compose(tw, rel)
    return out


def apply_event(model, state: ReplayState, ev, problems=None) -> None:
    """Mutate ``state`` by one discrete event."""
    p = ev.payload
    k = ev.kind
    if k == "grasp" and not p.get("chained", False):
        tw = tool_world_pose(model, state.configs, state.held)
        rel = pose_from_dict(p["tool_rel"])
        _expect(problems, compose(tcp_pose(model, p["arm"], state.configs[p["arm"]]), rel), tw, "grasp")
        state.held = HeldState(None, p["arm"], rel, dict(state.held.attached))
    elif k == "handover_exchange":
        tw = tool_world_pose(model, state.configs, state.held)
        rel = pose_from_dict(p["tool_rel"])
        _expect(problems, compose(tcp_pose(model, p["receiver"], state.configs[p["receiver"]]), rel), tw,
                "handover")
        state.held = HeldState(None, p["receiver"], rel, dict(state.held.attached))
    elif k == "suction_on":
        state.held = HeldState(state.held.tool_pose, state.held.tool_holder, state.held.tool_rel,
                               {p["object"]: pose_from_dict(p["object_rel"])})
    elif k == "place":
        name = p["object"]
        actual = object_poses(model, state)[name]
        _expect(problems, actual, pose_from_dict(p["pose"]), "place")
        state.objects[name] = Body(state.objects[name].shape, actual, name)
    elif k == "suction_off":
        name = p["object"]
        actual = object_poses(model, state)[name]
        state.objects[name] = Body(state.objects[name].shape, actual, name)
        state.held = HeldState(state.held.tool_pose, state.held.tool_holder, state.held.tool_rel, {})
    elif k == "release":
        tw = tool_world_pose(model, state.configs, state.held)
        state.held = HeldState(tool_pose=tw)


def _expect(problems, a, b, what, tol=1e-6):
    if problems is None:
        return
    dp, da = pose_error(a, b)
    if dp > tol or da > tol:
        problems.append(f"{what}: tool/object pose jumps by {dp:.2e} m, {da:.2e} rad")


def initial_state(model, scene, traj) -> ReplayState:
    configs = {"left": traj.left[0].copy(), "right": traj.right[0].copy()}
    jaws = {"left": float(traj.jaws[0, 0]), "right": float(traj.jaws[0, 1])}
    return ReplayState(configs, jaws, HeldState(tool_pose=scene.tool_pose), {o.name: o for o in scene.objects})


def states_at_samples(model, scene, traj, problems=None):
    """Yield (index, state, events applied) with every event whose index is <= ``index`` applied.

    An event with index j happens right after sample j-1, so the motion from
    sample j-1 to j sees its effect.

    The last item has index ``len(traj)`` and every event applied.
    """
    state = initial_state(model, scene, traj)
    events = sorted(traj.events, key=lambda e: e.index)
    k = 0
    for i in range(len(traj)):
        while k < len(events) and events[k].index <= i:
            apply_event(model, state, events[k], problems)
            k += 1
        state.configs = {"left": traj.left[i].copy(), "right": traj.right[i].copy()}
        state.jaws = {"left": float(traj.jaws[i, 0]), "right": float(traj.jaws[i, 1])}
        yield i, state, k
    while k < len(events):
        apply_event(model, state, events[k], problems)
        k += 1
    yield len(traj), state, k


def state_at_time(model, scene, traj, t: float) -> ReplayState:
    """World state at time ``t``, arms interpolated linearly between samples."""
    for i, st, _ in states_at_samples(model, scene, traj):
        if i == len(traj) or traj.times[i] > t:
            out = st.copy()
            if 0 < i < len(traj):
                t0, t1 = traj.times[i - 1], traj.times[i]
                s = (t - t0) / (t1 - t0)
                out.configs = {"left": (1 - s) * traj.left[i - 1] + s * traj.left[i],
                               "right": (1 - s) * traj.right[i - 1] + s * traj.right[i]}
                out.jaws = {"left": float(traj.jaws[i - 1, 0]), "right": float(traj.jaws[i - 1, 1])}
            return out
    return initial_state(model, scene, traj)


def check_event_grammar(traj) -> list:
    problems = []
    episodes = sorted({e.payload.get("episode") for e in traj.events
                       if e.payload.get("episode") is not None and e.payload.get("episode") >= 0})
    for ep in episodes:
        s = " ".join(traj.event_string(ep))
        if not EPISODE_PATTERN.match(s):
            problems.append(f"episode {ep}: event string {s!r} breaks the grammar")
    return problems


def validate_trajectory(model, tool, scene, traj, resolution: float = 0.02, check_goals: bool = True,
                        margin: float = MARGIN) -> list:
    """Problems found while replaying ``traj`` (empty when the trajectory is valid).

    ``margin`` is the collision clearance; pass 0 to test for true contact only.
    """
    problems = []
    if len(traj) == 0:
        return problems
    if np.any(np.diff(traj.times) < 0):
        problems.append("timestamps decrease")
    for side, arr in (("left", traj.left), ("right", traj.right)):
        arm = model.arm(side)
        if np.any(arr < arm.lower - 1e-9) or np.any(arr > arm.upper + 1e-9):
            problems.append(f"{side} arm leaves its joint limits")
    statics = torso_solids(model) + body_solids(scene.static_bodies())
    prev = None
    checker, checker_key = None, None
    final = None
    for i, st, k in states_at_samples(model, scene, traj, problems):
        if i == len(traj):
            final = st
            break
        if prev is not None:
            moved = [s for s in ARMS if not np.array_equal(prev.configs[s], st.configs[s])]
            if len(moved) > 1:
                problems.append(f"sample {i}: both arms move at once")
            elif moved:
                side = moved[0]
                a, b = prev.configs[side], st.configs[side]
                dt = traj.times[i] - traj.times[i - 1]
                speed = np.max(np.abs(b - a)) / dt if dt > 0 else np.inf
                if speed > traj.max_joint_speed * (1 + 1e-9):
                    problems.append(f"sample {i}: joint speed {speed:.3f} exceeds {traj.max_joint_speed}")
                # events with index i happen before the motion into sample i;
                # the world only changes at events or when the other arm moves
                key = (side, k, prev.configs[other(side)].tobytes(), prev.jaws[other(side)], prev.jaws[side])
                if key != checker_key:
                    checker = ArmChecker(model, side, prev.configs, prev.jaws, st.held, tool,
                                         list(st.objects.values()), statics, margin)
                    checker_key = key
                if not checker.valid(interpolate(a, b, resolution)).all():
                    problems.append(f"sample {i}: {side} arm collides along the motion")
        prev = st.copy()
    problems += check_event_grammar(traj)
    if check_goals:
        poses = object_poses(model, final)
        for name, goal in scene.goals.items():
            dp, da = pose_error(poses[name], goal)
            if dp > GOAL_POS_TOL or da > GOAL_ROT_TOL:
                problems.append(f"object {name} ends {dp:.2e} m / {da:.2e} rad from its goal")
    return problems


def other(side: str) -> str:
    return "right" if side == "left" else "left"
