"""Write the shipped tool and scene files into the package data directory."""
from __future__ import annotations

import argparse
import math
from pathlib import Path

from suction_tamp.geom import Body, Box, Cylinder, RigidTransform
from suction_tamp.graspdb import SHIPPED_TOOLS, save_tool
from suction_tamp.scene import DATA_DIR, Scene, save_scene, scene_from_dict, scene_to_dict

TABLE = Body(Box((0.35, 0.5, 0.025)), RigidTransform.translation(0.5, 0.0, -0.025), "table")
GOAL_XY = (0.40, 0.22)
TOOL_POSE = RigidTransform.rot_z(math.pi / 2, (0.20, -0.20, 0.0))


def _at(x, y, z, yaw=0.0):
    return RigidTransform.rot_z(yaw, (x, y, z))


def stacked(name, shape, half_height, starts, tool):
    objects, goals = [], {}
    for k, (oname, (x, y, yaw)) in enumerate(starts.items()):
        objects.append(Body(shape, _at(x, y, half_height, yaw), oname))
        goals[oname] = _at(GOAL_XY[0], GOAL_XY[1], half_height * (2 * k + 1))
    return Scene(name, TABLE, objects, goals, tool, TOOL_POSE)


def scenes() -> list:
    return [
        stacked("three_blocks", Box((0.06, 0.05, 0.02)), 0.02,
                {"block_a": (0.30, 0.02, 0.3), "block_b": (0.42, -0.15, -0.5), "block_c": (0.36, -0.34, 0.2)},
                "symmetric_large"),
        stacked("two_cans", Cylinder(0.033, 0.12), 0.06,
                {"can_a": (0.32, 0.0, 0.0), "can_b": (0.45, -0.2, 0.0)},
                "symmetric_small"),
        stacked("three_boxes", Box((0.11, 0.055, 0.045)), 0.045,
                {"box_a": (0.33, 0.06, 0.0), "box_b": (0.47, -0.12, 0.3), "box_c": (0.36, -0.36, -0.2)},
                "symmetric_large"),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DATA_DIR)
    args = ap.parse_args(argv)
    (args.out / "tools").mkdir(parents=True, exist_ok=True)
    (args.out / "scenes").mkdir(parents=True, exist_ok=True)
    for name, make in SHIPPED_TOOLS.items():
        save_tool(make(), args.out / "tools" / f"{name}.json")
    for sc in scenes():
        scene_from_dict(scene_to_dict(sc))  # validates
        save_scene(sc, args.out / "scenes" / f"{sc.name}.json")
        print("wrote", sc.name)


if __name__ == "__main__":
    main()
