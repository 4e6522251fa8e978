"""Per-object, per-phase planning times on the three-box scene.

Thin wrapper over ``suction-tamp bench``; prints the timing table and writes
the JSON report next to it.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from suction_tamp.cli import main as cli_main
from suction_tamp.scene import DATA_DIR


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("timing.json"))
    args = ap.parse_args(argv)
    return cli_main(["bench", "--suite", str(DATA_DIR / "scenes" / "three_boxes.json"), "--reps", str(args.reps),
                     "--seed", str(args.seed), "--jobs", str(args.jobs), "--out", str(args.out),
                     "--table", str(args.out.with_suffix(".txt"))])


if __name__ == "__main__":
    sys.exit(main())
