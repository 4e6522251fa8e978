"""Regenerate the shipped grasp databases (one per shipped tool)."""
from __future__ import annotations

import argparse
import logging
import time
from pathlib import Path

from suction_tamp.graspdb import DATA_DIR, SHIPPED_TOOLS, generate_database, save_database
from suction_tamp.robot import default_robot


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DATA_DIR / "db")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--region-samples", type=int, default=64)
    ap.add_argument("tools", nargs="*", default=list(SHIPPED_TOOLS))
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args.out.mkdir(parents=True, exist_ok=True)
    model = default_robot()
    for name in args.tools:
        t0 = time.perf_counter()
        db = generate_database(model, SHIPPED_TOOLS[name](), args.seed, region_samples=args.region_samples)
        save_database(db, args.out / f"{name}.json")
        logging.info("%s: %d grasps, %d handover pairs, %.1f s", name, len(db.grasps),
                     len(db.handover_pairs), time.perf_counter() - t0)


if __name__ == "__main__":
    main()
