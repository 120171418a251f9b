#!/usr/bin/env python3
"""Supervised mIoU as a function of the labeled-image fraction.

Useful for placing an active-learning curve against plain supervision:

    python scripts/label_curve.py --fractions 0.1,0.2,0.5,1.0 --seed 0
"""
import argparse
import logging

from alseg.benchmark import arm_config, base_config
from alseg.orchestrator import run
from alseg.synthdata import build_dataset


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--fractions", default="0.1,0.2,0.35,0.5,1.0")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/label_curve")
    p.add_argument("--long", action="store_true", help="use the compute-matched schedule")
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)

    base = base_config(args.seed)
    ds = build_dataset(args.seed, base.data)
    arm = "sup_matched_long" if args.long else "sup_matched"
    print("fraction  mIoU")
    for f in (float(x) for x in args.fractions.split(",")):
        cfg = arm_config(arm, base, f).replace(name=f"{arm}_f{f:g}_s{args.seed}")
        print(f"{f:8.3f}  {run(cfg, args.out, ds)[-1].miou:.4f}", flush=True)


if __name__ == "__main__":
    main()
