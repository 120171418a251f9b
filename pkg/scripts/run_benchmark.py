#!/usr/bin/env python3
"""Run the multi-seed ablation benchmark and print median mIoU per arm.

    python scripts/run_benchmark.py --seeds 0,1,2 --out runs/benchmark
    python scripts/run_benchmark.py --long      # add the remaining compute-matched supervised arms
"""
import argparse
import json
import logging

from alseg.benchmark import DEFAULT_ARMS, LONG_ARMS, format_table, medians, run_benchmark


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", default="runs/benchmark")
    p.add_argument("--arms", help="comma-separated subset of arms")
    p.add_argument("--long", action="store_true", help="also run the *_long supervised arms")
    args = p.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    logging.getLogger("alseg.orchestrator").setLevel(logging.WARNING)
    arms = tuple(args.arms.split(",")) if args.arms else DEFAULT_ARMS + (LONG_ARMS[:2] if args.long else ())
    seeds = [int(s) for s in args.seeds.split(",")]
    res = run_benchmark(seeds, arms=arms, out_dir=args.out)
    print(format_table(res))
    print(json.dumps(medians(res), indent=2))


if __name__ == "__main__":
    main()
