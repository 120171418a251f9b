"""Command line: `alseg generate | run | report`.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .config import ConfigError, DataError, ExperimentConfig, NumericalError
from .metrics import efficiency_summary

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


def _load_config(path: str) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return ExperimentConfig.load(p)


def _parse_seeds(text: str | None) -> list[int] | None:
    if not text:
        return None
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"bad --seeds value {text!r}") from e


def cmd_generate(args) -> int:
    from .synthdata import generate_dataset

    cfg = _load_config(args.config)
    out = args.out or cfg.data_dir
    path = generate_dataset(cfg.seed, cfg.data, out, workers=args.workers)
    print(path)
    return EXIT_OK


def cmd_run(args) -> int:
    from .orchestrator import run

    cfg = _load_config(args.config)
    if args.data:
        cfg = cfg.replace(data_dir=args.data)
    seeds = _parse_seeds(args.seeds)
    out = args.out or cfg.out_dir
    jobs = [cfg] if seeds is None else [cfg.replace(seed=s, name=f"{cfg.name}_s{s}") for s in seeds]
    for job in jobs:
        reports = run(job, out)
        last = reports[-1]
        print(f"{job.name}: {len(reports)} cycles, final human fraction {last.human_fraction:.4f}, mIoU {last.miou:.4f}")
        print(Path(out) / job.name)
    return EXIT_OK


def cmd_report(args) -> int:
    from .orchestrator import read_reports

    runs = {}
    for d in args.runs:
        path = Path(d)
        if not (path / "reports.csv").is_file():
            raise DataError(f"no reports.csv in {path}")
        runs[path.name] = read_reports(path)
    if not runs or not any(runs.values()):
        raise DataError("no completed cycles in the given runs")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "cycle", "human_fraction", "miou"])
        for name, rows in runs.items():
            for r in rows:
                w.writerow([name, r["cycle"], repr(r["human_fraction"]), repr(r["miou"])])

    _plot(runs, out / "comparison.png")

    if args.reference:
        ref = Path(args.reference)
        ref_rows = runs.get(ref.name) or read_reports(ref)
        ref_miou = ref_rows[-1]["miou"]
        with open(out / "efficiency.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", "reference_miou", "fraction_for_95pct"])
            for name, rows in runs.items():
                frac = efficiency_summary([(r["human_fraction"], r["miou"]) for r in rows], ref_miou)
                shown = "not reached" if frac is None else repr(frac)
                w.writerow([name, repr(ref_miou), shown])
                print(f"{name}: 95% of reference mIoU {ref_miou:.4f} at labeled fraction {shown}")
    print(out / "comparison.csv")
    return EXIT_OK


def _plot(runs: dict, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, rows in runs.items():
        ax.plot([100 * r["human_fraction"] for r in rows], [100 * r["miou"] for r in rows], marker="o", label=name)
    ax.set_xlabel("human-labeled pixels (%)")
    ax.set_ylabel("val mIoU (%)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alseg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", help="dataset directory (default: config data_dir)")
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="runs root (default: config out_dir)")
    r.add_argument("--data", help="override data_dir")
    r.add_argument("--seeds", help="comma-separated seeds; one run per seed")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="compare finished runs")
    rep.add_argument("runs", nargs="+")
    rep.add_argument("--out", default="report")
    rep.add_argument("--reference", help="run directory used as the 100%%-label reference")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except KeyboardInterrupt:
        print("interrupted; partial reports were flushed", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
