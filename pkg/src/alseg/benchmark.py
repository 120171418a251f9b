"""Multi-seed ablation benchmark on the default synthetic dataset.

Arms (all share dataset, initial split and model init per seed):

    supervised   CE only, initial 10% labeled images
    st_ce        self-training (pseudo-labels, no queries), CE only
    st_reco      self-training, CE + ReCo
    al_reco      self-training + region queries, CE + ReCo
    sup_matched  CE only, fully labeled images matching al_reco's final human fraction
    reference    CE only, 100% labeled

The plain supervised arms run the one-phase schedule of ``mode="supervised"``.
Each also has a ``*_long`` twin that trains for the total iteration count of
the three-phase arms with the labeled and unlabeled batch slots merged, which
separates the effect of the method from the effect of training longer.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import statistics
import time
from pathlib import Path

from .config import ExperimentConfig, OptimConfig, RecoConfig
from .orchestrator import num_phases, phase_iterations, run
from .synthdata import build_dataset

log = logging.getLogger(__name__)

ARMS = ("supervised", "st_ce", "st_reco", "al_reco", "sup_matched", "reference")
LONG_ARMS = ("supervised_long", "sup_matched_long", "reference_long")
# what the acceptance run and the benchmark script train by default
DEFAULT_ARMS = ARMS + ("reference_long",)


def base_config(seed: int = 0, **overrides) -> ExperimentConfig:
    """Desk-scale benchmark schedule: 3 phases of 10/10/15 epochs x 20 iterations."""
    cfg = ExperimentConfig(
        name="bench",
        seed=seed,
        optim=OptimConfig(lr=0.05),
        epochs_per_cycle=10,
        iters_per_epoch=20,
        final_epoch_multiplier=1.5,
        batch_labeled=2,
        batch_unlabeled=4,
        al_cycles=2,
        ssl_retrain_count=2,
        save_pool_snapshots=False,
    )
    return dataclasses.replace(cfg, **overrides)


def total_iterations(cfg: ExperimentConfig) -> int:
    return sum(phase_iterations(cfg, k) for k in range(num_phases(cfg)))


def arm_config(arm: str, base: ExperimentConfig, matched_fraction: float | None = None) -> ExperimentConfig:
    name = f"{arm}_s{base.seed}"
    reco_on = base.reco
    reco_off = dataclasses.replace(base.reco, weight=0.0)
    if arm == "st_ce":
        return base.replace(name=name, mode="ssl", reco=reco_off)
    if arm == "st_reco":
        return base.replace(name=name, mode="ssl", reco=reco_on)
    if arm == "al_reco":
        return base.replace(name=name, mode="active", reco=reco_on)
    sup, long = arm.removesuffix("_long"), arm.endswith("_long")
    if sup not in ("supervised", "sup_matched", "reference"):
        raise ValueError(f"unknown arm {arm!r}")
    fraction = {"supervised": base.labeled_fraction, "reference": 1.0}.get(sup, matched_fraction)
    if fraction is None:
        raise ValueError(f"{arm} needs matched_fraction")
    cfg = base.replace(name=name, mode="supervised", reco=reco_off, labeled_fraction=fraction)
    if not long:
        return cfg
    iters = total_iterations(base.replace(mode="active"))
    return cfg.replace(
        epochs_per_cycle=iters,
        iters_per_epoch=1,
        final_epoch_multiplier=1.0,
        batch_labeled=base.batch_labeled + base.batch_unlabeled,
    )


def run_benchmark(seeds=(0, 1, 2), arms=ARMS, out_dir: str | Path = "runs/benchmark", **overrides) -> dict:
    """Run every arm for every seed; returns {arm: {seed: {"miou", "human_fraction", "seconds"}}}."""
    out_dir = Path(out_dir)
    results: dict = {a: {} for a in arms}
    for seed in seeds:
        base = base_config(seed, **overrides)
        ds = build_dataset(seed, base.data)
        final_fraction = None
        for arm in arms:
            if arm.startswith("sup_matched"):
                if final_fraction is None:
                    final_fraction = _final_fraction(base)
                cfg = arm_config(arm, base, final_fraction)
            else:
                cfg = arm_config(arm, base)
            t0 = time.perf_counter()
            reports = run(cfg, out_dir, ds)
            last = reports[-1]
            if arm == "al_reco":
                final_fraction = last.human_fraction
            results[arm][seed] = {
                "miou": last.miou,
                "human_fraction": last.human_fraction,
                "seconds": time.perf_counter() - t0,
                "curve": [(r.human_fraction, r.miou) for r in reports],
            }
            log.info("seed %d %-16s mIoU %.4f human %.4f (%.0fs)", seed, arm, last.miou, last.human_fraction, results[arm][seed]["seconds"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "benchmark.json").write_text(json.dumps(results, indent=2))
    return results


def _final_fraction(base: ExperimentConfig) -> float:
    # exact when no queried tile overlaps earlier labels, which holds for per-image top-k
    H, W, R = base.data.height, base.data.width, base.region_size
    n = base.data.n_train
    k = int(round(base.labeled_fraction * n))
    per_cycle = (n - k) * base.budget_per_image * R * R / (n * H * W)
    return k / n + base.al_cycles * per_cycle


def medians(results: dict) -> dict:
    return {arm: statistics.median(v["miou"] for v in per_seed.values()) for arm, per_seed in results.items() if per_seed}


def format_table(results: dict) -> str:
    meds = medians(results)
    lines = [f"{'arm':<17} {'median mIoU':>11}  per-seed"]
    for arm, per_seed in results.items():
        if not per_seed:
            continue
        vals = " ".join(f"{v['miou']:.4f}" for v in per_seed.values())
        lines.append(f"{arm:<17} {meds[arm]:>11.4f}  {vals}")
    return "\n".join(lines)
