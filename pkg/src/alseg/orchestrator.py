"""Self-training + active-learning loop.

Cycle 0 trains on the initially labeled images. Every later cycle first runs
the previous cycle's model as a noise-free teacher over the unlabeled pool
(refreshing pseudo-labels and, in active mode, revealing the highest-entropy
tiles), then keeps training the same weights as a noisy student on labeled
(weak aug) plus pseudo/queried (strong aug) images.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from . import alquery
from .augment import augment
from .config import IGNORE_INDEX, DataError, ExperimentConfig, NumericalError
from .labelpool import GT, PSEUDO, QUERIED, LabelPool, ledger_row, LEDGER_FIELDS
from .losses import loss_terms
from .metrics import ConfusionMatrix
from .model import SegNet, forward, images_to_tensor, init_model, predict_probs, save_checkpoint
from .synthdata import Dataset, load_dataset

log = logging.getLogger(__name__)

# stream tags for SeedSequence-derived generators
_INIT, _POOL, _TRAIN = 1, 2, 3


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def make_torch_gen(seed: int, *keys: int) -> torch.Generator:
    s = np.random.SeedSequence([seed, *keys]).generate_state(2, dtype=np.uint32)
    return torch.Generator().manual_seed(int(s[0]) << 32 | int(s[1]))


def model_seed(seed: int) -> int:
    return int(np.random.SeedSequence([seed, _INIT]).generate_state(1)[0])


@dataclass
class CycleReport:
    cycle: int
    human_fraction: float
    pseudo_fraction: float
    pseudo_precision: float
    miou: float
    per_class_iou: list[float] = field(default_factory=list)
    seconds: float = 0.0
    iterations: int = 0
    ce: float = math.nan
    reco: float = math.nan


REPORT_FIELDS = ["cycle", "human_fraction", "pseudo_fraction", "pseudo_precision", "miou", "iterations", "ce", "reco", "seconds"]
QUERY_FIELDS = ["cycle", "image_id", "tile_row", "tile_col", "score"]
METRIC_FIELDS = ["cycle", "class_id", "iou", "miou"]


class _BatchCycler:
    """Endless shuffled passes over a fixed id list."""

    def __init__(self, ids, rng: np.random.Generator):
        self.ids = list(ids)
        self.rng = rng
        self.order: list[int] = []

    def take(self, n: int) -> list[int]:
        out = []
        while len(out) < n:
            if not self.order:
                self.order = [self.ids[i] for i in self.rng.permutation(len(self.ids))]
            out.append(self.order.pop())
        return out


def num_phases(cfg: ExperimentConfig) -> int:
    if cfg.mode == "supervised":
        return 1
    if cfg.mode == "ssl":
        return 1 + cfg.ssl_retrain_count
    return 1 + cfg.al_cycles


def phase_iterations(cfg: ExperimentConfig, cycle: int) -> int:
    epochs = cfg.epochs_per_cycle
    if cycle == num_phases(cfg) - 1:
        epochs = epochs * cfg.final_epoch_multiplier
    return max(1, int(round(epochs * cfg.iters_per_epoch)))


def _make_batch(ds: Dataset, pool: LabelPool, ids, sources, mode: str, rng: np.random.Generator):
    imgs, labs = [], []
    for img in ids:
        image = ds.images[img].astype(np.float32) / 255.0
        lab = pool.effective_labels(img, sources)
        image, lab = augment(image, lab, mode, rng)
        imgs.append(image)
        labs.append(lab)
    return np.stack(imgs), np.stack(labs)


def train_phase(model: SegNet, pool: LabelPool, ds: Dataset, cfg: ExperimentConfig, cycle: int, iterations: int | None = None) -> dict:
    """Train in place for one cycle; returns mean loss terms."""
    iterations = iterations or phase_iterations(cfg, cycle)
    if not pool.labeled_ids:
        raise DataError("no labeled images in the pool")
    dtype = next(model.parameters()).dtype
    rng_l = make_rng(cfg.seed, _TRAIN, cycle, 0)
    rng_u = make_rng(cfg.seed, _TRAIN, cycle, 1)
    rng_loss = make_rng(cfg.seed, _TRAIN, cycle, 2)
    tgen = make_torch_gen(cfg.seed, _TRAIN, cycle, 3)

    labeled = _BatchCycler(pool.labeled_ids, rng_l)
    unlabeled = None
    if cfg.batch_unlabeled > 0 and cfg.mode != "supervised":
        carrying = [
            img for img in pool.unlabeled_ids
            if np.any((pool.provenance[pool.row[img]] == PSEUDO) | (pool.provenance[pool.row[img]] == QUERIED))
        ]
        if carrying:
            unlabeled = _BatchCycler(carrying, rng_u)

    opt = torch.optim.SGD(
        model.parameters(), lr=cfg.optim.lr, momentum=cfg.optim.momentum, weight_decay=cfg.optim.weight_decay
    )
    ce_sum = reco_sum = 0.0
    for it in range(iterations):
        lr = cfg.optim.lr * (1.0 - it / iterations) ** cfg.optim.poly_power
        for group in opt.param_groups:
            group["lr"] = lr
        x, y = _make_batch(ds, pool, labeled.take(cfg.batch_labeled), (GT, QUERIED), "weak", rng_l)
        if unlabeled is not None:
            xu, yu = _make_batch(ds, pool, unlabeled.take(cfg.batch_unlabeled), (PSEUDO, QUERIED), "strong", rng_u)
            x, y = np.concatenate([x, xu]), np.concatenate([y, yu])
        xt = torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2))).to(dtype)
        yt = torch.from_numpy(y.astype(np.int64))
        logits, emb = forward(model, xt, noise=True, generator=tgen)
        probs = torch.softmax(logits.detach(), dim=1)
        ce, reco = loss_terms(logits, emb, yt, probs, cfg.reco, rng_loss)
        loss = ce + cfg.reco.weight * reco
        if not torch.isfinite(loss):
            raise NumericalError(f"loss diverged at cycle {cycle}, iteration {it}: ce={float(ce)} reco={float(reco)}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        ce_sum += float(ce.detach())
        reco_sum += float(reco.detach())
    return {"iterations": iterations, "ce": ce_sum / iterations, "reco": reco_sum / iterations}


def pseudo_and_query_phase(model: SegNet, pool: LabelPool, ds: Dataset, cfg: ExperimentConfig, query: bool = True):
    """One teacher pass over the unlabeled pool: refresh pseudo-labels, then reveal tiles.

    Returns the selected (image id, tile row, tile col, score) rows.
    """
    ids = pool.unlabeled_ids
    if not ids:
        return []
    probs = predict_probs(model, ds.images[ids], batch=cfg.eval_batch)
    pool.assign_pseudo(dict(zip(ids, probs)), cfg.pseudo_threshold)
    if not query:
        return []
    grids = {
        img: alquery.score_regions(alquery.pixel_entropy(p), pool.provenance[pool.row[img]], cfg.region_size)
        for img, p in zip(ids, probs)
    }
    selected = alquery.select_regions(grids, cfg.budget_per_image)
    oracle = {img: ds.labels[img] for img in ids}
    pool.reveal_regions(oracle, [(i, r, c) for i, r, c, _ in selected], cfg.region_size)
    return selected


def evaluate(model: SegNet, ds: Dataset, ids=None, batch: int = 16) -> ConfusionMatrix:
    ids = ds.val_ids if ids is None else ids
    cm = ConfusionMatrix(ds.num_classes)
    for i in range(0, len(ids), batch):
        chunk = ids[i : i + batch]
        pred = predict_probs(model, ds.images[chunk], batch=batch).argmax(axis=-1)
        cm.accumulate(pred, ds.labels[chunk])
    return cm


def _check_dataset(ds: Dataset, cfg: ExperimentConfig) -> None:
    p = ds.manifest.get("params", {})
    for key in ("height", "width", "num_classes"):
        if p.get(key) != getattr(cfg.data, key):
            raise DataError(f"dataset {key}={p.get(key)} does not match config {getattr(cfg.data, key)}")
    if (ds.labels[ds.train_ids] == IGNORE_INDEX).any():
        raise DataError("training labels contain ignore pixels")


class _CsvSink:
    def __init__(self, path: Path, header):
        self.fh = open(path, "w", newline="")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(header)
        self.fh.flush()

    def rows(self, rows) -> None:
        self.w.writerows(rows)
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def _atomic_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True))
    os.replace(tmp, path)


def run(cfg: ExperimentConfig, out_dir: str | Path | None = None, dataset: Dataset | None = None) -> list[CycleReport]:
    """Run one experiment; writes CSVs, checkpoints and run.json under out_dir/<name>."""
    torch.use_deterministic_algorithms(True)
    ds = dataset if dataset is not None else load_dataset(cfg.data_dir)
    _check_dataset(ds, cfg)
    run_dir = Path(out_dir if out_dir is not None else cfg.out_dir) / cfg.name
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(cfg.to_json())

    train_ids = list(ds.train_ids)
    oracle = ds.labels[train_ids]
    pool = LabelPool.init(train_ids, oracle, cfg.labeled_fraction, int(make_rng(cfg.seed, _POOL).integers(2**31)))
    model = init_model(model_seed(cfg.seed), ds.num_classes, cfg.model)
    n = num_phases(cfg)

    manifest = {
        "name": cfg.name,
        "config": cfg.to_dict(),
        "config_hash": cfg.content_hash(),
        "started": datetime.now(timezone.utc).isoformat(),
        "status": "running",
        "artifacts": {k: str(run_dir / f"{k}.csv") for k in ("reports", "queries", "ledger", "metrics")},
    }
    sinks = {
        "reports": _CsvSink(run_dir / "reports.csv", REPORT_FIELDS),
        "queries": _CsvSink(run_dir / "queries.csv", QUERY_FIELDS),
        "ledger": _CsvSink(run_dir / "ledger.csv", LEDGER_FIELDS),
        "metrics": _CsvSink(run_dir / "metrics.csv", METRIC_FIELDS),
    }
    reports: list[CycleReport] = []
    try:
        for k in range(n):
            t0 = time.perf_counter()
            cycle_dir = run_dir / f"cycle{k}"
            if k > 0:
                selected = pseudo_and_query_phase(model, pool, ds, cfg, query=cfg.mode == "active")
                sinks["queries"].rows([k, i, r, c, repr(s)] for i, r, c, s in selected)
                if cfg.reinit_each_cycle:
                    model = init_model(model_seed(cfg.seed), ds.num_classes, cfg.model)
            led = pool.ledger(oracle)
            sinks["ledger"].rows([ledger_row(k, led)])
            try:
                stats = train_phase(model, pool, ds, cfg, k)
            except NumericalError:
                save_checkpoint(model, cycle_dir / "diverged.npz", cfg.to_dict())
                raise
            per_class, miou = evaluate(model, ds, batch=cfg.eval_batch).iou()
            rep = CycleReport(
                k, led.human_fraction, led.pseudo_fraction, led.pseudo_precision, miou,
                [float(v) for v in per_class], time.perf_counter() - t0,
                stats["iterations"], stats["ce"], stats["reco"],
            )
            reports.append(rep)
            sinks["reports"].rows([[
                k, repr(rep.human_fraction), repr(rep.pseudo_fraction), repr(rep.pseudo_precision),
                repr(rep.miou), rep.iterations, repr(rep.ce), repr(rep.reco), f"{rep.seconds:.3f}",
            ]])
            sinks["metrics"].rows([k, c, repr(v), repr(miou)] for c, v in enumerate(rep.per_class_iou))
            save_checkpoint(model, cycle_dir / "model.npz", cfg.to_dict())
            if cfg.save_pool_snapshots:
                pool.save_snapshot(cycle_dir / "pool")
            log.info(
                "%s cycle %d: human %.4f pseudo %.4f (prec %.3f) mIoU %.4f [%.1fs]",
                cfg.name, k, rep.human_fraction, rep.pseudo_fraction, rep.pseudo_precision, miou, rep.seconds,
            )
        manifest["status"] = "complete"
    except BaseException as e:
        manifest["status"] = f"aborted: {type(e).__name__}: {e}"
        raise
    finally:
        for s in sinks.values():
            s.close()
        manifest["ended"] = datetime.now(timezone.utc).isoformat()
        manifest["cycles_completed"] = len(reports)
        _atomic_json(run_dir / "run.json", manifest)
    return reports


def read_reports(run_dir: str | Path) -> list[dict]:
    path = Path(run_dir) / "reports.csv"
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k in ("cycle", "iterations") else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]
