"""Per-pixel label provenance for the training split, plus budget accounting."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import IGNORE_INDEX, ConfigError

UNLABELED, GT, QUERIED, PSEUDO = 0, 1, 2, 3
PROVENANCE_NAMES = {UNLABELED: "unlabeled", GT: "gt", QUERIED: "queried", PSEUDO: "pseudo"}


class PoolError(RuntimeError):
    """Illegal pool mutation (e.g. revealing a tile of an initially labeled image)."""


@dataclass
class BudgetLedger:
    human: int
    pseudo: int
    total: int
    pseudo_correct: int | None = None

    @property
    def human_fraction(self) -> float:
        return self.human / self.total

    @property
    def pseudo_fraction(self) -> float:
        return self.pseudo / self.total

    @property
    def pseudo_precision(self) -> float:
        if self.pseudo_correct is None or self.pseudo == 0:
            return math.nan
        return self.pseudo_correct / self.pseudo


class LabelPool:
    """Provenance and effective labels for every training image.

    `ids` are dataset image ids; row i of the arrays belongs to ids[i].
    """

    def __init__(self, ids, labeled_ids, provenance: np.ndarray, labels: np.ndarray):
        self.ids = [int(i) for i in ids]
        self.row = {img: r for r, img in enumerate(self.ids)}
        self.labeled_ids = sorted(int(i) for i in labeled_ids)
        self.provenance = provenance
        self.labels = labels

    @classmethod
    def init(cls, train_ids, gt_labels: np.ndarray, labeled_fraction: float, seed: int) -> "LabelPool":
        """Fully label round(fraction * n) images chosen by a seeded shuffle.

        gt_labels holds the oracle maps for `train_ids`, row-aligned.
        """
        n = len(train_ids)
        if not 0 < labeled_fraction <= 1:
            raise ConfigError("labeled_fraction must be in (0, 1]")
        k = int(round(labeled_fraction * n))
        if k == 0:
            raise ConfigError(f"labeled_fraction {labeled_fraction} selects no images out of {n}")
        order = np.random.default_rng(seed).permutation(n)
        rows = np.sort(order[:k])
        prov = np.full(gt_labels.shape, UNLABELED, dtype=np.uint8)
        labels = np.full(gt_labels.shape, IGNORE_INDEX, dtype=np.uint8)
        prov[rows] = GT
        labels[rows] = gt_labels[rows]
        ids = [int(i) for i in train_ids]
        return cls(ids, [ids[r] for r in rows], prov, labels)

    @property
    def unlabeled_ids(self) -> list[int]:
        lab = set(self.labeled_ids)
        return [i for i in self.ids if i not in lab]

    def copy(self) -> "LabelPool":
        return LabelPool(self.ids, self.labeled_ids, self.provenance.copy(), self.labels.copy())

    # -- mutations -----------------------------------------------------

    def assign_pseudo(self, probs: dict[int, np.ndarray], threshold: float) -> None:
        """Refresh pseudo-labels of unlabeled-pool images from (H,W,C) posteriors.

        Pixels above the threshold become PSEUDO with the argmax class; the rest
        of the UNLABELED/PSEUDO pixels revert to UNLABELED. GT/QUERIED are kept.
        """
        if not 0 < threshold < 1:
            raise ConfigError("pseudo threshold must be in (0, 1)")
        lab = set(self.labeled_ids)
        for img, p in probs.items():
            if img in lab:
                continue
            r = self.row[img]
            prov = self.provenance[r]
            open_ = (prov == UNLABELED) | (prov == PSEUDO)
            confident = p.max(axis=-1) > threshold
            arg = np.argmax(p, axis=-1).astype(np.uint8)  # first max wins ties
            take = open_ & confident
            drop = open_ & ~confident
            prov[take] = PSEUDO
            self.labels[r][take] = arg[take]
            prov[drop] = UNLABELED
            self.labels[r][drop] = IGNORE_INDEX

    def reveal_regions(self, oracle: dict[int, np.ndarray], regions, region_size: int) -> None:
        """Copy oracle labels into each (image id, tile row, tile col) and mark QUERIED."""
        lab = set(self.labeled_ids)
        R = region_size
        H, W = self.provenance.shape[1:]
        for img, tr, tc in regions:
            if img in lab:
                raise PoolError(f"image {img} belongs to the initial labeled pool")
            if img not in self.row:
                raise PoolError(f"image {img} is not in the pool")
            y, x = tr * R, tc * R
            if tr < 0 or tc < 0 or y + R > H or x + R > W:
                raise PoolError(f"tile ({tr}, {tc}) out of bounds for image {img}")
            r = self.row[img]
            self.provenance[r, y : y + R, x : x + R] = QUERIED
            self.labels[r, y : y + R, x : x + R] = oracle[img][y : y + R, x : x + R]

    # -- accounting ----------------------------------------------------

    def ledger(self, oracle: np.ndarray | None = None) -> BudgetLedger:
        """Exact recount. oracle (row-aligned GT maps) enables pseudo precision."""
        prov = self.provenance
        human = int(np.count_nonzero((prov == GT) | (prov == QUERIED)))
        pmask = prov == PSEUDO
        correct = None
        if oracle is not None:
            correct = int(np.count_nonzero(pmask & (self.labels == oracle)))
        return BudgetLedger(human, int(np.count_nonzero(pmask)), int(prov.size), correct)

    def effective_labels(self, img: int, sources=(GT, QUERIED, PSEUDO)) -> np.ndarray:
        """Label map restricted to the given provenance kinds (others -> ignore)."""
        r = self.row[img]
        keep = np.isin(self.provenance[r], sources)
        return np.where(keep, self.labels[r], IGNORE_INDEX).astype(np.uint8)

    def save_snapshot(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        (out / "provenance").mkdir(parents=True, exist_ok=True)
        (out / "labels").mkdir(parents=True, exist_ok=True)
        for r, img in enumerate(self.ids):
            Image.fromarray(self.provenance[r], mode="L").save(out / "provenance" / f"{img:04d}.png")
            Image.fromarray(self.labels[r], mode="L").save(out / "labels" / f"{img:04d}.png")


LEDGER_FIELDS = [
    "cycle", "human_pixels", "pseudo_pixels", "total_pixels",
    "human_fraction", "pseudo_fraction", "pseudo_precision",
]


def ledger_row(cycle: int, led: BudgetLedger) -> list:
    return [
        cycle, led.human, led.pseudo, led.total,
        repr(led.human_fraction), repr(led.pseudo_fraction), repr(led.pseudo_precision),
    ]


def write_ledger_csv(path: str | Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_FIELDS)
        w.writerows(rows)
