"""Entropy scoring over a tile grid and per-image region selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labelpool import GT, QUERIED


@dataclass
class RegionGrid:
    region_size: int
    scores: np.ndarray  # (rows, cols); -inf where ineligible
    eligible: np.ndarray  # (rows, cols) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape


def pixel_entropy(probs: np.ndarray) -> np.ndarray:
    """Natural-log Shannon entropy over the last axis, with 0 ln 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -(p * logp).sum(axis=-1)


def _tiles(a: np.ndarray, R: int) -> np.ndarray:
    H, W = a.shape
    if H % R or W % R:
        raise ValueError(f"map {H}x{W} is not divisible by region size {R}")
    return a.reshape(H // R, R, W // R, R).swapaxes(1, 2)


def score_regions(entropy: np.ndarray, provenance: np.ndarray, region_size: int) -> RegionGrid:
    """Mean entropy per tile over all its pixels; tiles with nothing left to label get -inf."""
    ent = _tiles(entropy, region_size).mean(axis=(2, 3))
    prov = _tiles(provenance, region_size)
    open_ = (prov != GT) & (prov != QUERIED)
    eligible = open_.any(axis=(2, 3))
    return RegionGrid(region_size, np.where(eligible, ent, -np.inf), eligible)


def select_tiles(grid: RegionGrid, budget: int) -> list[tuple[int, int]]:
    """Top-`budget` eligible tiles by score, ties by row-major index."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    flat = grid.scores.ravel()
    idx = np.flatnonzero(grid.eligible.ravel())
    # lexsort: last key is primary
    order = idx[np.lexsort((idx, -flat[idx]))][:budget]
    cols = grid.shape[1]
    return [(int(i // cols), int(i % cols)) for i in order]


def select_regions(grids: dict[int, RegionGrid], budget: int) -> list[tuple[int, int, int, float]]:
    """Per-image selection over the unlabeled pool: (image id, tile row, tile col, score)."""
    out = []
    for img in sorted(grids):
        g = grids[img]
        out.extend((img, r, c, float(g.scores[r, c])) for r, c in select_tiles(g, budget))
    return out
