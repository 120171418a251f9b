"""Procedural multi-class segmentation scenes.

A scene is a flat background (class 0) with axis-aligned rectangles and
ellipses painted on top, one colour per class plus per-pixel Gaussian noise.
The last two classes get nearly identical colours and differ only in shape
kind, so telling them apart needs spatial context rather than colour alone.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import IGNORE_INDEX, ConfigError, DataError, DataParams

MANIFEST_NAME = "manifest.json"
MIN_CLASS_FREQ = 0.01
MAX_ATTEMPTS = 50

RECT, ELLIPSE = 0, 1


def class_palette(num_classes: int, confusable_gap: float = 0.12) -> np.ndarray:
    """Fixed (C, 3) mean colours; depends only on the class count and gap."""
    rng = np.random.default_rng(12345 + num_classes)
    cands = rng.uniform(0.1, 0.9, size=(4096, 3))
    chosen = [np.array([0.45, 0.45, 0.45])]
    n_distinct = num_classes - 1 if num_classes >= 3 else num_classes
    while len(chosen) < n_distinct:
        d = np.min(np.linalg.norm(cands[:, None, :] - np.asarray(chosen)[None], axis=-1), axis=1)
        chosen.append(cands[int(np.argmax(d))])
    pal = np.asarray(chosen)
    if num_classes >= 3:
        direction = np.array([1.0, -1.0, 0.5]) / np.linalg.norm([1.0, -1.0, 0.5])
        twin = np.clip(pal[-1] + confusable_gap * direction, 0.0, 1.0)
        pal = np.vstack([pal, twin])
    return pal


def shape_kind(cls: int, num_classes: int, rng: np.random.Generator) -> int:
    # the confusable pair is split by shape kind; other classes mix freely
    if num_classes >= 3 and cls == num_classes - 2:
        return ELLIPSE
    if num_classes >= 3 and cls == num_classes - 1:
        return RECT
    return int(rng.integers(2))


def _shape_mask(kind: int, cy: float, cx: float, hh: float, hw: float, H: int, W: int) -> np.ndarray:
    yy, xx = np.mgrid[0:H, 0:W]
    yy = yy + 0.5
    xx = xx + 0.5
    if kind == RECT:
        return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
    return ((yy - cy) / hh) ** 2 + ((xx - cx) / hw) ** 2 <= 1.0


def generate_scene(seed: int, params: DataParams) -> tuple[np.ndarray, np.ndarray]:
    """Return (image H×W×3 float64 in [0,1], labels H×W uint8).

    Deterministic in (seed, params). Shapes drawn later occlude earlier ones.
    """
    H, W, C = params.height, params.width, params.num_classes
    if H < 32 or W < 32 or not 2 <= C <= 32:
        raise ConfigError(f"invalid scene geometry H={H} W={W} C={C}")
    rng = np.random.default_rng(seed)
    palette = class_palette(C, params.confusable_gap)
    labels = np.zeros((H, W), dtype=np.uint8)

    shapes = []
    if params.shape_density > 0:
        for c in range(1, C):
            n = max(1, int(rng.poisson(params.shape_density)))
            shapes.extend((c, shape_kind(c, C, rng)) for _ in range(n))
    order = rng.permutation(len(shapes)) if shapes else []
    mean = np.empty((H, W, 3))
    mean[:] = palette[0]
    for i in order:
        c, kind = shapes[i]
        hh = 0.5 * H * rng.uniform(params.min_shape_frac, params.max_shape_frac)
        hw = 0.5 * W * rng.uniform(params.min_shape_frac, params.max_shape_frac)
        cy = rng.uniform(0, H)
        cx = rng.uniform(0, W)
        m = _shape_mask(kind, cy, cx, hh, hw, H, W)
        labels[m] = c
        mean[m] = palette[c] + rng.normal(0.0, params.instance_jitter, size=3)

    # per-channel gain: a random colour cast per image
    gain = rng.uniform(1 - params.illumination, 1 + params.illumination, size=3)
    image = gain * mean + rng.normal(0.0, params.color_noise, size=(H, W, 3))
    return np.clip(image, 0.0, 1.0), labels


def image_seed(master_seed: int, index: int, attempt: int = 0) -> int:
    """Stable 32-bit seed for one image; independent of generation order."""
    key = f"{master_seed}:{attempt}:{index}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little")


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


@dataclass
class Dataset:
    """Materialized images (uint8) and labels with the train/val split."""

    images: np.ndarray  # (N, H, W, 3) uint8
    labels: np.ndarray  # (N, H, W) uint8
    train_ids: list[int]
    val_ids: list[int]
    manifest: dict

    @property
    def num_classes(self) -> int:
        return int(self.manifest["params"]["num_classes"])

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    def float_images(self, ids) -> np.ndarray:
        return self.images[np.asarray(ids)].astype(np.float32) / 255.0

    def class_frequencies(self) -> np.ndarray:
        counts = np.bincount(self.labels.ravel(), minlength=self.num_classes)
        return counts[: self.num_classes] / self.labels.size


def _render(args):
    seed, params = args
    img, lab = generate_scene(seed, params)
    return to_uint8(img), lab


def build_dataset(master_seed: int, params: DataParams, workers: int = 1) -> Dataset:
    """Generate all images in memory, retrying until every class has >=1% of pixels."""
    n = params.n_train + params.n_val
    for attempt in range(MAX_ATTEMPTS):
        seeds = [image_seed(master_seed, i, attempt) for i in range(n)]
        jobs = [(s, params) for s in seeds]
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                out = list(ex.map(_render, jobs))
        else:
            out = [_render(j) for j in jobs]
        images = np.stack([o[0] for o in out])
        labels = np.stack([o[1] for o in out])
        freq = np.bincount(labels.ravel(), minlength=params.num_classes) / labels.size
        if params.shape_density == 0 or freq.min() >= MIN_CLASS_FREQ:
            break
    else:
        raise DataError(f"could not reach {MIN_CLASS_FREQ:.0%} coverage for every class")
    manifest = {
        "seed": int(master_seed),
        "attempt": attempt,
        "params": dataclasses.asdict(params),
        "train_ids": list(range(params.n_train)),
        "val_ids": list(range(params.n_train, n)),
        "image_seeds": seeds,
        "class_frequencies": [float(f) for f in freq],
    }
    return Dataset(images, labels, manifest["train_ids"], manifest["val_ids"], manifest)


def write_dataset(ds: Dataset, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "labels").mkdir(parents=True, exist_ok=True)
        for i in range(len(ds.images)):
            Image.fromarray(ds.images[i], mode="RGB").save(out / "images" / f"{i:04d}.png")
            Image.fromarray(ds.labels[i], mode="L").save(out / "labels" / f"{i:04d}.png")
        path = out / MANIFEST_NAME
        path.write_text(json.dumps(ds.manifest, indent=2))
    except OSError as e:
        raise DataError(f"cannot write dataset to {out}: {e}") from e
    return path


def generate_dataset(master_seed: int, params: DataParams, out_dir: str | Path, workers: int = 1) -> Path:
    """Generate and write PNGs plus manifest.json; returns the manifest path."""
    return write_dataset(build_dataset(master_seed, params, workers), out_dir)


def load_dataset(data_dir: str | Path) -> Dataset:
    root = Path(data_dir)
    mpath = root / MANIFEST_NAME
    if not mpath.is_file():
        raise DataError(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(mpath.read_text())
        n = len(manifest["train_ids"]) + len(manifest["val_ids"])
        images = np.stack([np.asarray(Image.open(root / "images" / f"{i:04d}.png").convert("RGB")) for i in range(n)])
        labels = np.stack([np.asarray(Image.open(root / "labels" / f"{i:04d}.png")) for i in range(n)])
    except (OSError, KeyError, ValueError) as e:
        raise DataError(f"cannot read dataset in {root}: {e}") from e
    C = manifest["params"]["num_classes"]
    bad = (labels >= C) & (labels != IGNORE_INDEX)
    if bad.any():
        raise DataError(f"label values out of range in {root}")
    return Dataset(images, labels, list(manifest["train_ids"]), list(manifest["val_ids"]), manifest)


def regenerate(manifest: dict) -> Dataset:
    """Rebuild a dataset from its manifest alone."""
    params = DataParams(**manifest["params"])
    n = params.n_train + params.n_val
    out = [_render((s, params)) for s in manifest["image_seeds"][:n]]
    images = np.stack([o[0] for o in out])
    labels = np.stack([o[1] for o in out])
    return Dataset(images, labels, list(manifest["train_ids"]), list(manifest["val_ids"]), dict(manifest))
