"""Weak (geometric) and strong (photometric + CutOut) augmentations.

Images are H×W×3 float arrays in [0,1], labels H×W uint8 with IGNORE_INDEX
marking pixels that carry no supervision.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .config import IGNORE_INDEX

SCALE_RANGE = (0.75, 1.25)
FLIP_P = 0.5
BLUR_P = 0.5
BLUR_SIGMA = (0.1, 1.5)
JITTER = 0.3


def hflip(image: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return image[:, ::-1].copy(), labels[:, ::-1].copy()


def resize_crop(image, labels, scale: float, rng: np.random.Generator):
    """Rescale by `scale`, then crop or pad (image 0, labels ignore) back to H×W."""
    H, W = labels.shape
    nh, nw = max(1, int(round(H * scale))), max(1, int(round(W * scale)))
    if (nh, nw) == (H, W):
        return image, labels
    zy, zx = nh / H, nw / W
    img = ndimage.zoom(image, (zy, zx, 1), order=1, mode="nearest", grid_mode=True)
    lab = ndimage.zoom(labels, (zy, zx), order=0, mode="nearest", grid_mode=True)
    nh, nw = lab.shape
    out_img = np.zeros_like(image)
    out_lab = np.full_like(labels, IGNORE_INDEX)
    # offsets: crop window into the big image, or placement of the small one
    oy = int(rng.integers(0, abs(nh - H) + 1))
    ox = int(rng.integers(0, abs(nw - W) + 1))
    sy, dy = (oy, 0) if nh >= H else (0, oy)
    sx, dx = (ox, 0) if nw >= W else (0, ox)
    h, w = min(H, nh), min(W, nw)
    out_img[dy : dy + h, dx : dx + w] = img[sy : sy + h, sx : sx + w]
    out_lab[dy : dy + h, dx : dx + w] = lab[sy : sy + h, sx : sx + w]
    return np.clip(out_img, 0.0, 1.0), out_lab


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.gaussian_filter(image, sigma=(sigma, sigma, 0), mode="reflect")


def color_jitter(image: np.ndarray, rng: np.random.Generator, strength: float = JITTER) -> np.ndarray:
    b, c, s = rng.uniform(1 - strength, 1 + strength, size=3)
    out = image * b
    mean = out.mean()
    out = (out - mean) * c + mean
    gray = out.mean(axis=-1, keepdims=True)
    out = (out - gray) * s + gray
    return np.clip(out, 0.0, 1.0)


def cutout(image, labels, rng: np.random.Generator, side: int | None = None):
    """Zero one square of the image and mark it ignore in the labels."""
    H, W = labels.shape
    side = side or max(1, min(H, W) // 4)
    y = int(rng.integers(0, H - side + 1))
    x = int(rng.integers(0, W - side + 1))
    image = image.copy()
    labels = labels.copy()
    image[y : y + side, x : x + side] = 0.0
    labels[y : y + side, x : x + side] = IGNORE_INDEX
    return image, labels


def augment(image, labels, mode: str, rng: np.random.Generator, scale_range=SCALE_RANGE):
    if mode not in ("weak", "strong"):
        raise ValueError(f"unknown augmentation mode {mode!r}")
    scale = float(rng.uniform(*scale_range))
    image, labels = resize_crop(image, labels, scale, rng)
    if rng.random() < FLIP_P:
        image, labels = hflip(image, labels)
    if mode == "weak":
        return image, labels
    if rng.random() < BLUR_P:
        image = gaussian_blur(image, float(rng.uniform(*BLUR_SIGMA)))
    image = color_jitter(image, rng)
    return cutout(image, labels, rng)
