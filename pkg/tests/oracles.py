"""Independent reference implementations used by the tests.

Plain Python loops and floats only; nothing here imports the code under test.
"""
from __future__ import annotations

import math

import numpy as np

IGNORE = 255


def reco_nested_loop(emb, labels, tau, reduction="mean", query_mask=None):
    """Literal double sum over classes and their queries.

    emb: (P, D) array of unit vectors; labels: (P,) ints, IGNORE = unsupervised.
    Queries of class c are all class-c pixels (optionally restricted by
    query_mask), negatives are all valid pixels of other classes, the positive
    anchor is the renormalized mean of all class-c embeddings.
    """
    emb = [list(map(float, e)) for e in np.asarray(emb)]
    labels = [int(v) for v in labels]
    classes = sorted({v for v in labels if v != IGNORE})
    if len(classes) < 2:
        return 0.0

    def dot(a, b):
        return sum(x * y for x, y in zip(a, b))

    total, count = 0.0, 0
    for c in classes:
        members = [i for i, v in enumerate(labels) if v == c]
        mean = [sum(emb[i][d] for i in members) / len(members) for d in range(len(emb[0]))]
        norm = math.sqrt(dot(mean, mean))
        anchor = [m / norm for m in mean]
        negatives = [i for i, v in enumerate(labels) if v != IGNORE and v != c]
        for q in members:
            if query_mask is not None and not query_mask[q]:
                continue
            pos = math.exp(dot(emb[q], anchor) / tau)
            neg = sum(math.exp(dot(emb[q], emb[k]) / tau) for k in negatives)
            total += -math.log(pos / (pos + neg))
            count += 1
    if reduction == "sum":
        return total
    return total / count


def masked_ce_loop(logits, labels):
    """logits: (N,C,H,W), labels (N,H,W). Mean -log softmax over valid pixels."""
    logits = np.asarray(logits, dtype=np.float64)
    N, C, H, W = logits.shape
    total, n = 0.0, 0
    for b in range(N):
        for y in range(H):
            for x in range(W):
                lab = int(labels[b, y, x])
                if lab == IGNORE:
                    continue
                z = [float(logits[b, c, y, x]) for c in range(C)]
                m = max(z)
                lse = m + math.log(sum(math.exp(v - m) for v in z))
                total += lse - z[lab]
                n += 1
    return total / n if n else 0.0


def iou_by_sets(pred, gt, num_classes):
    """Per-class IoU via explicit pixel-coordinate sets; NaN when both sets are empty."""
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    out = []
    for c in range(num_classes):
        P = {i for i in range(len(pred)) if gt[i] != IGNORE and pred[i] == c}
        G = {i for i in range(len(gt)) if gt[i] == c}
        U = P | G
        out.append(len(P & G) / len(U) if U else float("nan"))
    present = [v for v in out if not math.isnan(v)]
    return out, (sum(present) / len(present) if present else float("nan"))


def select_by_full_sort(scores, eligible, budget):
    """Sort every eligible tile by (-score, row-major index) and take the head."""
    rows, cols = len(scores), len(scores[0])
    cands = [(-scores[r][c], r * cols + c) for r in range(rows) for c in range(cols) if eligible[r][c]]
    cands.sort()
    return [(i // cols, i % cols) for _, i in cands[:budget]]


def central_difference(f, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Gradient of scalar f at x by central differences, coordinate by coordinate."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f(x)
        flat[i] = old - eps
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g
