"""Masked cross-entropy and the regional contrastive (ReCo) loss.

Embeddings arrive as (N,D,H,W) unit vectors, labels as (N,H,W) integers with
IGNORE_INDEX for unsupervised pixels. Sampling is split from evaluation:
`plan_reco_sample` draws pixel indices with an explicit numpy Generator, and
`gather_reco_sample` turns a plan into live tensors. This lets a fixed plan be
re-evaluated under perturbed weights (finite-difference checks) and keeps the
loss itself a pure function.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .config import IGNORE_INDEX, RecoConfig


class EmptyMaskWarning(UserWarning):
    pass


def masked_cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean CE over pixels whose label is not IGNORE_INDEX; 0 (with a warning) if none."""
    labels = labels.long()
    n_valid = int((labels != IGNORE_INDEX).sum())
    if n_valid == 0:
        warnings.warn("masked_cross_entropy: no valid pixels, loss defined as 0", EmptyMaskWarning)
        return logits.sum() * 0.0
    total = F.cross_entropy(logits, labels, ignore_index=IGNORE_INDEX, reduction="sum")
    return total / n_valid


@dataclass
class RecoSample:
    """Index plan plus materialized vectors for one mini-batch.

    All indices point into the flattened (N*H*W) pixel axis. `queries`,
    `anchors` and `negatives` are empty until `gather_reco_sample` fills them.
    """

    classes: list[int] = field(default_factory=list)
    support_idx: list[np.ndarray] = field(default_factory=list)
    query_idx: list[np.ndarray] = field(default_factory=list)
    negative_idx: list[np.ndarray] = field(default_factory=list)
    negative_class_probs: list[np.ndarray] = field(default_factory=list)
    queries: list[torch.Tensor] = field(default_factory=list)
    anchors: torch.Tensor | None = None
    negatives: list[torch.Tensor] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return len(self.classes) < 2


def flatten_embeddings(emb: torch.Tensor) -> torch.Tensor:
    return emb.permute(0, 2, 3, 1).reshape(-1, emb.shape[1])


def class_anchors(emb_flat: torch.Tensor, support_idx: list[np.ndarray]) -> torch.Tensor:
    """Per-class mean embedding, renormalized to unit length; (n_classes, D)."""
    means = torch.stack([emb_flat[torch.as_tensor(idx)].mean(dim=0) for idx in support_idx])
    return F.normalize(means, dim=1, eps=1e-12)


def negative_class_distribution(anchors: torch.Tensor) -> np.ndarray:
    """Row c: softmax over anchor_c . anchor_c' for c' != c (zero on the diagonal)."""
    sims = (anchors.detach() @ anchors.detach().T).double().numpy()
    n = sims.shape[0]
    out = np.zeros_like(sims)
    for c in range(n):
        others = [k for k in range(n) if k != c]
        z = sims[c, others]
        e = np.exp(z - z.max())
        out[c, others] = e / e.sum()
    return out


def plan_reco_sample(
    emb: torch.Tensor,
    labels,
    probs,
    cfg: RecoConfig,
    rng: np.random.Generator,
    exhaustive: bool = False,
) -> RecoSample:
    """Choose queries, anchors' support and negative keys.

    probs is the (N,C,H,W) posterior used for the hardness filter: class-c
    queries are drawn from class-c pixels whose predicted probability for c is
    at most delta_s. With `exhaustive=True`, every filtered candidate becomes
    a query and every valid pixel of another class becomes a negative.
    """
    lab = labels.detach().cpu().numpy() if isinstance(labels, torch.Tensor) else np.asarray(labels)
    lab = lab.reshape(-1).astype(np.int64)
    valid = lab != IGNORE_INDEX
    classes = [int(c) for c in np.unique(lab[valid])]
    if len(classes) < 2:
        return RecoSample()

    p = probs.detach().cpu().numpy() if isinstance(probs, torch.Tensor) else np.asarray(probs)
    C = p.shape[1]
    p = np.moveaxis(p, 1, -1).reshape(-1, C)

    support = [np.flatnonzero(lab == c) for c in classes]
    emb_flat = flatten_embeddings(emb)
    with torch.no_grad():
        anchors = class_anchors(emb_flat, support)
    neg_probs = negative_class_distribution(anchors)

    query_idx, negative_idx, neg_dists = [], [], []
    for i, c in enumerate(classes):
        cand = support[i][p[support[i], c] <= cfg.delta_s]
        if cand.size == 0:
            cand = support[i]
        if exhaustive or cand.size <= cfg.num_queries:
            q = cand.copy()
            if not exhaustive:
                q = rng.permutation(q)
        else:
            q = rng.choice(cand, size=cfg.num_queries, replace=False)
        query_idx.append(np.asarray(q, dtype=np.int64))

        dist = neg_probs[i]
        neg_dists.append(dist)
        if exhaustive:
            negs = np.concatenate([support[j] for j in range(len(classes)) if j != i])
        else:
            drawn = rng.choice(len(classes), size=cfg.num_negatives, p=dist)
            negs = np.array(
                [support[j][rng.integers(support[j].size)] for j in drawn], dtype=np.int64
            )
        negative_idx.append(negs)
    return RecoSample(classes, support, query_idx, negative_idx, neg_dists)


def gather_reco_sample(emb: torch.Tensor, plan: RecoSample) -> RecoSample:
    """Materialize a plan against (possibly new) embeddings; gradients flow through."""
    if plan.empty:
        return plan
    emb_flat = flatten_embeddings(emb)
    return RecoSample(
        classes=plan.classes,
        support_idx=plan.support_idx,
        query_idx=plan.query_idx,
        negative_idx=plan.negative_idx,
        negative_class_probs=plan.negative_class_probs,
        queries=[emb_flat[torch.as_tensor(q)] for q in plan.query_idx],
        anchors=class_anchors(emb_flat, plan.support_idx),
        negatives=[emb_flat[torch.as_tensor(n)] for n in plan.negative_idx],
    )


def build_reco_sample(emb, labels, probs, cfg: RecoConfig, rng: np.random.Generator, exhaustive: bool = False) -> RecoSample:
    return gather_reco_sample(emb, plan_reco_sample(emb, labels, probs, cfg, rng, exhaustive))


def reco_loss(sample: RecoSample, cfg: RecoConfig, reduction: str = "mean") -> torch.Tensor:
    """-log softmax of the positive-anchor logit against the negative keys,
    per (class, query); averaged over all pairs, or summed with reduction="sum"."""
    if sample.empty or sample.anchors is None:
        return torch.zeros(())
    terms = []
    for i, q in enumerate(sample.queries):
        pos = (q @ sample.anchors[i]).unsqueeze(1)
        neg = q @ sample.negatives[i].T
        logits = torch.cat([pos, neg], dim=1) / cfg.temperature
        terms.append(-torch.log_softmax(logits, dim=1)[:, 0])
    terms = torch.cat(terms)
    if reduction == "sum":
        return terms.sum()
    if reduction != "mean":
        raise ValueError(f"unknown reduction {reduction!r}")
    return terms.mean()


def loss_terms(logits, emb, labels, probs, cfg: RecoConfig, rng: np.random.Generator, plan: RecoSample | None = None):
    """(CE, ReCo) for one batch. The ReCo term is skipped (0, no RNG draws) when weight is 0."""
    ce = masked_cross_entropy(logits, labels)
    if cfg.weight == 0:
        return ce, torch.zeros((), dtype=ce.dtype)
    if plan is None:
        plan = plan_reco_sample(emb, labels, probs, cfg, rng)
    if plan.empty:
        return ce, torch.zeros((), dtype=ce.dtype)
    return ce, reco_loss(gather_reco_sample(emb, plan), cfg)


def total_loss(logits, emb, labels, probs, cfg: RecoConfig, rng: np.random.Generator, plan: RecoSample | None = None) -> torch.Tensor:
    ce, reco = loss_terms(logits, emb, labels, probs, cfg, rng, plan)
    return ce + cfg.weight * reco
