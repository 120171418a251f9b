"""Small encoder-decoder with a class head and a contrastive embedding head."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ConfigError, ModelConfig, NumericalError


def _block(cin: int, cout: int) -> nn.Sequential:
    # smooth activations and strided convs keep the loss differentiable
    # everywhere, which finite-difference checks rely on
    groups = 4 if cout % 4 == 0 else 1
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.GroupNorm(groups, cout),
        nn.SiLU(),
        nn.Conv2d(cout, cout, 3, stride=2, padding=1),
        nn.GroupNorm(groups, cout),
        nn.SiLU(),
    )


class SegNet(nn.Module):
    def __init__(self, num_classes: int, cfg: ModelConfig, in_channels: int = 3):
        super().__init__()
        c1, c2, c3 = cfg.channels
        self.num_classes = num_classes
        self.embed_dim = cfg.embed_dim
        self.dropout = cfg.dropout
        self.enc1 = _block(in_channels, c1)
        self.enc2 = _block(c1, c2)
        self.enc3 = _block(c2, c3)
        # decoder fuses upsampled deep features with the stride-2 skip
        self.fuse = nn.Sequential(
            nn.Conv2d(c3 + c1, cfg.decoder_channels, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(cfg.decoder_channels, cfg.decoder_channels, 3, padding=1),
            nn.SiLU(),
        )
        self.cls_head = nn.Conv2d(cfg.decoder_channels, num_classes, 1)
        self.emb_head = nn.Conv2d(cfg.decoder_channels, cfg.embed_dim, 1)

    def _drop(self, x: torch.Tensor, noise: bool, generator: torch.Generator | None) -> torch.Tensor:
        if not noise or self.dropout == 0:
            return x
        keep = 1.0 - self.dropout
        mask = torch.bernoulli(torch.full_like(x, keep), generator=generator)
        return x * mask / keep

    def forward(self, x: torch.Tensor, noise: bool = False, generator: torch.Generator | None = None):
        """x: (N,3,H,W). Returns logits (N,C,H,W) and unit-norm embeddings (N,D,H,W)."""
        size = x.shape[-2:]
        f1 = self.enc1(x)
        f3 = self.enc3(self.enc2(f1))
        f3 = self._drop(f3, noise, generator)
        up = F.interpolate(f3, size=f1.shape[-2:], mode="bilinear", align_corners=False)
        h = self.fuse(torch.cat([up, f1], dim=1))
        h = self._drop(h, noise, generator)
        h = F.interpolate(h, size=size, mode="bilinear", align_corners=False)
        logits = self.cls_head(h)
        emb = F.normalize(self.emb_head(h), dim=1, eps=1e-12)
        return logits, emb


def init_model(seed: int, num_classes: int, cfg: ModelConfig, dtype: torch.dtype = torch.float32) -> SegNet:
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    if cfg.embed_dim < 2:
        raise ConfigError("embed_dim must be >= 2")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = SegNet(num_classes, cfg)
        # start near the uniform posterior so initial CE sits at ln C
        nn.init.normal_(model.cls_head.weight, std=1e-3)
        nn.init.zeros_(model.cls_head.bias)
    return model.to(dtype)


def forward(model: SegNet, images: torch.Tensor, noise: bool = False, generator: torch.Generator | None = None):
    """Checked forward pass; raises NumericalError on non-finite outputs."""
    if images.dim() == 3:
        images = images.unsqueeze(0)
    if noise:
        model.train()
    else:
        model.eval()
    logits, emb = model(images, noise=noise, generator=generator)
    if not torch.isfinite(logits).all() or not torch.isfinite(emb).all():
        bad = int((~torch.isfinite(logits)).sum())
        raise NumericalError(f"non-finite activations in forward pass ({bad} bad logits)")
    return logits, emb


def softmax_probs(logits):
    """Stable softmax over the class axis (dim 1 for tensors, last axis for arrays)."""
    if isinstance(logits, torch.Tensor):
        return torch.softmax(logits, dim=1)
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def images_to_tensor(images: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(N,H,W,3) float or uint8 -> (N,3,H,W) tensor in [0,1]."""
    arr = np.asarray(images)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


@torch.no_grad()
def predict_probs(model: SegNet, images: np.ndarray, batch: int = 16) -> np.ndarray:
    """Noise-free posterior for (N,H,W,3) images; returns (N,H,W,C) float64."""
    out = []
    for i in range(0, len(images), batch):
        x = images_to_tensor(images[i : i + batch], next(model.parameters()).dtype)
        logits, _ = forward(model, x, noise=False)
        out.append(torch.softmax(logits.double(), dim=1).permute(0, 2, 3, 1).numpy())
    return np.concatenate(out, axis=0)


def save_checkpoint(model: SegNet, path: str | Path, config: dict | None = None) -> None:
    """Write an .npz of named float arrays plus a JSON config echo under '__config__'."""
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {"num_classes": model.num_classes, "config": config or {}}
    arrays["__config__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path, cfg: ModelConfig) -> tuple[SegNet, dict]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__config__"]).decode())
        model = SegNet(meta["num_classes"], cfg)
        state = {k: torch.from_numpy(z[k]) for k in z.files if k != "__config__"}
    model.load_state_dict(state)
    return model, meta
