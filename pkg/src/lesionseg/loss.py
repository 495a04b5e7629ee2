"""Deep-supervision objective: weighted BCE + weighted IoU on segmentation
outputs, plain BCE on boundary predictions.

All functions take logits shaped ``N x 1 x H x W`` and targets of the same
shape (or broadcastable ``H x W`` for single images).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class LossWeights:
    delta: float = 0.9
    lambda_w: float = 5.0
    pool_k: int = 31
    eps: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        if self.lambda_w < 0:
            raise ValueError("lambda_w must be non-negative")
        if self.pool_k < 1 or self.pool_k % 2 == 0:
            raise ValueError(f"pool_k must be a positive odd integer, got {self.pool_k}")


def _as4d(x: torch.Tensor) -> torch.Tensor:
    while x.dim() < 4:
        x = x.unsqueeze(0)
    return x


def pixel_weights(gt: torch.Tensor, lambda_w: float = 5.0, pool_k: int = 31) -> torch.Tensor:
    """1 + lambda_w * |local mean of gt - gt|, heavier near the lesion boundary.

    The local mean uses replicate padding so a constant mask weighs 1 everywhere.
    """
    g = _as4d(gt if gt.is_floating_point() else gt.float())
    p = pool_k // 2
    padded = F.pad(g, (p, p, p, p), mode="replicate")
    local = F.avg_pool2d(padded, pool_k, stride=1)
    return (1.0 + lambda_w * (local - g).abs()).reshape(gt.shape)


def weighted_bce(logits: torch.Tensor, gt: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    p, g, w = _as4d(logits), _as4d(gt).to(logits.dtype), _as4d(weights).to(logits.dtype)
    bce = F.binary_cross_entropy_with_logits(p, g, reduction="none")
    per_image = (w * bce).sum(dim=(1, 2, 3)) / w.sum(dim=(1, 2, 3))
    return per_image.mean()


def weighted_iou(logits: torch.Tensor, gt: torch.Tensor, weights: torch.Tensor, eps: float = 1.0) -> torch.Tensor:
    p, g, w = torch.sigmoid(_as4d(logits)), _as4d(gt).to(logits.dtype), _as4d(weights).to(logits.dtype)
    inter = (w * p * g).sum(dim=(1, 2, 3))
    union = (w * (p + g - p * g)).sum(dim=(1, 2, 3))
    return (1.0 - (inter + eps) / (union + eps)).mean()


def hybrid_loss(logits: torch.Tensor, gt: torch.Tensor, lw: LossWeights = LossWeights(), weights=None) -> torch.Tensor:
    if weights is None:
        weights = pixel_weights(gt, lw.lambda_w, lw.pool_k)
    bce = weighted_bce(logits, gt, weights)
    if lw.delta == 1.0:
        return bce
    return lw.delta * bce + (1.0 - lw.delta) * weighted_iou(logits, gt, weights, lw.eps)


def downsample_target(target: torch.Tensor, size) -> torch.Tensor:
    """Max-pool a binary target down to ``size`` so thin edges survive."""
    t = _as4d(target)
    if tuple(t.shape[-2:]) == tuple(size):
        return t
    return F.adaptive_max_pool2d(t, tuple(size))


def boundary_bce(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    p = _as4d(logits)
    t = downsample_target(_as4d(target).to(p.dtype), p.shape[-2:])
    return F.binary_cross_entropy_with_logits(p, t, reduction="mean")


DEFAULT_TERMS = ("O_S", "O_5", "O_4", "B_pred_2", "B_pred_3")


def total_loss(
    outputs: Mapping[str, torch.Tensor],
    gt: torch.Tensor,
    boundary_gt: torch.Tensor,
    lw: LossWeights = LossWeights(),
    expected=DEFAULT_TERMS,
    term_weights: Mapping[str, float] | None = None,
) -> torch.Tensor:
    """Sum of hybrid losses on every segmentation output (``O_*``), upsampled to
    the ground-truth size, plus boundary BCE on every ``B_pred_*`` output."""
    missing = [k for k in expected if k not in outputs]
    if missing:
        raise ValueError(f"missing outputs for loss terms: {missing}")
    terms = loss_terms(outputs, gt, boundary_gt, lw)
    tw = term_weights or {}
    total = None
    for name, value in terms.items():
        part = tw.get(name, 1.0) * value
        total = part if total is None else total + part
    return total


def loss_terms(outputs, gt, boundary_gt, lw: LossWeights = LossWeights()) -> dict[str, torch.Tensor]:
    g = _as4d(gt)
    size = g.shape[-2:]
    weights = None
    terms = {}
    for name in sorted(outputs):
        value = outputs[name]
        if name.startswith("O_"):
            g_typed = g.to(value.dtype)
            if weights is None:
                weights = pixel_weights(g_typed, lw.lambda_w, lw.pool_k)
            up = F.interpolate(value, size=size, mode="bilinear", align_corners=False) if value.shape[-2:] != size else value
            terms[name] = hybrid_loss(up, g_typed, lw, weights)
        elif name.startswith("B_pred_"):
            terms[name] = boundary_bce(value, boundary_gt)
    if not terms:
        raise ValueError("no supervised outputs given")
    return terms
