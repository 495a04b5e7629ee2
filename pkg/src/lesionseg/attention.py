"""Boundary attention and reverse attention.

The boundary mask is built from exact Euclidean distance transforms of the
binarized coarse prediction and is treated as data (no gradient). The reverse
attention mask is one minus the sigmoid of the upsampled coarser prediction,
also detached, so gradients reach the network only through feature paths and
through the guidance channel fed to the output head.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from numpy.lib.stride_tricks import sliding_window_view
from torch import nn

from .backbone import conv_bn_relu


def binarize_map(u) -> np.ndarray:
    """1 where sigmoid(u) > 0.5, i.e. where the logit is strictly positive."""
    if isinstance(u, torch.Tensor):
        u = u.detach().cpu().numpy()
    return (np.asarray(u) > 0).astype(np.uint8)


def _column_distance(fg: np.ndarray) -> np.ndarray:
    h = fg.shape[0]
    g = np.where(fg, np.inf, 0.0)
    for y in range(1, h):
        g[y] = np.minimum(g[y], g[y - 1] + 1)
    for y in range(h - 2, -1, -1):
        g[y] = np.minimum(g[y], g[y + 1] + 1)
    return g


def distance_transform(mask: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Exact Euclidean distance from each foreground pixel to the nearest zero.

    Background pixels get 0. The image is surrounded by an implicit ring of
    background so an all-ones mask still has finite distances. Separable
    scheme: per-column distance first, then an exact minimum over every
    column of each row.
    """
    fg = np.pad(np.asarray(mask).astype(bool), 1, constant_values=False)
    g2 = _column_distance(fg) ** 2
    w = fg.shape[1]
    xs = np.arange(w, dtype=np.float64)
    dx2 = (xs[:, None] - xs[None, :]) ** 2  # [x, x']
    d2 = np.empty_like(g2)
    for start in range(0, fg.shape[0], chunk):
        rows = g2[start : start + chunk]
        d2[start : start + chunk] = np.min(rows[:, None, :] + dx2[None], axis=2)
    return np.sqrt(d2)[1:-1, 1:-1]


def _normalized(d: np.ndarray) -> np.ndarray:
    m = d.max()
    if m == 0:
        return np.zeros_like(d)
    return d / m


def boundary_mask(seg: np.ndarray) -> np.ndarray:
    """1 minus the sum of the inside and outside distance maps, each max-normalized.

    Largest next to the foreground/background transition, smallest at the
    points farthest from it. Symmetric under ``seg -> 1 - seg``.
    """
    seg = np.asarray(seg).astype(bool)
    d = _normalized(distance_transform(seg)) + _normalized(distance_transform(~seg))
    return 1.0 - d


def boundary_target(gt: np.ndarray) -> np.ndarray:
    """Morphological gradient (3x3 dilation minus 3x3 erosion), zero outside the image."""
    g = np.pad(np.asarray(gt).astype(np.uint8), 1, constant_values=0)
    win = sliding_window_view(g, (3, 3))
    return (win.max(axis=(-2, -1)) - win.min(axis=(-2, -1))).astype(np.uint8)


def ra_mask(guide: torch.Tensor, channels: int, size=None) -> torch.Tensor:
    """Reverse-attention mask: 1 - sigmoid(upsampled guide), repeated over channels."""
    g = guide.detach()
    if size is not None:
        g = resize_map(g, size)
    return (1.0 - torch.sigmoid(g)).expand(-1, channels, -1, -1)


def resize_map(x: torch.Tensor, size) -> torch.Tensor:
    """Resize by an integer factor in either direction; anything else is a wiring error."""
    h, w = x.shape[-2:]
    th, tw = (int(s) for s in size)
    if (h, w) == (th, tw):
        return x
    if th % h == 0 and tw % w == 0 and th // h == tw // w:
        return F.interpolate(x, size=(th, tw), mode="bilinear", align_corners=False)
    if h % th == 0 and w % tw == 0 and h // th == w // tw:
        return F.avg_pool2d(x, h // th)
    raise ValueError(f"cannot resize map of size {(h, w)} to {(th, tw)}")


def boundary_mask_batch(coarse: torch.Tensor) -> torch.Tensor:
    seg = binarize_map(coarse[:, 0])
    masks = np.stack([boundary_mask(s) for s in seg])[:, None]
    return torch.from_numpy(masks).to(dtype=coarse.dtype, device=coarse.device)


class BoundaryAttention(nn.Module):
    """Gate a shallow feature map by the boundary mask of the coarse prediction."""

    def __init__(self, channels: int):
        super().__init__()
        self.head = nn.Conv2d(channels, 1, 1)

    def forward(self, feat: torch.Tensor, coarse: torch.Tensor):
        if coarse.shape[-2:] != feat.shape[-2:] or coarse.shape[0] != feat.shape[0]:
            raise ValueError(f"coarse map {tuple(coarse.shape)} does not match features {tuple(feat.shape)}")
        mask = boundary_mask_batch(coarse)
        out = feat * mask
        return out, self.head(out)


class ReverseAttention(nn.Module):
    """Refine a coarser prediction using features the coarse map did not explain.

    ``t = Con([feat, D(boundary)])`` with two 3x3 conv layers of ``width``
    channels; ``t`` is gated by the reverse mask and a 3x3 head over
    ``[gated, guide]`` produces the level's logits.
    """

    def __init__(self, feat_channels: int, boundary_channels: int = 0, width: int = 64):
        super().__init__()
        self.width = width
        self.con = nn.Sequential(
            conv_bn_relu(feat_channels + boundary_channels, width),
            conv_bn_relu(width, width),
        )
        self.head = nn.Conv2d(width + 1, 1, 3, padding=1)
        self.uses_boundary = boundary_channels > 0

    def forward(self, feat: torch.Tensor, guide: torch.Tensor, boundary: torch.Tensor | None = None) -> torch.Tensor:
        size = feat.shape[-2:]
        parts = [feat]
        if self.uses_boundary:
            if boundary is None:
                raise ValueError("this branch was built with a boundary input")
            parts.append(resize_map(boundary, size))
        t = self.con(torch.cat(parts, dim=1))
        g = resize_map(guide, size)
        gated = ra_mask(g, self.width) * t
        return self.head(torch.cat([gated, g], dim=1))
