"""Receptive-field blocks and the partial decoder over the two deepest levels."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class BasicConv(nn.Module):
    def __init__(self, cin, cout, kernel, padding=0, dilation=1):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, kernel, padding=padding, dilation=dilation, bias=False)
        self.bn = nn.BatchNorm2d(cout)

    def forward(self, x):
        return self.bn(self.conv(x))


def _branch(cin, cout, k):
    p = k // 2
    return nn.Sequential(
        BasicConv(cin, cout, 1),
        BasicConv(cout, cout, (1, k), padding=(0, p)),
        BasicConv(cout, cout, (k, 1), padding=(p, 0)),
        BasicConv(cout, cout, 3, padding=k, dilation=k),
    )


class RFB(nn.Module):
    """Four parallel branches of growing receptive field plus a shortcut."""

    def __init__(self, cin: int, cout: int = 32):
        super().__init__()
        self.branches = nn.ModuleList([BasicConv(cin, cout, 1), _branch(cin, cout, 3), _branch(cin, cout, 5), _branch(cin, cout, 7)])
        self.fuse = BasicConv(4 * cout, cout, 3, padding=1)
        self.shortcut = BasicConv(cin, cout, 1)

    def forward(self, x):
        cat = torch.cat([b(x) for b in self.branches], dim=1)
        return F.relu(self.fuse(cat) + self.shortcut(x))


def upsample_to(x: torch.Tensor, size) -> torch.Tensor:
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False)


class PartialDecoder(nn.Module):
    """Aggregate the RFB-transformed level-4 and level-5 features.

    The upsampled deep map gates the level-4 map multiplicatively; the product
    is concatenated with both inputs and reduced to one logit channel at the
    level-4 stride.
    """

    def __init__(self, channels: int = 32):
        super().__init__()
        c = channels
        self.up_gate = BasicConv(c, c, 3, padding=1)
        self.up_cat = BasicConv(c, c, 3, padding=1)
        self.conv1 = BasicConv(3 * c, 2 * c, 3, padding=1)
        self.conv2 = BasicConv(2 * c, 2 * c, 3, padding=1)
        self.out = nn.Conv2d(2 * c, 1, 1)

    def forward(self, r4: torch.Tensor, r5: torch.Tensor) -> torch.Tensor:
        h4, w4 = r4.shape[-2:]
        h5, w5 = r5.shape[-2:]
        if (2 * h5, 2 * w5) != (h4, w4):
            raise ValueError(f"level-5 map {(h5, w5)} must be half the level-4 map {(h4, w4)}")
        up5 = F.interpolate(r5, scale_factor=2, mode="bilinear", align_corners=False)
        gated = self.up_gate(up5) * r4
        x = torch.cat([gated, r4, self.up_cat(up5)], dim=1)
        x = F.relu(self.conv1(x))
        x = F.relu(self.conv2(x))
        return self.out(x)
