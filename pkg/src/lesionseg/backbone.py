"""Res2Net-style feature extractor producing a five-level pyramid."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import nn


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "res2net_toy"
    channels: tuple[int, int, int, int, int] = (16, 32, 64, 128, 256)
    scale: int = 4
    blocks: tuple[int, int, int, int] = (2, 2, 2, 2)
    # bottleneck width as a fraction of each stage's output channels
    width_ratio: float = 0.5

    def __post_init__(self):
        if self.kind not in ("res2net_toy", "res2net_full"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if len(self.channels) != 5 or any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise ValueError(f"channels must be 5 strictly increasing widths, got {self.channels}")
        if self.scale < 2:
            raise ValueError("Res2Net scale must be >= 2")
        if len(self.blocks) != 4 or min(self.blocks) < 1:
            raise ValueError("blocks must give >= 1 block for each of stages 2..5")

    @classmethod
    def toy(cls) -> "BackboneConfig":
        return cls()

    @classmethod
    def full(cls) -> "BackboneConfig":
        # 50-layer profile: 3-4-6-3 bottlenecks, base width 26, scale 4.
        return cls(
            kind="res2net_full",
            channels=(64, 256, 512, 1024, 2048),
            scale=4,
            blocks=(3, 4, 6, 3),
            width_ratio=104 / 256,
        )

    @classmethod
    def named(cls, name: str) -> "BackboneConfig":
        if name in ("toy", "res2net_toy"):
            return cls.toy()
        if name in ("full", "res2net_full"):
            return cls.full()
        raise ValueError(f"unknown backbone {name!r}")


class FeaturePyramid(NamedTuple):
    f1: torch.Tensor
    f2: torch.Tensor
    f3: torch.Tensor
    f4: torch.Tensor
    f5: torch.Tensor

    def level(self, i: int) -> torch.Tensor:
        return self[i - 1]


def conv_bn_relu(cin: int, cout: int, k: int = 3, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class Res2NetBlock(nn.Module):
    """Bottleneck with hierarchical split-transform-merge.

    The 1x1-reduced input is split into ``scale`` groups x_1..x_s. Group one
    passes through, group two gets its own 3x3 transform, and every later
    group i is transformed together with the previous group's output:
    y_i = K_i(x_i + y_{i-1}).
    """

    def __init__(self, cin: int, cout: int, scale: int, width_ratio: float):
        super().__init__()
        group = max(1, round(cout * width_ratio / scale))
        width = group * scale
        self.scale = scale
        self.group = group
        self.reduce = conv_bn_relu(cin, width, k=1)
        self.transforms = nn.ModuleList(conv_bn_relu(group, group) for _ in range(scale - 1))
        self.expand = nn.Sequential(nn.Conv2d(width, cout, 1, bias=False), nn.BatchNorm2d(cout))
        self.shortcut = (
            nn.Identity()
            if cin == cout
            else nn.Sequential(nn.Conv2d(cin, cout, 1, bias=False), nn.BatchNorm2d(cout))
        )
        self.relu = nn.ReLU(inplace=True)

    def split_transform(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Per-group outputs y_1..y_s before concatenation."""
        xs = torch.split(x, self.group, dim=1)
        ys = [xs[0]]
        prev = None
        for i, conv in enumerate(self.transforms, start=1):
            inp = xs[i] if prev is None else xs[i] + prev
            prev = conv(inp)
            ys.append(prev)
        return ys

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = torch.cat(self.split_transform(self.reduce(x)), dim=1)
        out = self.expand(out)
        return self.relu(out + self.shortcut(x))


class Res2NetBackbone(nn.Module):
    def __init__(self, cfg: BackboneConfig = BackboneConfig()):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.stem = conv_bn_relu(3, c[0], k=3, stride=2)
        stages = []
        for s in range(4):
            cin, cout = c[s], c[s + 1]
            # stage 2 downsamples by max-pool, stages 3..5 by a strided conv
            down = nn.MaxPool2d(3, stride=2, padding=1) if s == 0 else conv_bn_relu(cin, cin, stride=2)
            blocks = [Res2NetBlock(cin if b == 0 else cout, cout, cfg.scale, cfg.width_ratio) for b in range(cfg.blocks[s])]
            stages.append(nn.Sequential(down, *blocks))
        self.stages = nn.ModuleList(stages)
        init_weights(self)

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        if x.shape[-1] % 32 or x.shape[-2] % 32:
            raise ValueError(f"input spatial size {tuple(x.shape[-2:])} is not divisible by 32")
        feats = [self.stem(x)]
        for stage in self.stages:
            feats.append(stage(feats[-1]))
        return FeaturePyramid(*feats)


def init_weights(module: nn.Module) -> None:
    """Kaiming fan-in normal for convs, unit/zero batch-norm affine."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def extract_features(x: torch.Tensor, cfg: BackboneConfig = BackboneConfig(), seed: int = 0) -> FeaturePyramid:
    """One-shot pyramid from a freshly seeded backbone (mostly for inspection)."""
    torch.manual_seed(seed)
    net = Res2NetBackbone(cfg).to(x.dtype)
    net.eval()
    with torch.no_grad():
        return net(x)
