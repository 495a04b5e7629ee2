"""Full network: backbone, partial decoder, boundary and reverse attention.

Each backbone level 1..5 is assigned ``"-"`` (unused), ``"BA"`` or ``"RA"``.
The default assignment puts boundary attention on levels 2 and 3 and reverse
attention on levels 4 and 5. Reverse-attention branches run from the deepest
level upward; the deepest one is guided by the coarse map ``O_S`` and each
following one by the previous branch's output. The final probability map is
the sigmoid of the shallowest reverse-attention output (``O_4`` by default),
upsampled to the input size.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import cv2
import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .attention import BoundaryAttention, ReverseAttention, resize_map
from .backbone import BackboneConfig, Res2NetBackbone, init_weights
from .decoder import RFB, PartialDecoder
from .imgproc import HairRemovalConfig, normalize, preprocess
from .loss import LossWeights, total_loss

PROPOSED_LEVELS = ("-", "BA", "BA", "RA", "RA")
CHECKPOINT_FORMAT = "lesionseg-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    levels: tuple[str, str, str, str, str] = PROPOSED_LEVELS
    ppd: bool = True
    # which boundary-attention output feeds the reverse-attention branches
    ba_source: str = "level3"
    rfb_channels: int = 32
    ra_width: int = 64

    def __post_init__(self):
        if len(self.levels) != 5 or any(a not in ("-", "BA", "RA") for a in self.levels):
            raise ValueError(f"levels must be five of '-', 'BA', 'RA', got {self.levels}")
        if self.ba_source not in ("level2", "level3", "sum"):
            raise ValueError(f"unknown ba_source {self.ba_source!r}")

    @property
    def ba_levels(self) -> list[int]:
        return [i + 1 for i, a in enumerate(self.levels) if a == "BA"]

    @property
    def ra_levels(self) -> list[int]:
        return [i + 1 for i, a in enumerate(self.levels) if a == "RA"]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        bb = d.pop("backbone", {})
        bb = BackboneConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in bb.items()})
        if "levels" in d:
            d["levels"] = tuple(d["levels"])
        return cls(backbone=bb, **d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class NetOutputs:
    maps: dict[str, torch.Tensor]
    final: torch.Tensor

    def __getitem__(self, key: str) -> torch.Tensor:
        if key == "final":
            return self.final
        return self.maps[key]


class LesionNet(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        ch = cfg.backbone.channels
        self.backbone = Res2NetBackbone(cfg.backbone)
        if cfg.ppd:
            self.rfb4 = RFB(ch[3], cfg.rfb_channels)
            self.rfb5 = RFB(ch[4], cfg.rfb_channels)
            self.decoder = PartialDecoder(cfg.rfb_channels)
        else:
            self.coarse_head = nn.Conv2d(ch[4], 1, 1)
        self.ba = nn.ModuleDict({str(i): BoundaryAttention(ch[i - 1]) for i in cfg.ba_levels})

        boundary_channels = 0
        if cfg.ba_levels:
            if cfg.ba_source == "sum":
                self.ba_proj = nn.ModuleDict({str(i): nn.Conv2d(ch[i - 1], cfg.rfb_channels, 1) for i in cfg.ba_levels})
                boundary_channels = cfg.rfb_channels
            else:
                boundary_channels = ch[self._ba_route_level() - 1]
        self.ra = nn.ModuleDict(
            {str(i): ReverseAttention(ch[i - 1], boundary_channels, cfg.ra_width) for i in cfg.ra_levels}
        )
        for name, m in self.named_children():
            if name != "backbone":
                init_weights(m)

    def _ba_route_level(self) -> int:
        wanted = {"level2": 2, "level3": 3}[self.cfg.ba_source]
        if wanted in self.cfg.ba_levels:
            return wanted
        return max(self.cfg.ba_levels)

    @property
    def supervised_outputs(self) -> tuple[str, ...]:
        return ("O_S", *(f"O_{i}" for i in self.cfg.ra_levels), *(f"B_pred_{i}" for i in self.cfg.ba_levels))

    def forward(self, x: torch.Tensor) -> NetOutputs:
        feats = self.backbone(x)
        if self.cfg.ppd:
            coarse = self.decoder(self.rfb4(feats.f4), self.rfb5(feats.f5))
        else:
            coarse = self.coarse_head(feats.f5)
        maps = {"O_S": coarse}

        ba_out = {}
        for i in self.cfg.ba_levels:
            f = feats.level(i)
            o_b, b_pred = self.ba[str(i)](f, resize_map(coarse, f.shape[-2:]))
            ba_out[i] = o_b
            maps[f"B_pred_{i}"] = b_pred
        boundary = self._route(ba_out) if ba_out else None

        guide = coarse
        for i in sorted(self.cfg.ra_levels, reverse=True):
            guide = self.ra[str(i)](feats.level(i), guide, boundary)
            maps[f"O_{i}"] = guide
        final = torch.sigmoid(F.interpolate(guide, size=x.shape[-2:], mode="bilinear", align_corners=False))
        return NetOutputs(maps, final)

    def _route(self, ba_out: dict[int, torch.Tensor]) -> torch.Tensor:
        if self.cfg.ba_source != "sum":
            return ba_out[self._ba_route_level()]
        deepest = max(ba_out)
        size = ba_out[deepest].shape[-2:]
        return sum(resize_map(self.ba_proj[str(i)](o), size) for i, o in ba_out.items())


def build_model(cfg: ModelConfig = ModelConfig(), seed: int = 0, dtype=torch.float32) -> LesionNet:
    torch.manual_seed(seed)
    return LesionNet(cfg).to(dtype)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 20
    clip: float = 0.5
    flips: bool = True
    seed: int = 0


def make_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr)


def train_step(
    model: LesionNet,
    optimizer: torch.optim.Optimizer,
    batch,
    lw: LossWeights = LossWeights(),
    clip: float | None = 0.5,
) -> float:
    """One gradient update on the deep-supervision loss; returns the loss value."""
    images, gt, boundary_gt = batch
    model.train()
    optimizer.zero_grad(set_to_none=True)
    out = model(images)
    loss = total_loss(out.maps, gt, boundary_gt, lw, expected=model.supervised_outputs)
    if not torch.isfinite(loss):
        terms = {k: float(v.detach().abs().max()) for k, v in out.maps.items()}
        raise FloatingPointError(f"non-finite training loss {loss.item()}; max |logit| per output: {terms}")
    loss.backward()
    if clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), clip)
    optimizer.step()
    return float(loss.detach())


def to_tensor(img_u8: np.ndarray) -> torch.Tensor:
    """uint8 HxWx3 -> normalized 1x3xHxW float tensor."""
    return torch.from_numpy(np.ascontiguousarray(normalize(img_u8).transpose(2, 0, 1)))[None]


@torch.no_grad()
def predict(
    model: LesionNet,
    img: np.ndarray,
    side: int = 256,
    hair: HairRemovalConfig | None = HairRemovalConfig(),
) -> np.ndarray:
    """Binary lesion mask at the original image size."""
    model.eval()
    prep = preprocess(img, side, hair)
    prob = model(to_tensor(prep).to(next(model.parameters()).dtype)).final[0, 0].cpu().numpy()
    mask = (prob > 0.5).astype(np.uint8)
    h, w = img.shape[:2]
    if (h, w) != mask.shape:
        mask = cv2.resize(mask, (w, h), interpolation=cv2.INTER_NEAREST)
    return mask


def save_checkpoint(path, model: LesionNet, seed: int, extra: dict | None = None) -> None:
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": model.cfg.to_dict(),
            "config_hash": model.cfg.digest(),
            "seed": seed,
            "extra": extra or {},
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path) -> tuple[LesionNet, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    cfg = ModelConfig.from_dict(blob["config"])
    if cfg.digest() != blob["config_hash"]:
        raise ValueError("checkpoint config hash mismatch")
    model = LesionNet(cfg)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, blob
