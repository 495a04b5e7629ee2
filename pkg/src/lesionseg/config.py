"""Experiment configuration and its flat ``key = value`` file format.

Example file::

    [data]
    side = 128
    folds = 5
    preprocess = yes

    [preprocess]
    threshold = 10
    kernel = 17
    radius = 1

    [model]
    backbone = toy
    levels = -, BA, BA, RA, RA
    ppd = yes
    ba_source = level3

    [loss]
    delta = 0.9
    lambda_w = 5
    pool_k = 31

    [train]
    lr = 1e-4
    batch_size = 8
    epochs = 20
    seed = 0
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

from .backbone import BackboneConfig
from .imgproc import HairRemovalConfig
from .loss import LossWeights
from .model import ModelConfig, TrainConfig


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    hair: HairRemovalConfig = field(default_factory=HairRemovalConfig)
    side: int = 256
    folds: int = 5
    preprocess: bool = True
    dataset: str = "custom"

    @property
    def hair_or_none(self) -> HairRemovalConfig | None:
        return self.hair if self.preprocess else None

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Apply flat overrides such as ``delta=0.5`` or ``epochs=3``; ``None`` values are ignored."""
        cfg = self
        for key, value in kw.items():
            if value is None:
                continue
            cfg = _set(cfg, key, value)
        return cfg

    def describe(self) -> list[str]:
        """One ``key = value`` line per setting, for report headers."""
        lines = [f"side = {self.side}", f"folds = {self.folds}", f"preprocess = {self.preprocess}"]
        for name in ("hair", "loss", "train"):
            for f in dataclasses.fields(getattr(self, name)):
                lines.append(f"{name}.{f.name} = {getattr(getattr(self, name), f.name)}")
        m = self.model
        lines += [
            f"model.backbone = {m.backbone.kind}",
            f"model.levels = {','.join(m.levels)}",
            f"model.ppd = {m.ppd}",
            f"model.decoder_inputs = level4,level5",
            f"model.ba_source = {m.ba_source}",
            "model.final_output = shallowest reverse-attention branch",
        ]
        return lines


_SECTIONS = {
    "hair": {"threshold", "kernel", "radius"},
    "loss": {"delta", "lambda_w", "pool_k", "eps"},
    "train": {"lr", "batch_size", "epochs", "clip", "flips", "seed"},
    "model": {"levels", "ppd", "ba_source", "rfb_channels", "ra_width"},
    "top": {"side", "folds", "preprocess", "dataset"},
}


def _set(cfg: ExperimentConfig, key: str, value) -> ExperimentConfig:
    if key == "backbone":
        bb = value if isinstance(value, BackboneConfig) else BackboneConfig.named(str(value))
        return replace(cfg, model=replace(cfg.model, backbone=bb))
    for section, keys in _SECTIONS.items():
        if key in keys:
            if section == "top":
                return replace(cfg, **{key: value})
            return replace(cfg, **{section: replace(getattr(cfg, section), **{key: value})})
    raise KeyError(f"unknown config key {key!r}")


def _bool(s: str) -> bool:
    return configparser.ConfigParser.BOOLEAN_STATES[s.strip().lower()]


_PARSERS = {
    "threshold": int, "kernel": int, "radius": int,
    "delta": float, "lambda_w": float, "pool_k": int, "eps": float,
    "lr": float, "batch_size": int, "epochs": int, "clip": float, "flips": _bool, "seed": int,
    "ppd": _bool, "ba_source": str, "rfb_channels": int, "ra_width": int,
    "levels": lambda s: tuple(p.strip() for p in s.split(",")),
    "side": int, "folds": int, "preprocess": _bool, "dataset": str, "backbone": str,
}


def load_config(path: str | Path | None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in _PARSERS:
                raise KeyError(f"{path}: unknown key {key!r} in [{section}]")
            cfg = _set(cfg, key, _PARSERS[key](raw))
    return cfg
