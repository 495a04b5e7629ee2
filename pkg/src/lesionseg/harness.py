"""Cross-validated training/evaluation, ablations and the delta sweep."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np
import torch

from .attention import boundary_target
from .config import ExperimentConfig
from .data import Sample, make_folds
from .imgproc import normalize, preprocess
from .metrics import (
    COLUMNS,
    METRICS,
    TABLE1_HEADER,
    MetricsReport,
    fmt,
    fold_table,
    summary_cells,
    to_csv,
    to_markdown,
)
from .model import PROPOSED_LEVELS, LesionNet, ModelConfig, build_model, make_optimizer, train_step

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    ids: list[str]
    images: torch.Tensor  # N x 3 x S x S, normalized
    masks: torch.Tensor  # N x 1 x S x S
    boundaries: torch.Tensor  # N x 1 x S x S


def prepare(samples: list[Sample], cfg: ExperimentConfig) -> Prepared:
    imgs, masks, bnds = [], [], []
    for s in samples:
        img = preprocess(s.image, cfg.side, cfg.hair_or_none)
        m = s.mask
        if m.shape != (cfg.side, cfg.side):
            m = cv2.resize(m, (cfg.side, cfg.side), interpolation=cv2.INTER_NEAREST)
        imgs.append(normalize(img).transpose(2, 0, 1))
        masks.append(m[None].astype(np.float32))
        bnds.append(boundary_target(m)[None].astype(np.float32))
    return Prepared(
        [s.id for s in samples],
        torch.from_numpy(np.stack(imgs)),
        torch.from_numpy(np.stack(masks)),
        torch.from_numpy(np.stack(bnds)),
    )


def _flip(batch, rng):
    images, masks, bnds = (t.clone() for t in batch)
    for j in range(images.shape[0]):
        dims = [d for d, f in zip((-1, -2), rng.random(2) < 0.5) if f]
        if dims:
            images[j], masks[j], bnds[j] = (t[j].flip(dims) for t in (images, masks, bnds))
    return images, masks, bnds


def train_model(data: Prepared, cfg: ExperimentConfig, seed: int | None = None) -> tuple[LesionNet, list[float]]:
    seed = cfg.train.seed if seed is None else seed
    model = build_model(cfg.model, seed)
    opt = make_optimizer(model, cfg.train)
    rng = np.random.default_rng(seed)
    n = len(data.ids)
    bs = cfg.train.batch_size
    losses = []
    for _ in range(cfg.train.epochs):
        order = rng.permutation(n)
        # a trailing batch of one would break batch-norm on 1x1 maps
        starts = [s for s in range(0, n, bs) if n - s > 1 or s == 0]
        for s in starts:
            idx = torch.from_numpy(order[s : s + bs])
            batch = (data.images[idx], data.masks[idx], data.boundaries[idx])
            if cfg.train.flips:
                batch = _flip(batch, rng)
            losses.append(train_step(model, opt, batch, cfg.loss, cfg.train.clip))
    return model, losses


@torch.no_grad()
def evaluate(model: LesionNet, data: Prepared, samples: list[Sample], fold: str = "") -> MetricsReport:
    """Score binarized predictions at each sample's original resolution."""
    model.eval()
    report = MetricsReport(fold=fold)
    for j in range(0, len(samples), 16):
        probs = model(data.images[j : j + 16]).final[:, 0].numpy()
        for s, p in zip(samples[j : j + 16], probs):
            pred = (p > 0.5).astype(np.uint8)
            h, w = s.mask.shape
            if pred.shape != (h, w):
                pred = cv2.resize(pred, (w, h), interpolation=cv2.INTER_NEAREST)
            report.add(s.id, pred, s.mask)
    return report


@dataclass
class CVResult:
    folds: list[MetricsReport]
    losses: list[list[float]]

    @property
    def mean(self) -> dict[str, float]:
        return {k: float(np.mean([r.mean[k] for r in self.folds])) for k in METRICS}

    def table(self, dataset: str) -> list[list[str]]:
        return fold_table(dataset, self.folds)


def run_cv(samples: list[Sample], cfg: ExperimentConfig) -> CVResult:
    torch.use_deterministic_algorithms(True, warn_only=True)
    by_id = {s.id: s for s in samples}
    split = make_folds([s.id for s in samples], cfg.folds, cfg.train.seed)
    prepared = prepare(samples, cfg)
    pos = {sid: i for i, sid in enumerate(prepared.ids)}
    reports, losses = [], []
    for k in range(split.k):
        train_ids, test_ids = split.train_test(k)
        tr = _subset(prepared, [pos[i] for i in train_ids])
        te = _subset(prepared, [pos[i] for i in test_ids])
        try:
            model, fold_losses = train_model(tr, cfg)
        except FloatingPointError:
            log.exception("fold %d aborted: non-finite training loss", k + 1)
            raise
        report = evaluate(model, te, [by_id[i] for i in test_ids], fold=str(k + 1))
        log.info("fold %d: mDSC %.4f", k + 1, report.mean["dsc"])
        reports.append(report)
        losses.append(fold_losses)
    return CVResult(reports, losses)


def _subset(p: Prepared, idx: list[int]) -> Prepared:
    t = torch.as_tensor(idx, dtype=torch.long)
    return Prepared([p.ids[i] for i in idx], p.images[t], p.masks[t], p.boundaries[t])


# ------------------------------------------------------------------- tables --

TABLE2_HEADER = ["Dataset", "Preprocessing", "mDSC", "mIoU", "mSen", "mSpe"]


def preprocessing_table(dataset: str, without: CVResult, with_: CVResult) -> list[list[str]]:
    rows = []
    for label, res in (("NO", without), ("YES", with_)):
        m = res.mean
        rows.append([dataset, label, *(fmt(m[k]) for k in ("dsc", "iou", "sen", "spe"))])
    return rows


# Orientation study: module per backbone level, decoder always on.
TABLE3_ROWS = [
    ("1", ("BA", "BA", "BA", "RA", "RA")),
    ("2", ("BA", "BA", "RA", "RA", "RA")),
    ("3", ("-", "BA", "RA", "RA", "RA")),
    ("4", ("BA", "RA", "BA", "RA", "RA")),
    ("5", ("-", "BA", "RA", "BA", "RA")),
    ("Proposed", PROPOSED_LEVELS),
]

# Component study: (name, levels, decoder on).
TABLE4_ROWS = [
    ("Res2Net", ("-", "-", "-", "-", "-"), False),
    ("Res2Net+PPD", ("-", "-", "-", "-", "-"), True),
    ("Res2Net+BA", ("-", "BA", "BA", "-", "-"), False),
    ("Res2Net+RA", ("-", "-", "-", "RA", "RA"), False),
    ("Res2Net+BA+RA", PROPOSED_LEVELS, False),
    ("Res2Net+RA+PPD", ("-", "-", "-", "RA", "RA"), True),
    ("Res2Net+BA+RA+PPD (Proposed)", PROPOSED_LEVELS, True),
]

METRIC_HEADER = [COLUMNS[k] for k in METRICS]
TABLE3_HEADER = ["Instance", "Conv1", "Conv2", "Conv3", "Conv4", "Conv5", *METRIC_HEADER]
TABLE4_HEADER = ["Architecture", *METRIC_HEADER]


@dataclass
class AblationRow:
    name: str
    model: ModelConfig


def table3_configs(base: ModelConfig) -> list[AblationRow]:
    return [AblationRow(name, replace(base, levels=levels, ppd=True)) for name, levels in TABLE3_ROWS]


def table4_configs(base: ModelConfig) -> list[AblationRow]:
    return [AblationRow(name, replace(base, levels=levels, ppd=ppd)) for name, levels, ppd in TABLE4_ROWS]


def run_ablation(samples: list[Sample], rows: list[AblationRow], cfg: ExperimentConfig) -> list[tuple[AblationRow, CVResult]]:
    """Run every configuration on the same folds, re-initialized from the same seed."""
    return [(row, run_cv(samples, replace(cfg, model=row.model))) for row in rows]


def table3_rows(results) -> list[list[str]]:
    out = []
    for row, res in results:
        out.append([row.name, *row.model.levels, *summary_cells(res.folds)])
    return out


def table4_rows(results) -> list[list[str]]:
    return [[row.name, *summary_cells(res.folds)] for row, res in results]


DEFAULT_DELTAS = (0.1, 0.3, 0.5, 0.7, 0.9)
SWEEP_HEADER = ["delta", "mDSC", "mIoU", "mDSC_std", "mIoU_std"]


def sweep_delta(samples: list[Sample], deltas, cfg: ExperimentConfig) -> list[list[str]]:
    rows = []
    for d in sorted(set(float(x) for x in deltas)):
        res = run_cv(samples, cfg.with_overrides(delta=d))
        dsc = [r.mean["dsc"] for r in res.folds]
        iou = [r.mean["iou"] for r in res.folds]
        rows.append(
            [
                f"{d:g}",
                f"{np.mean(dsc):.4f}",
                f"{np.mean(iou):.4f}",
                f"{np.std(dsc, ddof=1) if len(dsc) > 1 else 0.0:.4f}",
                f"{np.std(iou, ddof=1) if len(iou) > 1 else 0.0:.4f}",
            ]
        )
    return rows


# ------------------------------------------------------------------ writing --


def write_report(out_dir, name: str, header: list[str], rows: list[list[str]], cfg: ExperimentConfig, title: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.csv").write_text(to_csv(header, rows))
    notes = "\n".join(f"    {line}" for line in cfg.describe())
    (out / f"{name}.md").write_text(f"# {title}\n\nSettings:\n\n{notes}\n\n" + to_markdown(header, rows))


def write_per_image(out_dir, result: CVResult, name: str = "per_image") -> None:
    text = "".join(r.to_csv() if i == 0 else r.to_csv().split("\n", 1)[1] for i, r in enumerate(result.folds))
    Path(out_dir, f"{name}.csv").write_text(text)


def cv_report(out_dir, samples, cfg: ExperimentConfig, compare_preprocessing: bool = False) -> dict[str, CVResult]:
    """Table-1 report for ``cfg``; optionally also the with/without preprocessing table."""
    results = {}
    main = run_cv(samples, cfg)
    results["main"] = main
    write_report(out_dir, "table1", TABLE1_HEADER, main.table(cfg.dataset), cfg, "Cross-validation results")
    write_per_image(out_dir, main)
    if compare_preprocessing:
        other_cfg = replace(cfg, preprocess=not cfg.preprocess)
        other = run_cv(samples, other_cfg)
        results["other"] = other
        without, with_ = (other, main) if cfg.preprocess else (main, other)
        write_report(
            out_dir, "table1_" + ("raw" if cfg.preprocess else "preprocessed"),
            TABLE1_HEADER, other.table(cfg.dataset), other_cfg, "Cross-validation results",
        )
        write_report(
            out_dir, "table2", TABLE2_HEADER, preprocessing_table(cfg.dataset, without, with_),
            cfg, "With and without preprocessing",
        )
    return results
