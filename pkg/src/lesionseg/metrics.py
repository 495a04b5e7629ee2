"""Overlap metrics on binary masks and fold-level aggregation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

METRICS = ("dsc", "iou", "fm", "sen", "spe")
COLUMNS = {"dsc": "mDSC", "iou": "mIoU", "fm": "mFM", "sen": "mSen", "spe": "mSpe"}


def _pair(s, g):
    s = np.asarray(s).astype(bool)
    g = np.asarray(g).astype(bool)
    if s.shape != g.shape:
        raise ValueError(f"mask shapes differ: {s.shape} vs {g.shape}")
    return s, g


def dsc(s, g) -> float:
    s, g = _pair(s, g)
    denom = int(s.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((s & g).sum()) / denom


def iou(s, g) -> float:
    s, g = _pair(s, g)
    union = int((s | g).sum())
    if union == 0:
        return 1.0
    return int((s & g).sum()) / union


def fmeasure(s, g) -> float:
    s, g = _pair(s, g)
    inter = int((s & g).sum())
    ns, ng = int(s.sum()), int(g.sum())
    precision = inter / ns if ns else 0.0
    recall = inter / ng if ng else 0.0
    if precision + recall == 0:
        # both masks empty is a perfect prediction
        return 1.0 if ns == 0 and ng == 0 else 0.0
    return 2 * precision * recall / (precision + recall)


def sensitivity(s, g) -> float:
    s, g = _pair(s, g)
    ng = int(g.sum())
    if ng == 0:
        return 1.0
    return int((s & g).sum()) / ng


def specificity(s, g) -> float:
    s, g = _pair(s, g)
    nb = int((~g).sum())
    if nb == 0:
        return 1.0
    return int((~s & ~g).sum()) / nb


def all_metrics(s, g) -> dict[str, float]:
    return {
        "dsc": dsc(s, g),
        "iou": iou(s, g),
        "fm": fmeasure(s, g),
        "sen": sensitivity(s, g),
        "spe": specificity(s, g),
    }


@dataclass
class MetricsReport:
    fold: str = ""
    per_image: list[tuple[str, dict[str, float]]] = field(default_factory=list)

    def add(self, image_id: str, s, g) -> dict[str, float]:
        m = all_metrics(s, g)
        self.per_image.append((image_id, m))
        return m

    def values(self, metric: str) -> np.ndarray:
        return np.array([m[metric] for _, m in self.per_image], dtype=np.float64)

    @property
    def mean(self) -> dict[str, float]:
        return {k: float(self.values(k).mean()) if self.per_image else float("nan") for k in METRICS}

    @property
    def std(self) -> dict[str, float]:
        return {k: sample_std(self.values(k)) for k in METRICS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "id", *METRICS])
        for image_id, m in self.per_image:
            w.writerow([self.fold, image_id, *(f"{m[k]:.6f}" for k in METRICS)])
        return buf.getvalue()


def sample_std(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        return 0.0
    return float(x.std(ddof=1))


def aggregate(reports: list[MetricsReport], fold: str = "all") -> MetricsReport:
    """Pool per-image rows of several reports into one."""
    out = MetricsReport(fold=fold)
    for r in reports:
        out.per_image.extend(r.per_image)
    return out


def fmt(mean: float, std: float | None = None) -> str:
    if std is None:
        return f"{mean:.3f}"
    return f"{mean:.3f}±{std:.3f}"


def fold_table(dataset: str, folds: list[MetricsReport]) -> list[list[str]]:
    """Rows of a per-fold table: one row per fold, then an Average row with
    mean±std over the fold means."""
    rows = []
    means = []
    for r in folds:
        m = r.mean
        means.append(m)
        rows.append([dataset, r.fold, *(fmt(m[k]) for k in METRICS)])
    avg = []
    for k in METRICS:
        col = [m[k] for m in means]
        avg.append(fmt(float(np.mean(col)), sample_std(col)))
    rows.append([dataset, "Average", *avg])
    return rows


def summary_cells(folds: list[MetricsReport], metrics=METRICS) -> list[str]:
    means = [r.mean for r in folds]
    return [fmt(float(np.mean([m[k] for m in means])), sample_std([m[k] for m in means])) for k in metrics]


def to_markdown(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def to_csv(header: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


TABLE1_HEADER = ["Dataset", "Fold", *(COLUMNS[k] for k in METRICS)]
