"""Dataset indexing, image IO, fold splitting and the synthetic lesion set."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
# common ground-truth naming schemes (ISIC "_segmentation", PH2 "_lesion")
MASK_STEM_SUFFIXES = ("_segmentation", "_lesion", "_mask")
SOURCES = ("ph2", "isic2017", "ham10000", "synthetic", "custom")


@dataclass(frozen=True)
class Entry:
    id: str
    image: Path
    mask: Path


@dataclass
class DatasetIndex:
    entries: list[Entry]
    tag: str = "custom"
    unmatched_masks: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entries]


@dataclass
class Sample:
    id: str
    image: np.ndarray  # HxWx3 uint8
    mask: np.ndarray  # HxW uint8 in {0, 1}
    clean: np.ndarray | None = None  # hair-free rendering, synthetic data only


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) > 127).astype(np.uint8)


def write_png(path, arr: np.ndarray) -> None:
    Image.fromarray(arr).save(path, format="PNG")


def _files_by_stem(folder: Path) -> dict[str, Path]:
    out: dict[str, Path] = {}
    dupes = []
    for p in sorted(folder.iterdir()):
        if p.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        if p.stem in out:
            dupes.append(p.stem)
        out[p.stem] = p
    if dupes:
        raise ValueError(f"duplicate stems in {folder}: {sorted(set(dupes))}")
    return out


def _mask_key(stem: str) -> str:
    for suffix in MASK_STEM_SUFFIXES:
        if stem.endswith(suffix):
            return stem[: -len(suffix)]
    return stem


def load_dataset(root, tag: str = "custom") -> DatasetIndex:
    """Index ``root/images`` against ``root/masks`` by file stem."""
    if tag not in SOURCES:
        raise ValueError(f"unknown dataset tag {tag!r}")
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    images = _files_by_stem(img_dir) if img_dir.is_dir() else {}
    masks: dict[str, Path] = {}
    if mask_dir.is_dir():
        for stem, p in _files_by_stem(mask_dir).items():
            key = _mask_key(stem) if stem not in images else stem
            if key in masks:
                raise ValueError(f"duplicate mask for {key!r} in {mask_dir}")
            masks[key] = p
    if not images:
        log.warning("no images found under %s", img_dir)
        return DatasetIndex([], tag)
    missing = sorted(set(images) - set(masks))
    if missing:
        raise FileNotFoundError(f"no mask for {len(missing)} image(s): {missing}")
    unmatched = sorted(set(masks) - set(images))
    if unmatched:
        log.warning("%d mask(s) without image: %s", len(unmatched), unmatched)
    entries = [Entry(stem, images[stem], masks[stem]) for stem in sorted(images)]
    return DatasetIndex(entries, tag, unmatched)


def load_samples(index: DatasetIndex) -> list[Sample]:
    samples = []
    for e in index.entries:
        img, mask = read_rgb(e.image), read_mask(e.mask)
        if img.shape[:2] != mask.shape:
            raise ValueError(f"{e.id}: image {img.shape[:2]} and mask {mask.shape} differ in size")
        samples.append(Sample(e.id, img, mask))
    return samples


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple[tuple[str, ...], ...]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    def train_test(self, i: int) -> tuple[list[str], list[str]]:
        test = list(self.folds[i])
        train = [x for j, f in enumerate(self.folds) if j != i for x in f]
        return train, test


def make_folds(ids, k: int = 5, seed: int = 0) -> FoldSplit:
    """Seeded shuffle, then deal ids round-robin into k folds."""
    if isinstance(ids, DatasetIndex):
        ids = ids.ids
    ids = list(ids)
    if k < 2:
        raise ValueError("need at least 2 folds")
    if len(set(ids)) != len(ids):
        raise ValueError("ids must be unique")
    order = np.random.default_rng(seed).permutation(len(ids))
    folds = tuple(tuple(ids[j] for j in order[i::k]) for i in range(k))
    return FoldSplit(folds, seed)


# ---------------------------------------------------------------- synthetic --


def _smooth_noise(rng, side, sigma, amp):
    n = rng.normal(size=(side, side))
    n = cv2.GaussianBlur(n, (0, 0), sigma)
    n /= n.std() + 1e-12
    return amp * n


def ellipse_mask(side, cy, cx, a, b, angle) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) + 0.5
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(angle), np.sin(angle)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.uint8)


def _hair_strokes(rng, side) -> np.ndarray:
    layer = np.zeros((side, side), np.uint8)
    for _ in range(rng.integers(4, 11)):
        p0, p1 = rng.uniform(-0.1, 1.1, 2) * side, rng.uniform(-0.1, 1.1, 2) * side
        ctrl = rng.uniform(0.1, 0.9, 2) * side
        t = np.linspace(0, 1, 4 * side)[:, None]
        pts = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * ctrl + t**2 * p1
        cv2.polylines(layer, [np.round(pts).astype(np.int32)], False, 1, thickness=1)
    return layer


def synth_sample(rng: np.random.Generator, side: int = 128, hair: bool = True, sample_id: str = "") -> Sample:
    skin = np.array([205.0, 160.0, 140.0]) + rng.uniform(-15, 15, 3)
    base = skin + _smooth_noise(rng, side, side / 12, 8.0)[..., None]
    cy, cx = rng.uniform(0.35, 0.65, 2) * side
    a, b = rng.uniform(0.15, 0.3, 2) * side
    mask = ellipse_mask(side, cy, cx, a, b, rng.uniform(0, np.pi))
    lesion = np.array([115.0, 75.0, 55.0]) + rng.uniform(-20, 20, 3)
    lesion = lesion + _smooth_noise(rng, side, side / 20, 10.0)[..., None]
    img = np.where(mask[..., None] == 1, lesion, base)
    img = img + rng.normal(0, 3.0, img.shape)
    clean = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    out = clean.copy()
    if hair:
        strokes = _hair_strokes(rng, side).astype(bool)
        shade = np.array([40.0, 30.0, 25.0]) + rng.uniform(-10, 10, 3)
        out[strokes] = np.clip(shade, 0, 255).astype(np.uint8)
    return Sample(sample_id, out, mask, clean)


def synth_samples(n: int, seed: int = 0, side: int = 128, hair: bool = True) -> list[Sample]:
    rng = np.random.default_rng(seed)
    return [synth_sample(rng, side, hair, f"synth_{i:04d}") for i in range(n)]


def synth_dataset(n: int, seed: int, out_dir, side: int = 128, hair: bool = True) -> DatasetIndex:
    """Write ``n`` synthetic images, masks and hair-free references under ``out_dir``."""
    out = Path(out_dir)
    for sub in ("images", "masks", "clean"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for s in synth_samples(n, seed, side, hair):
        write_png(out / "images" / f"{s.id}.png", s.image)
        write_png(out / "masks" / f"{s.id}.png", s.mask * 255)
        write_png(out / "clean" / f"{s.id}.png", s.clean)
    return load_dataset(out, "synthetic")
