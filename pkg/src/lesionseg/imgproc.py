"""Classical preprocessing: hair detection/removal, resizing and normalization.

Images are numpy arrays. RGB images are ``H x W x 3`` uint8 in red, green,
blue order; gray images and binary masks are ``H x W``.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class HairRemovalConfig:
    threshold: int = 10
    kernel: int = 17
    radius: int = 1


def _check_rgb(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an HxWx3 image, got shape {img.shape}")


def to_grayscale(img: np.ndarray) -> np.ndarray:
    _check_rgb(img)
    rgb = img.astype(np.float64)
    gray = rgb @ np.asarray(LUMA_WEIGHTS)
    return np.clip(np.rint(gray), 0, 255).astype(np.uint8)


def cross_element(k: int) -> np.ndarray:
    """k x k structuring element whose middle row and column are ones."""
    if not isinstance(k, (int, np.integer)) or k < 1 or k % 2 == 0:
        raise ValueError(f"cross element size must be a positive odd integer, got {k!r}")
    se = np.zeros((k, k), dtype=np.uint8)
    se[k // 2, :] = 1
    se[:, k // 2] = 1
    return se


def closing(img: np.ndarray, se: np.ndarray) -> np.ndarray:
    footprint = np.asarray(se, dtype=bool)
    dilated = ndimage.grey_dilation(img, footprint=footprint, mode="nearest")
    return ndimage.grey_erosion(dilated, footprint=footprint, mode="nearest")


def blackhat(img: np.ndarray, se: np.ndarray) -> np.ndarray:
    """Closing minus image: thin structures darker than their surroundings.

    Out-of-image samples replicate the nearest border pixel.
    """
    closed = closing(img, se).astype(np.int32)
    out = np.clip(closed - img.astype(np.int32), 0, 255)
    return out.astype(np.uint8)


def threshold_mask(bh: np.ndarray, t: int = 10) -> np.ndarray:
    if not 0 <= t <= 255:
        raise ValueError(f"threshold must lie in [0, 255], got {t}")
    return (bh > t).astype(np.uint8)


_KNOWN, _BAND, _INSIDE = 0, 1, 2
_NEIGHBORS4 = ((-1, 0), (1, 0), (0, -1), (0, 1))


def _solve_eikonal(t1: float, t2: float) -> float:
    if math.isinf(t1) and math.isinf(t2):
        return math.inf
    if math.isinf(t1) or math.isinf(t2):
        return min(t1, t2) + 1.0
    d = t1 - t2
    if abs(d) >= 1.0:
        return min(t1, t2) + 1.0
    return 0.5 * (t1 + t2 + math.sqrt(2.0 - d * d))


def inpaint_fmm(img: np.ndarray, mask: np.ndarray, radius: int = 1) -> np.ndarray:
    """Fill masked pixels by fast-marching from the mask boundary inward.

    Each pixel is assigned when the front reaches it, as a normalized weighted
    average of non-masked (or already filled) pixels in the ``(2r+1)^2``
    window around it. Weights combine direction (alignment with the front
    normal), geometric distance and arrival-time difference, as in Telea's
    method. Pixels outside ``mask`` are returned unchanged.
    """
    if img.shape[:2] != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    if radius < 1:
        raise ValueError("radius must be >= 1")
    hole = np.asarray(mask).astype(bool)
    if not hole.any():
        return img.copy()
    if hole.all():
        raise ValueError("mask covers the whole image; nothing to propagate from")

    h, w = hole.shape
    values = img.astype(np.float64).reshape(h, w, -1).copy()
    flag = np.where(hole, _INSIDE, _KNOWN).astype(np.int8)
    T = np.where(hole, np.inf, 0.0)

    seeds = ~hole & ndimage.binary_dilation(hole, structure=cross_element(3).astype(bool))
    heap: list[tuple[float, int, int]] = []
    for y, x in zip(*np.nonzero(seeds)):
        flag[y, x] = _BAND
        heap.append((0.0, int(y), int(x)))
    heapq.heapify(heap)

    def t_at(y: int, x: int) -> float:
        if 0 <= y < h and 0 <= x < w and flag[y, x] != _INSIDE:
            return T[y, x]
        return math.inf

    def arrival(y: int, x: int) -> float:
        up, down = t_at(y - 1, x), t_at(y + 1, x)
        left, right = t_at(y, x - 1), t_at(y, x + 1)
        return min(
            _solve_eikonal(up, left),
            _solve_eikonal(up, right),
            _solve_eikonal(down, left),
            _solve_eikonal(down, right),
        )

    def front_normal(y: int, x: int) -> tuple[float, float]:
        grad = []
        for (ya, xa), (yb, xb) in (((y + 1, x), (y - 1, x)), ((y, x + 1), (y, x - 1))):
            ta, tb = t_at(ya, xa), t_at(yb, xb)
            if not math.isinf(ta) and not math.isinf(tb):
                g = 0.5 * (ta - tb)
            elif not math.isinf(ta):
                g = ta - T[y, x]
            elif not math.isinf(tb):
                g = T[y, x] - tb
            else:
                g = 0.0
            grad.append(g)
        norm = math.hypot(grad[0], grad[1])
        if norm == 0.0:
            return 0.0, 0.0
        return grad[0] / norm, grad[1] / norm

    def fill(y: int, x: int) -> None:
        ny, nx = front_normal(y, x)
        t0 = T[y, x]
        acc = np.zeros(values.shape[2])
        wsum = 0.0
        for ky in range(max(0, y - radius), min(h, y + radius + 1)):
            for kx in range(max(0, x - radius), min(w, x + radius + 1)):
                if (ky == y and kx == x) or flag[ky, kx] == _INSIDE:
                    continue
                ry, rx = y - ky, x - kx
                d2 = float(ry * ry + rx * rx)
                if ny == 0.0 and nx == 0.0:
                    wdir = 1.0
                else:
                    wdir = max(abs(ry * ny + rx * nx) / math.sqrt(d2), 1e-6)
                wdst = 1.0 / d2
                wlev = 1.0 / (1.0 + abs(T[ky, kx] - t0))
                wk = wdir * wdst * wlev
                acc += wk * values[ky, kx]
                wsum += wk
        if wsum > 0.0:
            values[y, x] = acc / wsum

    while heap:
        t, y, x = heapq.heappop(heap)
        if flag[y, x] == _KNOWN or t > T[y, x]:
            continue
        flag[y, x] = _KNOWN
        for dy, dx in _NEIGHBORS4:
            qy, qx = y + dy, x + dx
            if not (0 <= qy < h and 0 <= qx < w) or flag[qy, qx] == _KNOWN:
                continue
            tq = arrival(qy, qx)
            if flag[qy, qx] == _INSIDE:
                T[qy, qx] = tq
                flag[qy, qx] = _BAND
                fill(qy, qx)
                heapq.heappush(heap, (tq, qy, qx))
            elif tq < T[qy, qx]:
                T[qy, qx] = tq
                heapq.heappush(heap, (tq, qy, qx))

    filled = np.clip(np.rint(values), 0, 255).astype(img.dtype).reshape(img.shape)
    out = img.copy()
    out[hole] = filled[hole]
    return out


def hair_stages(img: np.ndarray, cfg: HairRemovalConfig = HairRemovalConfig()) -> dict[str, np.ndarray]:
    """All intermediate images of the hair-removal chain, in order."""
    gray = to_grayscale(img)
    bh = blackhat(gray, cross_element(cfg.kernel))
    mask = threshold_mask(bh, cfg.threshold)
    if mask.all():
        # Degenerate: every pixel flagged, nothing to propagate from.
        inpainted = img.copy()
    else:
        inpainted = inpaint_fmm(img, mask, cfg.radius)
    return {
        "original": img,
        "grayscale": gray,
        "blackhat": bh,
        "threshold": mask,
        "inpainted": inpainted,
    }


def remove_hair(img: np.ndarray, cfg: HairRemovalConfig = HairRemovalConfig()) -> np.ndarray:
    _check_rgb(img)
    return hair_stages(img, cfg)["inpainted"]


def resize_image(img: np.ndarray, side: int) -> np.ndarray:
    if img.shape[0] == side and img.shape[1] == side:
        return img.copy()
    return cv2.resize(img, (side, side), interpolation=cv2.INTER_LINEAR)


def normalize(img: np.ndarray) -> np.ndarray:
    x = img.astype(np.float32) / 255.0
    return (x - np.asarray(IMAGENET_MEAN, np.float32)) / np.asarray(IMAGENET_STD, np.float32)


def resize_normalize(img: np.ndarray, side: int = 256) -> np.ndarray:
    if side < 32:
        raise ValueError(f"side must be >= 32, got {side}")
    _check_rgb(img)
    return normalize(resize_image(img, side))


def preprocess(img: np.ndarray, side: int, cfg: HairRemovalConfig | None = HairRemovalConfig()) -> np.ndarray:
    """Resize, optionally remove hair on 8-bit data, and return uint8.

    Pass ``cfg=None`` to skip hair removal. Normalization is left to the
    caller so the result can still be written as an image.
    """
    _check_rgb(img)
    out = resize_image(img, side)
    if cfg is not None:
        out = remove_hair(out, cfg)
    return out
