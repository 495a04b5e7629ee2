"""Slow, obviously-correct reference implementations used only by tests."""
import itertools
import math

import numpy as np
import torch


def brute_dt(mask):
    """Nearest-zero Euclidean distance by exhaustive search, with a ring of
    zeros around the image."""
    mask = np.asarray(mask).astype(bool)
    h, w = mask.shape
    zeros = [(y, x) for y in range(-1, h + 1) for x in range(-1, w + 1)
             if not (0 <= y < h and 0 <= x < w) or not mask[y, x]]
    out = np.zeros((h, w))
    for y, x in itertools.product(range(h), range(w)):
        if mask[y, x]:
            out[y, x] = math.sqrt(min((y - zy) ** 2 + (x - zx) ** 2 for zy, zx in zeros))
    return out


def brute_grey_morph(img, se, op):
    """Flat grey dilation/erosion with replicate border by explicit loops."""
    img = np.asarray(img)
    h, w = img.shape
    k = se.shape[0] // 2
    offs = [(dy - k, dx - k) for dy in range(se.shape[0]) for dx in range(se.shape[1]) if se[dy, dx]]
    out = np.empty_like(img)
    for y, x in itertools.product(range(h), range(w)):
        vals = [img[min(max(y + dy, 0), h - 1), min(max(x + dx, 0), w - 1)] for dy, dx in offs]
        out[y, x] = max(vals) if op == "dilate" else min(vals)
    return out


def brute_blackhat(img, se):
    closed = brute_grey_morph(brute_grey_morph(img, se, "dilate"), se, "erode")
    return np.clip(closed.astype(int) - img.astype(int), 0, 255)


def brute_morph_gradient(g):
    """3x3 dilation minus 3x3 erosion, zero outside the image."""
    g = np.asarray(g).astype(int)
    h, w = g.shape

    def at(y, x):
        return g[y, x] if 0 <= y < h and 0 <= x < w else 0

    out = np.zeros_like(g)
    for y, x in itertools.product(range(h), range(w)):
        vals = [at(y + dy, x + dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
        out[y, x] = max(vals) - min(vals)
    return out


def count_metrics(s, g):
    """Per-pixel confusion counting, written independently of the library."""
    tp = fp = fn = tn = 0
    for a, b in zip(np.ravel(s), np.ravel(g)):
        if a and b:
            tp += 1
        elif a and not b:
            fp += 1
        elif b:
            fn += 1
        else:
            tn += 1
    dsc = 1.0 if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
    iou = 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)
    if tp == 0:
        fm = 1.0 if fp + fn == 0 else 0.0
    else:
        p, r = tp / (tp + fp), tp / (tp + fn)
        fm = 2 * p * r / (p + r)
    sen = 1.0 if tp + fn == 0 else tp / (tp + fn)
    spe = 1.0 if tn + fp == 0 else tn / (tn + fp)
    return {"dsc": dsc, "iou": iou, "fm": fm, "sen": sen, "spe": spe}


def central_diff(f, x, eps=1e-6):
    """Numerical gradient of scalar ``f`` at float64 array ``x`` (modified in place, restored)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


class FrozenMasks:
    """Record the reverse-attention masks of one forward pass and replay them
    in every later pass.

    The network treats those masks as data (no gradient through the guide),
    so the matching finite-difference oracle must hold them fixed too.
    """

    def __init__(self, module):
        self.module = module
        self.saved = []
        self.recording = True
        self.i = 0

    def __enter__(self):
        self.orig = self.module.ra_mask
        self.module.ra_mask = self
        return self

    def __exit__(self, *exc):
        self.module.ra_mask = self.orig

    def replay(self):
        self.recording, self.i = False, 0

    def __call__(self, guide, channels, size=None):
        if self.recording:
            m = self.orig(guide, channels, size)
            self.saved.append(m)
            return m
        m = self.saved[self.i % len(self.saved)]
        self.i += 1
        return m


def param_probe(model, loss_fn, param, n=5, eps=1e-6):
    """Analytic vs central-difference gradient on ``n`` spread-out entries of
    ``param``, with reverse-attention masks frozen as in the backward pass."""
    from lesionseg import attention

    with FrozenMasks(attention) as fm:
        model.zero_grad()
        loss_fn().backward()
        fm.replay()
        idx = [np.unravel_index(k, param.shape) for k in range(0, param.numel(), max(1, param.numel() // n))]
        analytic, numeric = [], []
        for i in idx:
            analytic.append(float(param.grad[i]))
            with torch.no_grad():
                orig = float(param[i])
                param[i] = orig + eps
                up = float(loss_fn())
                param[i] = orig - eps
                down = float(loss_fn())
                param[i] = orig
            numeric.append((up - down) / (2 * eps))
    return np.array(analytic), np.array(numeric)
