"""Evaluation metrics for restoration, grounding and dense prediction."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

LUMA_BT601 = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 8
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    count: int
    infinite: bool = False

    def to_json(self) -> dict:
        d = asdict(self)
        if self.infinite:
            d["value"] = None
        return d


def _same_shape(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> MetricReport:
    a, b = _same_shape(a, b)
    # integer accumulation keeps 8-bit inputs exact
    mse = int(((a.astype(np.int64) - b.astype(np.int64)) ** 2).sum()) / a.size
    if mse == 0:
        return MetricReport("psnr", math.inf, a.size, infinite=True)
    return MetricReport("psnr", 10.0 * math.log10(255.0**2 / mse), a.size)


def luma(img) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) @ LUMA_BT601


def _window_sums(x: np.ndarray, k: int) -> np.ndarray:
    """Sums over every k x k window (stride 1) via a summed-area table."""
    s = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    s[1:, 1:] = x.cumsum(0).cumsum(1)
    return s[k:, k:] - s[:-k, k:] - s[k:, :-k] + s[:-k, :-k]


def ssim(a, b) -> MetricReport:
    """Mean SSIM over 8x8 uniform windows of the BT.601 luma channel."""
    a, b = _same_shape(a, b)
    k = SSIM_WINDOW
    if a.shape[0] < k or a.shape[1] < k:
        raise ValueError(f"SSIM needs at least {k}x{k} pixels, got {a.shape[:2]}")
    x, y = luma(a), luma(b)
    if np.array_equal(x, y):
        # summed-area round-off would otherwise leave this a few ulps off 1
        n = (x.shape[0] - k + 1) * (x.shape[1] - k + 1)
        return MetricReport("ssim", 1.0, n)
    n = k * k
    mx, my = _window_sums(x, k) / n, _window_sums(y, k) / n
    vx = _window_sums(x * x, k) / n - mx * mx
    vy = _window_sums(y * y, k) / n - my * my
    cxy = _window_sums(x * y, k) / n - mx * my
    s = ((2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)) / (
        (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
    )
    return MetricReport("ssim", float(s.mean()), s.size)


def rmse(pred, gt) -> MetricReport:
    pred, gt = _same_shape(pred, gt)
    err = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return MetricReport("rmse", float(np.sqrt(np.mean(err * err))), err.size)


def mean_angle_error(pred, gt) -> MetricReport:
    pred, gt = _same_shape(pred, gt)
    dot = np.clip(np.sum(np.asarray(pred, float) * np.asarray(gt, float), axis=-1), -1.0, 1.0)
    ang = np.degrees(np.arccos(dot))
    return MetricReport("mean_angle_error", float(ang.mean()), ang.size)


def miou(pred, gt, num_classes: int) -> MetricReport:
    """Mean IoU over classes that occur in either map; absent classes are skipped."""
    pred, gt = _same_shape(pred, gt)
    pred, gt = pred.astype(np.int64).ravel(), gt.astype(np.int64).ravel()
    if pred.size and (max(pred.max(), gt.max()) >= num_classes or min(pred.min(), gt.min()) < 0):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    conf = np.bincount(gt * num_classes + pred, minlength=num_classes**2).reshape(
        num_classes, num_classes
    )
    inter = np.diag(conf).astype(np.float64)
    union = conf.sum(0) + conf.sum(1) - inter
    seen = union > 0
    return MetricReport("miou", float(np.mean(inter[seen] / union[seen])), int(seen.sum()))


def ciou(preds: Sequence, gts: Sequence) -> MetricReport:
    """Cumulative IoU: total intersection over total union across all pairs."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground truths")
    inter = union = 0
    used = 0
    for p, g in zip(preds, gts):
        p, g = _same_shape(np.asarray(p, bool), np.asarray(g, bool))
        u = int((p | g).sum())
        if u == 0:
            continue
        inter += int((p & g).sum())
        union += u
        used += 1
    if union == 0:
        raise ValueError("every pair has an empty union")
    return MetricReport("ciou", inter / union, used)


def l1_distance(a, b) -> MetricReport:
    a, b = _same_shape(a, b)
    total = int(np.abs(a.astype(np.int64) - b.astype(np.int64)).sum())
    return MetricReport("l1", total / (255.0 * a.size), a.size)


IMAGE_METRICS = {"psnr": psnr, "ssim": ssim, "l1": l1_distance}
