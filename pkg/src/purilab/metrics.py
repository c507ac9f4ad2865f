"""Weighted confusion scores, image quality, and before/after deltas."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .guidance import SSIMParams, ssim as _ssim

PSNR_CAP = 80.0


@dataclass(frozen=True)
class ConfusionW:
    tp: float
    fp: float
    tn: float
    fn: float

    def swapped(self):
        """Same counts with the FP and FN labels exchanged."""
        return ConfusionW(self.tp, self.fn, self.tn, self.fp)


def weighted_confusion(heat, mask):
    """Soft confusion counts, reading ``heat`` as per-pixel forgery probability."""
    h = np.asarray(heat, dtype=np.float64)
    m = np.asarray(mask)
    if h.shape != m.shape:
        raise ShapeError(f"heat map {h.shape} vs mask {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise ParameterError("mask must be binary")
    if np.any(h < 0) or np.any(h > 1):
        raise ParameterError("heat map values must lie in [0, 1]")
    m = m.astype(np.float64)
    return ConfusionW(
        tp=float(np.sum(h * m)),
        fp=float(np.sum(h * (1 - m))),
        tn=float(np.sum((1 - h) * (1 - m))),
        fn=float(np.sum((1 - h) * m)),
    )


def score(conf):
    """Return ``(iou, mcc, f1)``; degenerate denominators give 0."""
    tp, fp, tn, fn = conf.tp, conf.fp, conf.tn, conf.fn
    union = tp + fn + fp
    iou = tp / union if union > 0 else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if union > 0 else 0.0
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(den) if den > 0 else 0.0
    return iou, max(-1.0, min(1.0, mcc)), f1


def psnr(x, y, peak=1.0, cap=PSNR_CAP):
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0:
        return cap
    return min(cap, 10.0 * math.log10(peak * peak / mse))


def ssim01(x, y):
    """SSIM of two images stored in [0, 1]."""
    return _ssim(x, y, SSIMParams(data_range=1.0))


def model_to_unit(x):
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0


def image_quality(purified, reference):
    """PSNR and SSIM of two model-range images, measured in [0, 1]."""
    a, b = model_to_unit(purified), model_to_unit(reference)
    return psnr(a, b), ssim01(a, b)


def delta_report(before, after):
    """Per-key deltas ``after - before`` and their weighted average.

    ``before`` and ``after`` map a detector name to its dataset-mean score.
    The weight of each detector is its score on the originals, so detectors
    that worked to begin with dominate ``avg_w``.
    """
    if set(before) != set(after):
        raise ParameterError(f"detector keys differ: {sorted(before)} vs {sorted(after)}")
    deltas = {k: after[k] - before[k] for k in before}
    wsum = sum(before[k] for k in before)
    if wsum != 0:
        avg_w = sum(before[k] * deltas[k] for k in before) / wsum
    else:
        avg_w = sum(deltas.values()) / max(len(deltas), 1)
    return {"deltas": deltas, "avg_w": avg_w}
