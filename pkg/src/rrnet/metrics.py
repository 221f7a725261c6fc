"""Evaluation: mean absolute error, threshold-swept F-measure, balanced
error rate, error maps and per-dataset reports."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .boundary import BoundaryConfig, boundary_mask

N_THRESHOLDS = 256
BETA_SQ = 0.3


@dataclass
class MetricReport:
    dataset: str
    n_images: int
    mae: float
    max_f_beta: float
    beta_sq: float
    f_curve: list
    ber: float = None
    boundary_mae: float = None

    def to_dict(self) -> dict:
        d = {"dataset": self.dataset, "n_images": self.n_images, "mae": self.mae,
             "max_f_beta": self.max_f_beta, "beta_sq": self.beta_sq,
             "f_curve": list(self.f_curve)}
        if self.ber is not None:
            d["ber"] = self.ber
        if self.boundary_mae is not None:
            d["boundary_mae"] = self.boundary_mae
        return d

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path) -> "MetricReport":
        with open(path) as f:
            return cls(**json.load(f))


def _check_pair(p: np.ndarray, g: np.ndarray):
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} != ground truth shape {g.shape}")


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_pair(pred, gt)
    return float(np.abs(pred - gt).mean())


def _threshold_counts(pred: np.ndarray, gt: np.ndarray):
    """Predicted-positive and true-positive counts at every threshold k/255.

    Predictions are binarized on their 8-bit levels with a strict compare,
    floor(pred*255) > k, so an all-zero map is negative even at threshold 0.
    """
    levels = np.minimum(np.floor(pred * 255).astype(np.int64), 255)

    def count_above(vals):
        ge = np.cumsum(np.bincount(vals.ravel(), minlength=256)[::-1])[::-1]
        return np.append(ge[1:], 0)  # strict: level > k  <=>  level >= k+1

    pp = count_above(levels)
    tp = count_above(levels[gt >= 0.5])
    return pp, tp, int((gt >= 0.5).sum())


def max_f_beta(preds, gts, beta_sq: float = BETA_SQ, sum_numerator: bool = False):
    """Max over 256 thresholds of the beta-weighted precision/recall score.

    Precision and recall are averaged per-image first (0/0 counts as 0).
    ``sum_numerator`` switches to the (1+b^2)(P+R) form; the product form is
    the standard definition and the default.
    """
    if not preds or len(preds) != len(gts):
        raise ValueError("preds and gts must be non-empty paired lists")
    prec = np.zeros(N_THRESHOLDS)
    rec = np.zeros(N_THRESHOLDS)
    for p, g in zip(preds, gts):
        p, g = np.asarray(p, dtype=np.float64), np.asarray(g, dtype=np.float64)
        _check_pair(p, g)
        pp, tp, gp = _threshold_counts(p, g)
        prec += np.where(pp > 0, tp / np.maximum(pp, 1), 0.0)
        rec += (tp / gp) if gp > 0 else 0.0
    prec /= len(preds)
    rec /= len(preds)
    num = (1 + beta_sq) * ((prec + rec) if sum_numerator else (prec * rec))
    den = beta_sq * prec + rec
    curve = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
    return float(curve.max()), curve


def ber(preds, gts, threshold: float = 0.5) -> float:
    """Balanced error rate in percent, pooled over all pixels.

    An absent class contributes a perfect rate by convention.
    """
    if not preds or len(preds) != len(gts):
        raise ValueError("preds and gts must be non-empty paired lists")
    tp = tn = fp = fn = 0
    for p, g in zip(preds, gts):
        p, g = np.asarray(p, dtype=np.float64), np.asarray(g, dtype=np.float64)
        _check_pair(p, g)
        pos = p >= threshold
        gt_pos = g >= 0.5
        tp += int((pos & gt_pos).sum())
        tn += int((~pos & ~gt_pos).sum())
        fp += int((pos & ~gt_pos).sum())
        fn += int((~pos & gt_pos).sum())
    tpr = tp / (tp + fn) if (tp + fn) > 0 else 1.0
    tnr = tn / (tn + fp) if (tn + fp) > 0 else 1.0
    return float(100.0 * (1.0 - 0.5 * (tpr + tnr)))


def error_map(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-pixel absolute error in [0,1]; callers quantize it to PGM."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_pair(pred, gt)
    return np.abs(pred - gt)


def boundary_mae(pred: np.ndarray, gt: np.ndarray, width: int) -> float:
    """MAE restricted to the dilated contour band; 0 when the band is empty."""
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    band = boundary_mask((np.asarray(gt) >= 0.5).astype(np.uint8),
                         BoundaryConfig(width=width))
    if band.sum() == 0:
        return 0.0
    err = error_map(pred, gt)
    return float(err[band.astype(bool)].mean())


def evaluate(preds, gts, dataset: str, with_ber: bool = False,
             boundary_width: int = None) -> MetricReport:
    """Full report over paired prediction / ground-truth lists."""
    if not preds or len(preds) != len(gts):
        raise ValueError("preds and gts must be non-empty paired lists")
    per_image_mae = [mae(p, g) for p, g in zip(preds, gts)]
    max_f, curve = max_f_beta(preds, gts)
    report = MetricReport(
        dataset=dataset, n_images=len(preds),
        mae=float(np.mean(per_image_mae)),
        max_f_beta=max_f, beta_sq=BETA_SQ, f_curve=curve.tolist(),
    )
    if with_ber:
        report.ber = ber(preds, gts)
    if boundary_width is not None:
        vals = [boundary_mae(p, g, boundary_width) for p, g in zip(preds, gts)]
        report.boundary_mae = float(np.mean(vals))
    return report
