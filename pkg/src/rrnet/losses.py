"""Cross-entropy, soft IoU, the boundary-band loss and the composite total.

The total objective is  L_f + sigma * sum(L_i)  plus, when boundary
supervision is on,  eta * (L_bf + sigma * sum(L_bi)),  with
sigma = lambda / N.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tg
from .boundary import sobel_magnitude
from .tensor import ShapeError


@dataclass
class LossConfig:
    lambda_: float = 2.0
    n_layers: int = 4
    eta: float = 1.0
    epsilon: float = 1e-7

    def __post_init__(self):
        if self.lambda_ < 0 or self.eta < 0:
            raise ValueError("lambda and eta must be >= 0")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")

    def sigma(self) -> float:
        return self.lambda_ / self.n_layers


@dataclass
class LossBreakdown:
    l_f: float
    l_i: list
    l_bf: float
    l_bi: list
    sigma: float
    eta: float
    total: float

    def to_dict(self) -> dict:
        return {
            "l_f": self.l_f, "l_i": list(self.l_i),
            "l_bf": self.l_bf, "l_bi": list(self.l_bi),
            "sigma": self.sigma, "eta": self.eta, "total": self.total,
        }


def _target_array(target, like: tg.Tensor) -> np.ndarray:
    t = np.asarray(target, dtype=like.dtype)
    if t.shape != like.shape:
        raise ShapeError(f"target shape {t.shape} does not match prediction {like.shape}")
    return t


def bce(pred: tg.Tensor, target, eps: float = 1e-7, tape: tg.Tape = None) -> tg.Tensor:
    """Mean binary cross entropy on probabilities clamped to [eps, 1-eps]."""
    t = _target_array(target, pred)
    p = np.clip(pred.data, eps, 1 - eps)
    n = p.size
    val = -(t * np.log(p) + (1 - t) * np.log(1 - p)).sum() / n
    out = np.full((1, 1, 1, 1), val, dtype=pred.dtype)
    live = (pred.data > eps) & (pred.data < 1 - eps)

    def back(go):
        g = go.reshape(()) * live * (p - t) / (p * (1 - p)) / n
        return [g]

    return tg.apply_op("bce", [pred], out, back, tape)


def soft_iou_loss(pred: tg.Tensor, target, mask=None, tape: tg.Tape = None) -> tg.Tensor:
    """1 - intersection/union on soft maps, optionally restricted to a mask.

    Returns 0 when the (masked) union is empty, so frames without any
    boundary band still have a defined loss.
    """
    t = _target_array(target, pred)
    if mask is None:
        m = np.ones((), dtype=pred.dtype)
    else:
        m = np.asarray(mask, dtype=pred.dtype)
        m = np.broadcast_to(m, pred.shape)
    a = pred.data * m
    b = t * m
    inter = (a * b).sum()
    union = (a + b - a * b).sum()
    val = 0.0 if union == 0 else 1.0 - inter / union
    out = np.full((1, 1, 1, 1), val, dtype=pred.dtype)

    def back(go):
        if union == 0:
            return [np.zeros_like(pred.data)]
        # d/da of (1 - I/U): I' = b, U' = 1 - b
        g = -(b * union - inter * (1 - b)) / (union * union) * m
        return [go.reshape(()) * g]

    return tg.apply_op("soft_iou", [pred], out, back, tape)


def brl(pred: tg.Tensor, gt, bmask, strategy: str = "expand", tape: tg.Tape = None) -> tg.Tensor:
    """Boundary loss: soft IoU restricted to the band around the contour.

    The "grad" variant compares Sobel edge maps of prediction and ground
    truth instead of masking.
    """
    if strategy == "expand":
        return soft_iou_loss(pred, gt, mask=bmask, tape=tape)
    if strategy == "grad":
        pred_edges = sobel_magnitude(pred, tape=tape)
        gt_edges = sobel_magnitude(tg.Tensor(_target_array(gt, pred))).data
        return soft_iou_loss(pred_edges, gt_edges, tape=tape)
    raise ValueError(f"unknown boundary strategy {strategy!r}")


def total_loss(final: tg.Tensor, side, gt, bmask, cfg: LossConfig,
               use_brl: bool, strategy: str = "expand", tape: tg.Tape = None):
    """Combine the final and side losses into the training objective.

    ``side`` is the list of the N intermediate outputs, all already at
    ground-truth resolution. Returns (total Tensor, LossBreakdown).
    """
    if len(side) != cfg.n_layers:
        raise ShapeError(f"{len(side)} side outputs but config says N={cfg.n_layers}")
    sig = cfg.sigma()

    l_f = bce(final, gt, eps=cfg.epsilon, tape=tape)
    l_i = [bce(y, gt, eps=cfg.epsilon, tape=tape) for y in side]

    total = l_f
    for li in l_i:
        total = tg.add(total, tg.scale(li, sig, tape=tape), tape=tape)

    l_bf = None
    l_bi = []
    if use_brl:
        l_bf = brl(final, gt, bmask, strategy=strategy, tape=tape)
        l_bi = [brl(y, gt, bmask, strategy=strategy, tape=tape) for y in side]
        bterm = l_bf
        for lb in l_bi:
            bterm = tg.add(bterm, tg.scale(lb, sig, tape=tape), tape=tape)
        total = tg.add(total, tg.scale(bterm, cfg.eta, tape=tape), tape=tape)

    breakdown = LossBreakdown(
        l_f=l_f.item(),
        l_i=[x.item() for x in l_i],
        l_bf=l_bf.item() if l_bf is not None else 0.0,
        l_bi=[x.item() for x in l_bi],
        sigma=sig,
        eta=cfg.eta if use_brl else 0.0,
        total=total.item(),
    )
    return total, breakdown
