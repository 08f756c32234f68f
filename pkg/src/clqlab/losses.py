"""Training losses: quality focal loss on the ranking score, GIoU regression,
BCE on the predicted IoU, and their weighted sum."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from clqlab import autodiff as ad
from clqlab.autodiff import Tensor
from clqlab.assignment import BACKGROUND
from clqlab.head import decode_tensor, fuse_ranking_scores

EPS = 1e-7


class LossError(ArithmeticError):
    pass


def _clamped_bce(p: Tensor, t) -> Tensor:
    p = ad.clip(p, EPS, 1.0 - EPS)
    t = np.asarray(t, dtype=np.float64)
    return -(ad.log(p) * t + ad.log(1.0 - p) * (1.0 - t))


def lqe_loss(pred_iou: Tensor, target_iou, n_pos: int) -> Tensor:
    """Mean BCE between predicted and target IoU over the positives."""
    if n_pos == 0 or pred_iou.size == 0:
        return Tensor(0.0)
    return ad.sum_(_clamped_bce(pred_iou, target_iou)) * (1.0 / n_pos)


def qfl(ranking: Tensor, soft_targets, beta: float = 2.0, n_pos: int = 1) -> Tensor:
    """Quality focal loss ``|y - s|^beta * BCE(s, y)`` summed over every
    anchor and class, divided by ``max(n_pos, 1)``."""
    y = np.asarray(soft_targets, dtype=np.float64)
    if y.shape != ranking.shape:
        raise ad.ShapeError(f"qfl: targets {y.shape} vs ranking {ranking.shape}")
    ce = _clamped_bce(ranking, y)
    if beta == 0:
        per = ce
    else:
        d = ranking - y
        mod = d * d if beta == 2 else ad.power(ad.abs_(d), beta)
        per = mod * ce
    return ad.sum_(per) * (1.0 / max(n_pos, 1))


def soft_class_targets(labels, quality, num_classes: int) -> np.ndarray:
    """``[..., M]`` targets: the quality value at the labeled class of positives, 0 elsewhere."""
    labels = np.asarray(labels)
    y = np.zeros(labels.shape + (num_classes,))
    pos = labels != BACKGROUND
    y[pos, labels[pos]] = np.asarray(quality)[pos]
    return y


def giou_loss(pred_boxes: Tensor, target_boxes, n_pos: int) -> Tensor:
    """Mean ``1 - GIoU`` over positives; ``pred_boxes [P, 4]`` is differentiable."""
    if n_pos == 0 or pred_boxes.shape[0] == 0:
        return Tensor(0.0)
    t = np.asarray(target_boxes, dtype=np.float64)
    px1, py1, px2, py2 = (pred_boxes[:, i] for i in range(4))
    tx1, ty1, tx2, ty2 = (t[:, i] for i in range(4))
    area_p = (px2 - px1) * (py2 - py1)
    area_t = (tx2 - tx1) * (ty2 - ty1)
    iw = ad.clip(ad.minimum(px2, tx2) - ad.maximum(px1, tx1), 0.0, None)
    ih = ad.clip(ad.minimum(py2, ty2) - ad.maximum(py1, ty1), 0.0, None)
    inter = iw * ih
    union = area_p + area_t - inter
    enclose = (ad.maximum(px2, tx2) - ad.minimum(px1, tx1)) * (ad.maximum(py2, ty2) - ad.minimum(py1, ty1))
    g = inter / union - (enclose - union) / enclose
    return ad.sum_(1.0 - g) * (1.0 / n_pos)


@dataclass
class LossReport:
    L_cls: float
    L_reg: float
    L_lqe: float
    L_total: float
    N_pos: int = 0
    N_total: int = 0
    total: Tensor | None = field(default=None, repr=False, compare=False)

    def row(self, iteration: int) -> list:
        return [iteration, self.L_cls, self.L_reg, self.L_lqe, self.L_total, self.N_pos]


def total_loss(cls, reg, lqe, weights=(1.0, 1.0, 1.0), n_pos: int = 0, n_total: int = 0) -> LossReport:
    """Weighted sum of the three components; aborts on a non-finite one."""
    parts = {"L_cls": ad.as_tensor(cls), "L_reg": ad.as_tensor(reg), "L_lqe": ad.as_tensor(lqe)}
    for name, t in parts.items():
        v = float(t.data)
        if not math.isfinite(v):
            raise LossError(f"non-finite {name} = {v}")
    wc, wr, wl = (float(w) for w in weights)
    total = parts["L_cls"] * wc + parts["L_reg"] * wr + parts["L_lqe"] * wl
    return LossReport(float(parts["L_cls"].data), float(parts["L_reg"].data),
                      float(parts["L_lqe"].data), float(total.data), n_pos, n_total, total)


def detection_losses(cls_logits: Tensor, deltas: Tensor, iou_logits: Tensor | None,
                     anchor_boxes: np.ndarray, targets, alpha: float, beta: float = 2.0,
                     weights=(1.0, 1.0, 1.0), fusion_mode: str = "through_both") -> LossReport:
    """All losses for a batch of flattened predictions.

    ``cls_logits [N, A, M]``, ``deltas [N, A, 4]``, ``iou_logits [N, A, 1]``
    (or None for the two-branch baseline); ``targets`` holds one
    :class:`~clqlab.assignment.Targets` per image. Normalizers count
    positives over the whole batch.
    """
    n, a, m = cls_logits.shape
    labels = np.stack([t.labels for t in targets])
    quality = np.stack([t.qe for t in targets])
    pos = labels != BACKGROUND
    n_pos = int(pos.sum())
    ranking = fuse_ranking_scores(cls_logits, iou_logits, alpha, fusion_mode)
    l_cls = qfl(ranking, soft_class_targets(labels, quality, m), beta, n_pos)
    if n_pos:
        bi, ai = np.nonzero(pos)
        pred = decode_tensor(anchor_boxes[ai], deltas[bi, ai])
        gt_boxes = np.stack([t.boxes for t in targets])[bi, ai]
        l_reg = giou_loss(pred, gt_boxes, n_pos)
        if iou_logits is not None:
            iou_t = np.stack([t.iou for t in targets])[bi, ai]
            l_lqe = lqe_loss(ad.sigmoid(iou_logits[bi, ai, 0]), iou_t, n_pos)
        else:
            l_lqe = Tensor(0.0)
    else:
        l_reg = Tensor(0.0)
        l_lqe = Tensor(0.0)
    return total_loss(l_cls, l_reg, l_lqe, weights, n_pos, n * a)
