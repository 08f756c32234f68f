"""ATSS label assignment and per-anchor training targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from clqlab.geometry import AnchorGrid, Box, box_iou

BACKGROUND = -1


@dataclass(frozen=True)
class GroundTruth:
    box: Box
    class_id: int

    def validate(self, num_classes: int | None = None):
        if self.box.area <= 0:
            raise ValueError(f"ground truth box {self.box.as_tuple()} has zero area")
        if self.class_id < 0 or (num_classes is not None and self.class_id >= num_classes):
            raise ValueError(f"class id {self.class_id} outside [0, {num_classes})")


def gt_arrays(gts) -> tuple[np.ndarray, np.ndarray]:
    if not gts:
        return np.zeros((0, 4)), np.zeros(0, dtype=np.int64)
    boxes = np.array([g.box.as_tuple() for g in gts], dtype=np.float64)
    labels = np.array([g.class_id for g in gts], dtype=np.int64)
    return boxes, labels


@dataclass
class AssignmentResult:
    assigned_gt: np.ndarray  # [A] int, -1 for background
    pos_mask: np.ndarray  # [A] bool
    max_iou: np.ndarray  # [A] anchor/gt IoU of the assignment, 0 for background

    @property
    def n_pos(self) -> int:
        return int(self.pos_mask.sum())

    @property
    def n_total(self) -> int:
        return int(self.pos_mask.size)

    @property
    def pos_indices(self) -> np.ndarray:
        return np.flatnonzero(self.pos_mask)


def atss_assign(anchors: AnchorGrid, gts, top_k: int = 9) -> AssignmentResult:
    """Adaptive training sample selection.

    For each ground truth, the ``top_k`` anchors per level whose centers are
    nearest the box center become candidates; the positive threshold is the
    mean plus (sample) standard deviation of the candidate IoUs, and a
    candidate must also have its center strictly inside the box. An anchor
    claimed twice goes to the higher-IoU ground truth, lower index on ties.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    n_anchor = len(anchors)
    gt_boxes, _ = gt_arrays(gts)
    n_gt = gt_boxes.shape[0]
    assigned = np.full(n_anchor, -1, dtype=np.int64)
    best = np.full(n_anchor, -np.inf)
    if n_gt == 0:
        return AssignmentResult(assigned, np.zeros(n_anchor, dtype=bool), np.zeros(n_anchor))

    ious = box_iou(anchors.boxes, gt_boxes)  # [A, G]
    centers = anchors.centers
    gt_centers = 0.5 * (gt_boxes[:, :2] + gt_boxes[:, 2:])
    dist = np.sqrt(((centers[:, None, :] - gt_centers[None, :, :]) ** 2).sum(-1))  # [A, G]

    cand_rows = []
    for sl in anchors.level_slices:
        d = dist[sl]
        k = min(top_k, d.shape[0])
        order = np.argsort(d, axis=0, kind="stable")[:k]  # [k, G]
        cand_rows.append(order + sl.start)
    cand = np.concatenate(cand_rows, axis=0)  # [K, G]

    cols = np.arange(n_gt)[None, :]
    cand_iou = ious[cand, cols]
    ddof = 1 if cand.shape[0] > 1 else 0
    thresh = cand_iou.mean(axis=0) + cand_iou.std(axis=0, ddof=ddof)

    cc = centers[cand]  # [K, G, 2]
    inside = ((cc[..., 0] > gt_boxes[None, :, 0]) & (cc[..., 0] < gt_boxes[None, :, 2])
              & (cc[..., 1] > gt_boxes[None, :, 1]) & (cc[..., 1] < gt_boxes[None, :, 3]))
    is_pos = (cand_iou >= thresh[None, :]) & inside

    for g in range(n_gt):
        for a in cand[is_pos[:, g], g]:
            if ious[a, g] > best[a]:
                best[a] = ious[a, g]
                assigned[a] = g
    pos = assigned >= 0
    return AssignmentResult(assigned, pos, np.where(pos, best, 0.0))


@dataclass
class Targets:
    labels: np.ndarray  # [A] int, BACKGROUND for negatives
    boxes: np.ndarray  # [A, 4]; rows of negatives are zero
    iou: np.ndarray  # [A], meaningful on positives only
    qe: np.ndarray  # [A], 0 on negatives
    pos_mask: np.ndarray

    @property
    def n_pos(self) -> int:
        return int(self.pos_mask.sum())


def build_targets(assignment: AssignmentResult, gts, decoded_boxes, alpha: float,
                  anchors=None, iou_target_source: str = "decoded",
                  qe_target_mode: str = "power") -> Targets:
    """Classification, box, IoU and quality targets for one image.

    The IoU target is measured between the assigned ground truth and either
    the decoded prediction or the preset anchor. The quality target is
    ``iou ** alpha`` (``"power"``), the raw IoU (``"iou"``) or 1 (``"hard"``,
    one-hot labels).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    decoded_boxes = np.asarray(decoded_boxes, dtype=np.float64)
    n = assignment.n_total
    if decoded_boxes.shape != (n, 4):
        raise ValueError(f"decoded boxes {decoded_boxes.shape} not aligned with {n} anchors")
    gt_boxes, gt_labels = gt_arrays(gts)
    labels = np.full(n, BACKGROUND, dtype=np.int64)
    boxes = np.zeros((n, 4))
    iou_t = np.zeros(n)
    qe = np.zeros(n)
    pos = assignment.pos_indices
    if pos.size:
        g = assignment.assigned_gt[pos]
        labels[pos] = gt_labels[g]
        boxes[pos] = gt_boxes[g]
        if iou_target_source == "decoded":
            src = decoded_boxes[pos]
        elif iou_target_source == "anchor":
            if anchors is None:
                raise ValueError("anchor-based IoU targets need the anchor boxes")
            src = np.asarray(anchors, dtype=np.float64)[pos]
        else:
            raise ValueError(f"unknown iou_target_source {iou_target_source!r}")
        iou_t[pos] = _aligned_iou(src, gt_boxes[g])
        if qe_target_mode == "power":
            qe[pos] = iou_t[pos] ** alpha
        elif qe_target_mode == "iou":
            qe[pos] = iou_t[pos]
        elif qe_target_mode == "hard":
            qe[pos] = 1.0
        else:
            raise ValueError(f"unknown qe_target_mode {qe_target_mode!r}")
    return Targets(labels, boxes, iou_t, qe, assignment.pos_mask.copy())


def _aligned_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    iw = np.clip(np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1]), 0, None)
    inter = iw * ih
    union = ((a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
             + (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1]) - inter)
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
