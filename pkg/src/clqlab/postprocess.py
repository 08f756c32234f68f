"""Inference-time selection and COCO-style evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from clqlab import kernels
from clqlab.assignment import GroundTruth, gt_arrays
from clqlab.geometry import Box, box_iou

COCO_IOU_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_POINTS = np.arange(101) / 100.0


@dataclass(frozen=True)
class Detection:
    box: Box
    class_id: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")


@dataclass
class APReport:
    AP: float
    AP50: float
    AP75: float
    iou_thresholds: np.ndarray
    precision: np.ndarray  # [T, 101] interpolated precision, mean over classes
    recall: np.ndarray  # [T] final recall, mean over classes
    per_class: dict  # class_id -> [T] AP


def _order(scores) -> np.ndarray:
    """Descending score, ties to lower original index."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def nms(dets, iou_threshold: float = 0.6, score_threshold: float = 0.05,
        max_per_image: int = 100) -> list[Detection]:
    """Class-wise greedy NMS; output sorted by score (ties by input order)."""
    if not 0 < iou_threshold < 1:
        raise ValueError("iou_threshold must lie in (0, 1)")
    dets = list(dets)
    if not dets:
        return []
    scores = np.array([d.score for d in dets])
    classes = np.array([d.class_id for d in dets])
    boxes = np.array([d.box.as_tuple() for d in dets], dtype=np.float64)
    keep_idx = nms_arrays(boxes, scores, classes, iou_threshold, score_threshold, max_per_image)
    return [dets[i] for i in keep_idx]


def nms_arrays(boxes, scores, classes, iou_threshold=0.6, score_threshold=0.05,
               max_per_image=100) -> np.ndarray:
    """Array form of :func:`nms`; returns kept indices in output order."""
    scores = np.asarray(scores, dtype=np.float64)
    classes = np.asarray(classes)
    cand = np.flatnonzero(scores >= score_threshold)
    kept = []
    for c in np.unique(classes[cand]):
        idx = cand[classes[cand] == c]
        idx = idx[_order(scores[idx])]
        mask = kernels.nms_sorted(boxes[idx], iou_threshold)
        kept.append(idx[mask])
    if not kept:
        return np.zeros(0, dtype=np.int64)
    kept = np.sort(np.concatenate(kept))
    kept = kept[_order(scores[kept])]
    return kept[:max_per_image]


def select_detections(scores: np.ndarray, boxes: np.ndarray, level_slices, score_threshold=0.05,
                      iou_threshold=0.6, pre_nms_top=1000, max_per_image=100) -> list[Detection]:
    """Ranking-score map ``[A, M]`` and decoded boxes ``[A, 4]`` -> final detections."""
    m = scores.shape[1]
    cand_anchor, cand_class, cand_score = [], [], []
    for sl in level_slices:
        s = scores[sl].reshape(-1)
        flat = np.flatnonzero(s >= score_threshold)
        if flat.size > pre_nms_top:
            flat = flat[_order(s[flat])[:pre_nms_top]]
            flat.sort()
        cand_anchor.append(flat // m + sl.start)
        cand_class.append(flat % m)
        cand_score.append(s[flat])
    a = np.concatenate(cand_anchor)
    c = np.concatenate(cand_class)
    s = np.concatenate(cand_score)
    b = boxes[a]
    keep = nms_arrays(b, s, c, iou_threshold, score_threshold, max_per_image)
    return [Detection(Box.from_array(b[i]), int(c[i]), float(min(1.0, s[i]))) for i in keep]


def _det_arrays(dets):
    if not dets:
        return np.zeros((0, 4)), np.zeros(0, dtype=np.int64), np.zeros(0)
    return (np.array([d.box.as_tuple() for d in dets], dtype=np.float64),
            np.array([d.class_id for d in dets], dtype=np.int64),
            np.array([d.score for d in dets], dtype=np.float64))


def _match(order_img, order_det, ious_by_img, n_gt_by_img, thr):
    """Greedy matching of score-sorted detections; returns a TP flag per detection."""
    matched = {img: np.zeros(n, dtype=bool) for img, n in n_gt_by_img.items()}
    tp = np.zeros(len(order_img), dtype=bool)
    for k, (img, j) in enumerate(zip(order_img, order_det)):
        n_gt = n_gt_by_img.get(img, 0)
        if n_gt == 0:
            continue
        row = np.where(matched[img], -1.0, ious_by_img[img][j])
        g = int(np.argmax(row))
        if row[g] >= thr:
            matched[img][g] = True
            tp[k] = True
    return tp


def interpolated_precision(tp: np.ndarray, n_gt: int) -> tuple[np.ndarray, float]:
    """101-point interpolated precision and final recall from TP flags in score order."""
    if tp.size == 0 or n_gt == 0:
        return np.zeros(RECALL_POINTS.size), 0.0
    tps = np.cumsum(tp)
    fps = np.cumsum(~tp)
    recall = tps / n_gt
    precision = tps / (tps + fps)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.zeros(RECALL_POINTS.size)
    ok = idx < precision.size
    q[ok] = precision[idx[ok]]
    return q, float(recall[-1])


def evaluate_ap(dets_per_image, gts_per_image, iou_thresholds=COCO_IOU_THRESHOLDS) -> APReport:
    """COCO-style AP averaged over IoU thresholds and over classes present in the ground truth."""
    thresholds = np.asarray(iou_thresholds, dtype=np.float64)
    if len(dets_per_image) != len(gts_per_image):
        raise ValueError("detections and ground truths cover different image counts")
    det_arr = [_det_arrays(d) for d in dets_per_image]
    gt_arr = [gt_arrays(g) for g in gts_per_image]
    classes = sorted({int(c) for _, labels in gt_arr for c in labels})
    T = thresholds.size
    if not classes:
        return APReport(0.0, 0.0, 0.0, thresholds, np.zeros((T, RECALL_POINTS.size)),
                        np.zeros(T), {})
    prec = np.zeros((len(classes), T, RECALL_POINTS.size))
    rec = np.zeros((len(classes), T))
    for ci, c in enumerate(classes):
        imgs, dets_idx, scores, ious_by_img, n_gt_by_img = [], [], [], {}, {}
        n_gt = 0
        for i, ((db, dl, ds), (gb, gl)) in enumerate(zip(det_arr, gt_arr)):
            gsel = gb[gl == c]
            dsel = np.flatnonzero(dl == c)
            n_gt += gsel.shape[0]
            n_gt_by_img[i] = gsel.shape[0]
            if dsel.size:
                ious_by_img[i] = box_iou(db[dsel], gsel) if gsel.shape[0] else np.zeros((dsel.size, 0))
                imgs.extend([i] * dsel.size)
                dets_idx.extend(range(dsel.size))
                scores.extend(ds[dsel])
        order = _order(scores)
        oi = [imgs[k] for k in order]
        od = [dets_idx[k] for k in order]
        for ti, thr in enumerate(thresholds):
            tp = _match(oi, od, ious_by_img, n_gt_by_img, thr)
            prec[ci, ti], rec[ci, ti] = interpolated_precision(tp, n_gt)
    ap_ct = prec.mean(axis=2)  # [classes, T]
    ap_t = ap_ct.mean(axis=0)

    def at(v):
        hit = np.flatnonzero(np.isclose(thresholds, v))
        return float(ap_t[hit[0]]) if hit.size else float("nan")

    return APReport(float(ap_t.mean()), at(0.5), at(0.75), thresholds, prec.mean(axis=0),
                    rec.mean(axis=0), {c: ap_ct[i] for i, c in enumerate(classes)})


def true_ious(dets_per_image, gts_per_image) -> tuple[np.ndarray, np.ndarray]:
    """Scores and best same-class IoU against ground truth for every detection."""
    scores, ious = [], []
    for dets, gts in zip(dets_per_image, gts_per_image):
        db, dl, ds = _det_arrays(dets)
        gb, gl = gt_arrays(gts)
        if db.shape[0] == 0:
            continue
        best = np.zeros(db.shape[0])
        if gb.shape[0]:
            m = box_iou(db, gb)
            m[dl[:, None] != gl[None, :]] = 0.0
            best = m.max(axis=1)
        scores.append(ds)
        ious.append(best)
    if not scores:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(scores), np.concatenate(ious)


def spearman(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 3:
        raise ValueError(f"rank correlation needs at least 3 detections, got {x.size}")
    return float(stats.spearmanr(x, y).statistic)


def score_iou_correlation(dets_per_image, gts_per_image) -> float:
    """Spearman correlation between detection score and its true IoU."""
    s, i = true_ious(dets_per_image, gts_per_image)
    return spearman(s, i)


# -- line-delimited fixture format --------------------------------------

def format_record(image_id: int, class_id: int, score: float, box) -> str:
    x1, y1, x2, y2 = box.as_tuple() if isinstance(box, Box) else box
    return f"{image_id} {class_id} {score:.6f} {x1:.6f} {y1:.6f} {x2:.6f} {y2:.6f}"


def write_records(path, dets_per_image=None, gts_per_image=None):
    """Write detections (or ground truths, score 1) as ``image_id class_id score x1 y1 x2 y2``."""
    lines = []
    if dets_per_image is not None:
        for i, dets in enumerate(dets_per_image):
            lines += [format_record(i, d.class_id, d.score, d.box) for d in dets]
    if gts_per_image is not None:
        for i, gts in enumerate(gts_per_image):
            lines += [format_record(i, g.class_id, 1.0, g.box) for g in gts]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def read_records(path, n_images: int | None = None, as_gt: bool = False):
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                f = line.split()
                rows.append((int(f[0]), int(f[1]), float(f[2]), tuple(float(v) for v in f[3:7])))
    n = n_images if n_images is not None else (max((r[0] for r in rows), default=-1) + 1)
    out = [[] for _ in range(n)]
    for img, c, s, b in rows:
        box = Box(*b)
        out[img].append(GroundTruth(box, c) if as_gt else Detection(box, c, s))
    return out
