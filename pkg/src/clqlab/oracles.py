"""Slow, loop-based reference implementations.

These are written independently of the vectorized paths they check: plain
Python loops over the scalar :mod:`clqlab.geometry` helpers, no shared
kernels. ``clq oracle-suite`` and the test suite compare against them.
"""

from __future__ import annotations

import math

from clqlab.geometry import iou


def nms_reference(dets, iou_threshold, score_threshold=0.0, max_per_image=None):
    """O(n^2) greedy NMS. Returns indices into ``dets`` in output order."""
    alive = [i for i, d in enumerate(dets) if d.score >= score_threshold]
    kept = []
    while alive:
        # highest score, lowest index on ties
        best = alive[0]
        for i in alive[1:]:
            if dets[i].score > dets[best].score:
                best = i
        kept.append(best)
        alive = [i for i in alive if i != best and not (
            dets[i].class_id == dets[best].class_id
            and iou(dets[i].box, dets[best].box) > iou_threshold)]
    if max_per_image is not None:
        kept = kept[:max_per_image]
    return kept


def ap_reference(dets_per_image, gts_per_image, thresholds):
    """Brute-force COCO AP: explicit matching, then for every recall level the
    best precision over all score cut-offs reaching it."""
    classes = sorted({g.class_id for gts in gts_per_image for g in gts})
    if not classes:
        return 0.0, []
    per_t = []
    for thr in thresholds:
        class_aps = []
        for c in classes:
            pool = []
            for img, dets in enumerate(dets_per_image):
                for j, d in enumerate(dets):
                    if d.class_id == c:
                        pool.append((img, j, d))
            # descending score; ties keep (image, position) order
            pool.sort(key=lambda t: -t[2].score)
            n_gt = sum(1 for gts in gts_per_image for g in gts if g.class_id == c)
            used = set()
            flags = []
            for img, _, d in pool:
                best_g, best_iou = None, -1.0
                for gi, g in enumerate(gts_per_image[img]):
                    if g.class_id != c or (img, gi) in used:
                        continue
                    v = iou(d.box, g.box)
                    if v > best_iou:
                        best_g, best_iou = gi, v
                if best_g is not None and best_iou >= thr:
                    used.add((img, best_g))
                    flags.append(True)
                else:
                    flags.append(False)
            curve = []
            tp = 0
            for k, f in enumerate(flags):
                tp += f
                curve.append((tp / n_gt, tp / (k + 1)))
            total = 0.0
            for r in range(101):
                level = r / 100
                best = 0.0
                for rec, prec in curve:
                    if rec >= level and prec > best:
                        best = prec
                total += best
            class_aps.append(total / 101)
        per_t.append(sum(class_aps) / len(class_aps))
    return sum(per_t) / len(per_t), per_t


def atss_reference(anchor_boxes, level_sizes, gt_boxes, top_k):
    """Naive ATSS over plain tuples. Returns the assigned gt index per anchor (-1 = none)."""
    n = len(anchor_boxes)
    centers = [((a.x1 + a.x2) / 2, (a.y1 + a.y2) / 2) for a in anchor_boxes]
    starts = []
    s = 0
    for size in level_sizes:
        starts.append((s, s + size))
        s += size
    assigned = [-1] * n
    best = [-math.inf] * n
    for gi, g in enumerate(gt_boxes):
        gx, gy = (g.x1 + g.x2) / 2, (g.y1 + g.y2) / 2
        cand = []
        for lo, hi in starts:
            scored = sorted(range(lo, hi), key=lambda a: (
                math.sqrt((centers[a][0] - gx) ** 2 + (centers[a][1] - gy) ** 2), a))
            cand.extend(scored[:top_k])
        vals = [iou(anchor_boxes[a], g) for a in cand]
        mean = sum(vals) / len(vals)
        if len(vals) > 1:
            std = math.sqrt(sum((v - mean) ** 2 for v in vals) / (len(vals) - 1))
        else:
            std = 0.0
        thr = mean + std
        for a, v in zip(cand, vals):
            cx, cy = centers[a]
            inside = g.x1 < cx < g.x2 and g.y1 < cy < g.y2
            if v >= thr and inside and v > best[a]:
                best[a] = v
                assigned[a] = gi
    return assigned
