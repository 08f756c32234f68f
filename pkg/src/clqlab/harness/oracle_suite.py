"""Randomized equivalence checks of the fast paths against the loop references."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from clqlab.assignment import GroundTruth, atss_assign
from clqlab.geometry import Box, generate_anchors
from clqlab.oracles import ap_reference, atss_reference, nms_reference
from clqlab.postprocess import COCO_IOU_THRESHOLDS, Detection, evaluate_ap, nms

AP_TOLERANCE = 1e-9


@dataclass
class SuiteResult:
    name: str
    cases: int
    failures: int
    worst: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.failures == 0


def _box(rng, lo=0.0, hi=48.0, min_side=2.0, max_side=24.0) -> Box:
    x, y = rng.uniform(lo, hi, 2)
    w, h = rng.uniform(min_side, max_side, 2)
    return Box(x, y, x + w, y + h)


def _jitter(rng, box: Box, sigma: float) -> Box:
    b = np.array(box.as_tuple()) + rng.normal(0, sigma, 4)
    b[2:] = np.maximum(b[2:], b[:2] + 0.5)
    return Box(*b)


def _score(rng):
    # coarse rounding forces score ties
    return float(np.round(rng.uniform(0.0, 1.0), 2))


def random_nms_set(rng, max_boxes=50):
    n = int(rng.integers(0, max_boxes + 1))
    seeds = [_box(rng) for _ in range(max(1, n // 4))]
    dets = []
    for _ in range(n):
        base = seeds[int(rng.integers(len(seeds)))]
        dets.append(Detection(_jitter(rng, base, 3.0), int(rng.integers(3)), _score(rng)))
    return dets


def random_ap_scene(rng):
    n_img = int(rng.integers(1, 4))
    dets, gts = [], []
    for _ in range(n_img):
        g = [GroundTruth(_box(rng), int(rng.integers(3))) for _ in range(rng.integers(0, 4))]
        d = []
        for t in g:
            for _ in range(rng.integers(0, 3)):
                d.append(Detection(_jitter(rng, t.box, 2.0), t.class_id, _score(rng)))
        d += [Detection(_box(rng), int(rng.integers(3)), _score(rng)) for _ in range(rng.integers(0, 3))]
        order = rng.permutation(len(d))
        dets.append([d[i] for i in order])
        gts.append(g)
    return dets, gts


def random_gts(rng, size=64):
    n = int(rng.integers(1, 7))
    out = []
    for _ in range(n):
        w, h = rng.uniform(4, 48, 2)
        x, y = rng.uniform(0, size - w), rng.uniform(0, size - h)
        if rng.uniform() < 0.2:  # snap to the grid to hit edge cases
            x, y, w, h = (float(np.round(v / 4) * 4) or 4.0 for v in (x, y, w, h))
        out.append(GroundTruth(Box(x, y, x + w, y + h), int(rng.integers(4))))
    return out


def check_nms(n_sets=200, seed=0) -> SuiteResult:
    rng = np.random.default_rng([seed, 1])
    start = time.perf_counter()
    fails = 0
    for _ in range(n_sets):
        dets = random_nms_set(rng)
        thr = float(rng.choice([0.3, 0.5, 0.6, 0.7]))
        got = nms(dets, thr, score_threshold=0.0, max_per_image=len(dets) + 1)
        ref = [dets[i] for i in nms_reference(dets, thr, 0.0)]
        fails += got != ref
    return SuiteResult("nms", n_sets, fails, float(fails), time.perf_counter() - start)


def check_ap(n_scenes=200, seed=0) -> SuiteResult:
    rng = np.random.default_rng([seed, 2])
    start = time.perf_counter()
    fails, worst = 0, 0.0
    for _ in range(n_scenes):
        dets, gts = random_ap_scene(rng)
        ref, _ = ap_reference(dets, gts, COCO_IOU_THRESHOLDS)
        err = abs(evaluate_ap(dets, gts).AP - ref)
        worst = max(worst, err)
        fails += err > AP_TOLERANCE
    return SuiteResult("ap", n_scenes, fails, worst, time.perf_counter() - start)


def check_atss(n_scenes=500, seed=0, top_k=9) -> SuiteResult:
    rng = np.random.default_rng([seed, 3])
    start = time.perf_counter()
    grid = generate_anchors(64, [8, 16], 4.0)
    anchor_boxes = [Box.from_array(b) for b in grid.boxes]
    sizes = [lv.count for lv in grid.levels]
    fails = 0
    for _ in range(n_scenes):
        gts = random_gts(rng)
        got = atss_assign(grid, gts, top_k).assigned_gt.tolist()
        fails += got != atss_reference(anchor_boxes, sizes, [g.box for g in gts], top_k)
    return SuiteResult("atss", n_scenes, fails, float(fails), time.perf_counter() - start)


def run_suite(n_nms=200, n_ap=200, n_atss=500, seed=0) -> list[SuiteResult]:
    return [check_nms(n_nms, seed), check_ap(n_ap, seed), check_atss(n_atss, seed)]
