import json
from pathlib import Path

import numpy as np
import pytest

from clqlab.assignment import GroundTruth
from clqlab.geometry import Box, generate_anchors
from clqlab.oracles import ap_reference, nms_reference
from clqlab.postprocess import (
    COCO_IOU_THRESHOLDS,
    Detection,
    evaluate_ap,
    interpolated_precision,
    nms,
    read_records,
    score_iou_correlation,
    select_detections,
    spearman,
    true_ious,
    write_records,
)

FIXTURES = Path(__file__).parent / "fixtures"


def D(x1, y1, x2, y2, c, s):
    return Detection(Box(x1, y1, x2, y2), c, s)


def G(x1, y1, x2, y2, c=0):
    return GroundTruth(Box(x1, y1, x2, y2), c)


def test_nms_basic_suppression_and_classwise():
    dets = [D(0, 0, 10, 10, 0, 0.9), D(1, 1, 11, 11, 0, 0.8), D(1, 1, 11, 11, 1, 0.7),
            D(30, 30, 40, 40, 0, 0.6), D(0, 0, 10, 10, 0, 0.01)]
    out = nms(dets, 0.5, 0.05)
    assert out == [dets[0], dets[2], dets[3]]


def test_nms_ties_keep_input_order():
    dets = [D(0, 0, 10, 10, 0, 0.5), D(0, 0, 10, 10, 0, 0.5)]
    assert nms(dets, 0.5, 0.0) == [dets[0]]


def test_nms_max_per_image():
    dets = [D(i * 20, 0, i * 20 + 10, 10, 0, 0.9 - i * 0.01) for i in range(10)]
    assert len(nms(dets, 0.5, 0.0, 3)) == 3


def test_nms_matches_reference(rng):
    for _ in range(30):
        n = int(rng.integers(0, 40))
        xy = rng.uniform(0, 40, (n, 2))
        wh = rng.uniform(2, 20, (n, 2))
        dets = [Detection(Box(*xy[i], *(xy[i] + wh[i])), int(rng.integers(3)),
                          float(np.round(rng.uniform(), 2))) for i in range(n)]
        got = nms(dets, 0.5, 0.1, 100)
        ref = [dets[i] for i in nms_reference(dets, 0.5, 0.1, 100)]
        assert got == ref


def test_nms_threshold_validation():
    with pytest.raises(ValueError):
        nms([], 1.0)


def test_detection_score_range():
    with pytest.raises(ValueError):
        D(0, 0, 1, 1, 0, 1.5)


def test_ap_perfect_and_empty():
    gts = [[G(0, 0, 10, 10), G(20, 20, 30, 30, 1)]]
    dets = [[D(0, 0, 10, 10, 0, 0.9), D(20, 20, 30, 30, 1, 0.8)]]
    r = evaluate_ap(dets, gts)
    assert r.AP == 1.0 and r.AP50 == 1.0 and r.AP75 == 1.0
    assert evaluate_ap([[]], gts).AP == 0.0
    assert evaluate_ap([[]], [[]]).AP == 0.0


def test_ap_hand_computed():
    # FP first then TP: precision 1/2 at every recall level
    gts = [[G(0, 0, 10, 10)]]
    dets = [[D(50, 50, 60, 60, 0, 0.9), D(0, 0, 10, 10, 0, 0.8)]]
    assert evaluate_ap(dets, gts).AP == pytest.approx(0.5)
    # TP, FP, TP over two ground truths
    gts = [[G(0, 0, 10, 10), G(20, 20, 30, 30)]]
    dets = [[D(0, 0, 10, 10, 0, 0.9), D(50, 50, 60, 60, 0, 0.8), D(20, 20, 30, 30, 0, 0.7)]]
    assert evaluate_ap(dets, gts).AP == pytest.approx((51 + 50 * 2 / 3) / 101)


def test_ap_duplicate_is_false_positive():
    gts = [[G(0, 0, 10, 10)]]
    dets = [[D(0, 0, 10, 10, 0, 0.9), D(0, 0, 10, 10, 0, 0.8)]]
    r = evaluate_ap(dets, gts)
    assert r.AP == pytest.approx(1.0)  # interpolation hides the trailing FP
    assert r.recall[0] == 1.0


def test_ap_threshold_sensitivity():
    # IoU 0.64 counts at 0.50, 0.55 and 0.60
    gts = [[G(0, 0, 10, 10)]]
    dets = [[D(0, 0, 8, 8, 0, 0.9)]]
    r = evaluate_ap(dets, gts)
    assert r.AP50 == 1.0 and r.AP75 == 0.0
    assert r.AP == pytest.approx(0.3)


def test_interpolated_precision_monotone():
    tp = np.array([True, False, True, True, False, True])
    q, rec = interpolated_precision(tp, 5)
    assert np.all(np.diff(q) <= 0)
    assert rec == pytest.approx(0.8)
    assert np.all(q[81:] == 0)


@pytest.mark.parametrize("name", [f"ap_scene{k}" for k in range(6)])
def test_ap_fixture_scenes(name):
    expected = json.loads((FIXTURES / "ap_expected.json").read_text())[name]
    n = expected["n_images"]
    dets = read_records(FIXTURES / f"{name}.dets", n)
    gts = read_records(FIXTURES / f"{name}.gts", n, as_gt=True)
    r = evaluate_ap(dets, gts)
    assert abs(r.AP - expected["AP"]) < 1e-9
    per_t = [float(np.mean(v)) for v in np.array(list(r.per_class.values())).T]
    assert np.allclose(per_t, expected["per_threshold"], atol=1e-9)


def _jitter(rng, box, sigma):
    b = np.array(box.as_tuple()) + rng.normal(0, sigma, 4)
    b[2:] = np.maximum(b[2:], b[:2] + 0.5)
    return Box(*b)


def test_ap_matches_reference_random(rng):
    for _ in range(10):
        gts, dets = [], []
        for _ in range(3):
            g = []
            for _ in range(rng.integers(0, 4)):
                x, y = rng.uniform(0, 30, 2)
                w, h = rng.uniform(4, 15, 2)
                g.append(G(x, y, x + w, y + h, int(rng.integers(2))))
            d = [Detection(_jitter(rng, t.box, 1.5), t.class_id, float(rng.uniform())) for t in g for _ in range(2)]
            gts.append(g)
            dets.append(d)
        ap, _ = ap_reference(dets, gts, COCO_IOU_THRESHOLDS)
        assert abs(evaluate_ap(dets, gts).AP - ap) < 1e-9


def test_records_round_trip(tmp_path):
    dets = [[D(0.1234567, 1, 5, 6, 2, 0.5)], [], [D(3, 3, 9, 9, 0, 0.25)]]
    write_records(tmp_path / "d.txt", dets)
    back = read_records(tmp_path / "d.txt", 3)
    assert len(back) == 3 and back[1] == []
    assert back[0][0].box.x1 == pytest.approx(0.123457)
    assert back[2][0].score == 0.25


def test_true_ious_same_class_only():
    gts = [[G(0, 0, 10, 10, 0)]]
    dets = [[D(0, 0, 10, 10, 0, 0.9), D(0, 0, 10, 10, 1, 0.8)]]
    s, i = true_ious(dets, gts)
    assert i.tolist() == [1.0, 0.0]


def test_spearman_needs_three():
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2])
    assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    gts = [[G(0, 0, 10, 10)]]
    dets = [[D(0, 0, 10, 10, 0, 0.9), D(0, 0, 8, 10, 0, 0.5), D(0, 0, 5, 10, 0, 0.2)]]
    assert score_iou_correlation(dets, gts) == pytest.approx(1.0)


def test_select_detections_end_to_end():
    g = generate_anchors(32, [8, 16], 2.0)
    a = len(g)
    scores = np.zeros((a, 2))
    boxes = g.boxes.copy()
    scores[3, 1] = 0.9
    scores[19, 0] = 0.04  # below threshold
    dets = select_detections(scores, boxes, g.level_slices, 0.05, 0.6)
    assert len(dets) == 1
    assert dets[0].class_id == 1 and dets[0].box == Box.from_array(boxes[3])
