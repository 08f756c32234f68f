import numpy as np
import pytest

from clqlab.assignment import BACKGROUND, GroundTruth, atss_assign, build_targets
from clqlab.geometry import Box, generate_anchors, iou
from clqlab.oracles import atss_reference


def random_gts(rng, n, size=64):
    out = []
    for _ in range(n):
        w, h = rng.uniform(6, 40, 2)
        x, y = rng.uniform(0, size - w), rng.uniform(0, size - h)
        out.append(GroundTruth(Box(x, y, x + w, y + h), int(rng.integers(4))))
    return out


def test_no_gt_all_background():
    g = generate_anchors(64, [8, 16], 4.0)
    res = atss_assign(g, [])
    assert res.n_pos == 0 and res.n_total == 80


def test_matches_reference_on_random_scenes():
    rng = np.random.default_rng(7)
    g = generate_anchors(64, [8, 16], 4.0)
    anchor_boxes = [Box.from_array(b) for b in g.boxes]
    sizes = [lv.count for lv in g.levels]
    for _ in range(40):
        gts = random_gts(rng, int(rng.integers(1, 6)))
        res = atss_assign(g, gts, 9)
        ref = atss_reference(anchor_boxes, sizes, [t.box for t in gts], 9)
        assert res.assigned_gt.tolist() == ref


def test_positive_centers_strictly_inside():
    rng = np.random.default_rng(8)
    g = generate_anchors(64, [8, 16], 4.0)
    for _ in range(20):
        gts = random_gts(rng, 3)
        res = atss_assign(g, gts)
        for a in res.pos_indices:
            cx, cy = g.centers[a]
            b = gts[res.assigned_gt[a]].box
            assert b.x1 < cx < b.x2 and b.y1 < cy < b.y2


def test_center_on_edge_is_not_inside():
    g = generate_anchors(32, [8], 2.0)
    # box edges pass exactly through anchor centers 4, 12, 20
    gt = GroundTruth(Box(4.0, 4.0, 20.0, 20.0), 0)
    res = atss_assign(g, [gt], top_k=16)
    for a in res.pos_indices:
        cx, cy = g.centers[a]
        assert 4.0 < cx < 20.0 and 4.0 < cy < 20.0
    assert res.n_pos >= 1


def test_conflict_goes_to_higher_iou_then_lower_index():
    g = generate_anchors(32, [8], 2.0)
    box = Box(0.5, 0.5, 31.5, 31.5)
    twin = GroundTruth(box, 1)
    res = atss_assign(g, [GroundTruth(box, 0), twin], top_k=16)
    assert res.n_pos > 0
    assert set(res.assigned_gt[res.pos_mask]) == {0}
    big = GroundTruth(Box(0.0, 0.0, 32.0, 32.0), 2)
    small = GroundTruth(Box(2.0, 2.0, 14.0, 14.0), 3)
    res = atss_assign(g, [big, small], top_k=16)
    for a in res.pos_indices:
        ious = [iou(Box.from_array(g.boxes[a]), t.box) for t in (big, small)]
        assert res.assigned_gt[a] == int(np.argmax(ious))


def test_max_iou_recorded():
    g = generate_anchors(64, [8, 16], 4.0)
    gts = random_gts(np.random.default_rng(9), 2)
    res = atss_assign(g, gts)
    for a in res.pos_indices:
        assert res.max_iou[a] == pytest.approx(iou(Box.from_array(g.boxes[a]), gts[res.assigned_gt[a]].box))
    assert np.all(res.max_iou[~res.pos_mask] == 0)


def test_build_targets_modes():
    g = generate_anchors(64, [8, 16], 4.0)
    gts = [GroundTruth(Box(10, 10, 40, 34), 2)]
    res = atss_assign(g, gts)
    decoded = g.boxes + 1.0
    t = build_targets(res, gts, decoded, 0.3)
    pos = res.pos_indices
    assert np.all(t.labels[pos] == 2)
    assert np.all(t.labels[~res.pos_mask] == BACKGROUND)
    assert np.all(t.qe[~res.pos_mask] == 0)
    for a in pos:
        v = iou(Box.from_array(decoded[a]), gts[0].box)
        assert t.iou[a] == pytest.approx(v)
        assert t.qe[a] == pytest.approx(v ** 0.3)
    ta = build_targets(res, gts, decoded, 0.3, g.boxes, iou_target_source="anchor")
    assert np.allclose(ta.iou[pos], res.max_iou[pos])
    assert np.all(build_targets(res, gts, decoded, 0.3, qe_target_mode="hard").qe[pos] == 1.0)
    assert np.allclose(build_targets(res, gts, decoded, 0.3, qe_target_mode="iou").qe[pos], t.iou[pos])
    with pytest.raises(ValueError):
        build_targets(res, gts, decoded, 0.3, iou_target_source="anchor")
    with pytest.raises(ValueError):
        build_targets(res, gts, decoded[:5], 0.3)


def test_ground_truth_validation():
    with pytest.raises(ValueError):
        GroundTruth(Box(0, 0, 0, 3), 0).validate()
    with pytest.raises(ValueError):
        GroundTruth(Box(0, 0, 3, 3), 4).validate(4)
