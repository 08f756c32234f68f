import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clqlab.geometry import (
    Box,
    BoxDeltas,
    GeometryError,
    box_iou,
    decode_array,
    decode_box,
    encode_array,
    encode_box,
    generate_anchors,
    giou,
    giou_array,
    iou,
)


def random_boxes(rng, n, lo=-20.0, hi=60.0, min_side=0.5, max_side=40.0):
    x1 = rng.uniform(lo, hi, n)
    y1 = rng.uniform(lo, hi, n)
    w = rng.uniform(min_side, max_side, n)
    h = rng.uniform(min_side, max_side, n)
    return np.stack([x1, y1, x1 + w, y1 + h], axis=1)


def test_box_rejects_negative_extent():
    with pytest.raises(GeometryError):
        Box(2, 0, 1, 1)
    assert Box(1, 1, 1, 1).area == 0.0


def test_iou_analytic_cases():
    assert iou(Box(0, 0, 2, 2), Box(0, 0, 2, 2)) == 1.0
    assert iou(Box(0, 0, 1, 1), Box(5, 5, 6, 6)) == 0.0
    assert iou(Box(0, 0, 2, 2), Box(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)
    assert iou(Box(0, 0, 0, 0), Box(0, 0, 0, 0)) == 0.0


def test_giou_analytic_cases():
    assert giou(Box(0, 0, 2, 2), Box(0, 0, 2, 2)) == 1.0
    assert giou(Box(0, 0, 1, 1), Box(2, 2, 3, 3)) == pytest.approx(-7 / 9, abs=1e-12)
    with pytest.raises(GeometryError):
        giou(Box(0, 0, 0, 1), Box(0, 0, 1, 1))


def test_giou_bounded_by_iou_on_random_pairs():
    rng = np.random.default_rng(0)
    a = random_boxes(rng, 10_000)
    b = random_boxes(rng, 10_000)
    g = giou_array(a, b)
    i = np.diag(box_iou(a[:2000], b[:2000]))
    assert np.all(g[:2000] <= i + 1e-15)
    assert np.all(g > -1) and np.all(g <= 1)
    for k in range(0, 10_000, 997):
        assert g[k] == pytest.approx(giou(Box.from_array(a[k]), Box.from_array(b[k])), abs=1e-12)


def test_giou_equals_iou_when_nested():
    outer = Box(0, 0, 10, 10)
    inner = Box(2, 3, 5, 9)
    assert giou(outer, inner) == pytest.approx(iou(outer, inner), abs=1e-15)


box_st = st.tuples(
    st.floats(-50, 50), st.floats(-50, 50), st.floats(0.1, 30), st.floats(0.1, 30)
).map(lambda t: Box(t[0], t[1], t[0] + t[2], t[1] + t[3]))


@settings(max_examples=300, deadline=None)
@given(box_st, box_st)
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == pytest.approx(iou(b, a), abs=1e-15)
    assert 0.0 <= iou(a, b) <= 1.0
    assert -1.0 < giou(a, b) <= 1.0


def raster_iou(a, b):
    """Pixel-count IoU for integer-coordinate boxes."""
    lo = int(min(a[0], b[0], a[1], b[1]))
    hi = int(max(a[2], b[2], a[3], b[3]))
    ys, xs = np.mgrid[lo:hi, lo:hi]
    ma = (xs >= a[0]) & (xs < a[2]) & (ys >= a[1]) & (ys < a[3])
    mb = (xs >= b[0]) & (xs < b[2]) & (ys >= b[1]) & (ys < b[3])
    union = np.count_nonzero(ma | mb)
    return np.count_nonzero(ma & mb) / union if union else 0.0


def test_iou_matches_rasterization():
    rng = np.random.default_rng(1)
    for _ in range(300):
        a = rng.integers(0, 20, 2).tolist()
        a += [a[0] + int(rng.integers(1, 15)), a[1] + int(rng.integers(1, 15))]
        b = rng.integers(0, 20, 2).tolist()
        b += [b[0] + int(rng.integers(1, 15)), b[1] + int(rng.integers(1, 15))]
        expected = raster_iou(a, b)
        got = iou(Box(*map(float, a)), Box(*map(float, b)))
        assert got == pytest.approx(expected, rel=1e-9, abs=1e-15)


def test_box_iou_matrix_matches_scalar():
    rng = np.random.default_rng(2)
    a = random_boxes(rng, 13)
    b = random_boxes(rng, 7)
    m = box_iou(a, b)
    for i in range(13):
        for j in range(7):
            assert m[i, j] == pytest.approx(iou(Box.from_array(a[i]), Box.from_array(b[j])), abs=1e-14)


def test_encode_decode_identity():
    a = Box(10, 20, 42, 36)
    assert encode_box(a, a) == BoxDeltas(0.0, 0.0, 0.0, 0.0)
    assert decode_box(a, BoxDeltas(0, 0, 0, 0)) == a


def test_encode_decode_round_trip():
    rng = np.random.default_rng(3)
    anchors = random_boxes(rng, 10_000, min_side=2.0, max_side=80.0)
    targets = random_boxes(rng, 10_000, min_side=1.0, max_side=80.0)
    back = decode_array(anchors, encode_array(anchors, targets))
    assert np.max(np.abs(back - targets)) < 1e-6


def test_decode_clamps_log_size():
    a = Box(0, 0, 16, 16)
    big = decode_box(a, BoxDeltas(0, 0, 50.0, 50.0))
    assert big.width == pytest.approx(1000.0)
    assert big.height == pytest.approx(1000.0)


def test_encode_rejects_zero_area_anchor():
    with pytest.raises(GeometryError):
        encode_box(Box(0, 0, 0, 5), Box(0, 0, 1, 1))
    with pytest.raises(GeometryError):
        decode_box(Box(0, 0, 0, 5), BoxDeltas(0, 0, 0, 0))


def test_anchor_counts_and_layout():
    g = generate_anchors(32, [8], 8)
    assert len(g) == 16
    assert np.allclose(g.boxes[:, 2] - g.boxes[:, 0], 64)
    assert len(generate_anchors(64, [8, 16])) == 80
    assert tuple(g.boxes[0]) == (-28.0, -28.0, 36.0, 36.0)
    # row-major: cell (r, c) = (1, 2) at index 1 * 4 + 2
    assert tuple(g.centers[6]) == (2.5 * 8, 1.5 * 8)
    assert [lv.count for lv in generate_anchors(64, [8, 16]).levels] == [64, 16]


def test_anchor_stride_must_divide():
    with pytest.raises(GeometryError):
        generate_anchors(60, [8])


def test_anchor_center_formula():
    g = generate_anchors(64, [16], 2.0)
    lv = g.levels[0]
    for r in range(lv.height):
        for c in range(lv.width):
            b = lv.boxes[r * lv.width + c]
            assert math.isclose(0.5 * (b[0] + b[2]), (c + 0.5) * 16)
            assert math.isclose(0.5 * (b[1] + b[3]), (r + 0.5) * 16)
