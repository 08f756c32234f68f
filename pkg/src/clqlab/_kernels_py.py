"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with an identical
signature and identical results (to floating-point roundoff for the
accumulating kernels). ``clqlab.kernels`` picks one at import time.
"""

import numpy as np


def im2col(xp, kh, kw, stride, oh, ow):
    """Unfold a padded ``[N, C, H, W]`` array into ``[N, C, kh, kw, oh, ow]``."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=np.float64)
    for ky in range(kh):
        ye = ky + stride * oh
        for kx in range(kw):
            xe = kx + stride * ow
            cols[:, :, ky, kx] = xp[:, :, ky:ye:stride, kx:xe:stride]
    return cols


def col2im(cols, hp, wp, stride):
    """Adjoint of :func:`im2col`; returns the padded ``[N, C, hp, wp]`` array."""
    n, c, kh, kw, oh, ow = cols.shape
    xp = np.zeros((n, c, hp, wp), dtype=np.float64)
    for ky in range(kh):
        ye = ky + stride * oh
        for kx in range(kw):
            xe = kx + stride * ow
            xp[:, :, ky:ye:stride, kx:xe:stride] += cols[:, :, ky, kx]
    return xp


def _corners(ys, xs, h, w):
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    wy = ys - y0
    wx = xs - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    out = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yi = y0 + dy
        xi = x0 + dx
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        out.append((np.where(valid, yi, 0), np.where(valid, xi, 0), valid))
    return wy, wx, out


def bilinear_forward(feat, ys, xs):
    """Sample ``feat [N, C, H, W]`` at ``(ys, xs) [N, P]``; returns ``[N, C, P]``.

    Coordinates are in cell-index units (integer = cell center); taps that
    fall outside the map read as zero.
    """
    n, c, h, w = feat.shape
    wy, wx, corners = _corners(ys, xs, h, w)
    weights = ((1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx)
    bidx = np.arange(n)[:, None]
    out = np.zeros((n, c, ys.shape[1]), dtype=np.float64)
    for (yi, xi, valid), wt in zip(corners, weights):
        vals = feat[bidx, :, yi, xi]  # [N, P, C]
        vals = np.where(valid[..., None], vals, 0.0)
        out += np.transpose(vals, (0, 2, 1)) * wt[:, None, :]
    return out


def bilinear_backward(feat, ys, xs, gout):
    """Gradients of :func:`bilinear_forward` w.r.t. ``feat``, ``ys`` and ``xs``."""
    n, c, h, w = feat.shape
    p = ys.shape[1]
    wy, wx, corners = _corners(ys, xs, h, w)
    bidx = np.arange(n)[:, None]
    vals = []
    for yi, xi, valid in corners:
        v = feat[bidx, :, yi, xi]
        vals.append(np.where(valid[..., None], v, 0.0))  # [N, P, C]
    g = np.transpose(gout, (0, 2, 1))  # [N, P, C]
    f00, f01, f10, f11 = vals
    dfy = (1 - wx)[..., None] * (f10 - f00) + wx[..., None] * (f11 - f01)
    dfx = (1 - wy)[..., None] * (f01 - f00) + wy[..., None] * (f11 - f10)
    dys = np.sum(g * dfy, axis=2)
    dxs = np.sum(g * dfx, axis=2)

    weights = ((1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx)
    dfeat = np.zeros(n * c * h * w, dtype=np.float64)
    nn = np.broadcast_to(np.arange(n)[:, None, None], (n, p, c))
    cc = np.broadcast_to(np.arange(c)[None, None, :], (n, p, c))
    for (yi, xi, valid), wt in zip(corners, weights):
        contrib = g * (wt * valid)[..., None]
        flat = ((nn * c + cc) * h + yi[..., None]) * w + xi[..., None]
        dfeat += np.bincount(flat.ravel(), weights=contrib.ravel(),
                             minlength=dfeat.size)
    return dfeat.reshape(n, c, h, w), dys, dxs


def iou_matrix(a, b):
    """Pairwise IoU between ``a [n, 4]`` and ``b [m, 4]`` corner-form boxes."""
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    safe = np.where(union > 0, union, 1.0)
    return np.where(union > 0, inter / safe, 0.0)


def nms_sorted(boxes, iou_threshold):
    """Greedy suppression over boxes already sorted by descending score.

    Returns a boolean keep mask aligned with ``boxes``.
    """
    n = boxes.shape[0]
    keep = np.ones(n, dtype=bool)
    if n == 0:
        return keep
    ious = iou_matrix(boxes, boxes)
    for i in range(n):
        if not keep[i]:
            continue
        over = ious[i, i + 1:] > iou_threshold
        keep[i + 1:] &= ~over
    return keep
