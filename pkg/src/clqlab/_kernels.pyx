# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def im2col(double[:, :, :, ::1] xp, int kh, int kw, int stride, int oh, int ow):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    out = np.empty((n, c, kh, kw, oh, ow), dtype=np.float64)
    cdef double[:, :, :, :, :, ::1] cols = out
    cdef Py_ssize_t i, ch, ky, kx, oy, ox
    for i in range(n):
        for ch in range(c):
            for ky in range(kh):
                for kx in range(kw):
                    for oy in range(oh):
                        for ox in range(ow):
                            cols[i, ch, ky, kx, oy, ox] = xp[i, ch, ky + stride * oy, kx + stride * ox]
    return out


def col2im(double[:, :, :, :, :, ::1] cols, int hp, int wp, int stride):
    cdef Py_ssize_t n = cols.shape[0], c = cols.shape[1]
    cdef Py_ssize_t kh = cols.shape[2], kw = cols.shape[3]
    cdef Py_ssize_t oh = cols.shape[4], ow = cols.shape[5]
    out = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] xp = out
    cdef Py_ssize_t i, ch, ky, kx, oy, ox
    for i in range(n):
        for ch in range(c):
            for ky in range(kh):
                for kx in range(kw):
                    for oy in range(oh):
                        for ox in range(ow):
                            xp[i, ch, ky + stride * oy, kx + stride * ox] += cols[i, ch, ky, kx, oy, ox]
    return out


cdef inline bint _inside(Py_ssize_t y, Py_ssize_t x, Py_ssize_t h, Py_ssize_t w) nogil:
    return 0 <= y < h and 0 <= x < w


def bilinear_forward(double[:, :, :, ::1] feat, double[:, ::1] ys, double[:, ::1] xs):
    cdef Py_ssize_t n = feat.shape[0], c = feat.shape[1], h = feat.shape[2], w = feat.shape[3]
    cdef Py_ssize_t p = ys.shape[1]
    out_arr = np.zeros((n, c, p), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, ch, y0, x0
    cdef double fy, fx, wy, wx, w00, w01, w10, w11
    cdef bint v00, v01, v10, v11
    for i in range(n):
        for j in range(p):
            fy = floor(ys[i, j])
            fx = floor(xs[i, j])
            wy = ys[i, j] - fy
            wx = xs[i, j] - fx
            y0 = <Py_ssize_t>fy
            x0 = <Py_ssize_t>fx
            w00 = (1 - wy) * (1 - wx)
            w01 = (1 - wy) * wx
            w10 = wy * (1 - wx)
            w11 = wy * wx
            v00 = _inside(y0, x0, h, w)
            v01 = _inside(y0, x0 + 1, h, w)
            v10 = _inside(y0 + 1, x0, h, w)
            v11 = _inside(y0 + 1, x0 + 1, h, w)
            for ch in range(c):
                # same accumulation order as the numpy twin
                if v00:
                    out[i, ch, j] += feat[i, ch, y0, x0] * w00
                if v01:
                    out[i, ch, j] += feat[i, ch, y0, x0 + 1] * w01
                if v10:
                    out[i, ch, j] += feat[i, ch, y0 + 1, x0] * w10
                if v11:
                    out[i, ch, j] += feat[i, ch, y0 + 1, x0 + 1] * w11
    return out_arr


def bilinear_backward(double[:, :, :, ::1] feat, double[:, ::1] ys, double[:, ::1] xs,
                      double[:, :, ::1] gout):
    cdef Py_ssize_t n = feat.shape[0], c = feat.shape[1], h = feat.shape[2], w = feat.shape[3]
    cdef Py_ssize_t p = ys.shape[1]
    dfeat_arr = np.zeros((n, c, h, w), dtype=np.float64)
    dys_arr = np.zeros((n, p), dtype=np.float64)
    dxs_arr = np.zeros((n, p), dtype=np.float64)
    cdef double[:, :, :, ::1] dfeat = dfeat_arr
    cdef double[:, ::1] dys = dys_arr
    cdef double[:, ::1] dxs = dxs_arr
    cdef Py_ssize_t i, j, ch, y0, x0
    cdef double fy, fx, wy, wx, g, f00, f01, f10, f11, sy, sx
    cdef bint v00, v01, v10, v11
    for i in range(n):
        for j in range(p):
            fy = floor(ys[i, j])
            fx = floor(xs[i, j])
            wy = ys[i, j] - fy
            wx = xs[i, j] - fx
            y0 = <Py_ssize_t>fy
            x0 = <Py_ssize_t>fx
            v00 = _inside(y0, x0, h, w)
            v01 = _inside(y0, x0 + 1, h, w)
            v10 = _inside(y0 + 1, x0, h, w)
            v11 = _inside(y0 + 1, x0 + 1, h, w)
            sy = 0.0
            sx = 0.0
            for ch in range(c):
                g = gout[i, ch, j]
                f00 = feat[i, ch, y0, x0] if v00 else 0.0
                f01 = feat[i, ch, y0, x0 + 1] if v01 else 0.0
                f10 = feat[i, ch, y0 + 1, x0] if v10 else 0.0
                f11 = feat[i, ch, y0 + 1, x0 + 1] if v11 else 0.0
                sy += g * ((1 - wx) * (f10 - f00) + wx * (f11 - f01))
                sx += g * ((1 - wy) * (f01 - f00) + wy * (f11 - f10))
                if v00:
                    dfeat[i, ch, y0, x0] += g * ((1 - wy) * (1 - wx))
                if v01:
                    dfeat[i, ch, y0, x0 + 1] += g * ((1 - wy) * wx)
                if v10:
                    dfeat[i, ch, y0 + 1, x0] += g * (wy * (1 - wx))
                if v11:
                    dfeat[i, ch, y0 + 1, x0 + 1] += g * (wy * wx)
            dys[i, j] = sy
            dxs[i, j] = sx
    return dfeat_arr, dys_arr, dxs_arr


def iou_matrix(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    out_arr = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double aa, ab, iw, ih, inter, union
    for i in range(n):
        aa = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
        for j in range(m):
            ab = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
            iw = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
            ih = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
            if iw < 0:
                iw = 0
            if ih < 0:
                ih = 0
            inter = iw * ih
            union = aa + ab - inter
            if union > 0:
                out[i, j] = inter / union
    return out_arr


def nms_sorted(double[:, ::1] boxes, double iou_threshold):
    cdef Py_ssize_t n = boxes.shape[0], i, j
    keep_arr = np.ones(n, dtype=bool)
    cdef cnp.npy_bool[::1] keep = keep_arr
    cdef double ai, aj, iw, ih, inter, union, iou
    for i in range(n):
        if not keep[i]:
            continue
        ai = (boxes[i, 2] - boxes[i, 0]) * (boxes[i, 3] - boxes[i, 1])
        for j in range(i + 1, n):
            if not keep[j]:
                continue
            aj = (boxes[j, 2] - boxes[j, 0]) * (boxes[j, 3] - boxes[j, 1])
            iw = min(boxes[i, 2], boxes[j, 2]) - max(boxes[i, 0], boxes[j, 0])
            ih = min(boxes[i, 3], boxes[j, 3]) - max(boxes[i, 1], boxes[j, 1])
            if iw <= 0 or ih <= 0:
                continue
            inter = iw * ih
            union = ai + aj - inter
            iou = inter / union if union > 0 else 0.0
            if iou > iou_threshold:
                keep[j] = False
    return keep_arr
