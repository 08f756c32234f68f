"""Kernel backend selection.

The compiled extension is used when it was built and ``CLQ_PURE_PYTHON``
is unset; otherwise the numpy twins are used. ``BACKEND`` names the active
choice, and both modules stay importable for side-by-side comparison.
"""

import os

import numpy as np

from clqlab import _kernels_py as python_backend

try:
    from clqlab import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and not os.environ.get("CLQ_PURE_PYTHON"):
    _impl = compiled_backend
    BACKEND = "compiled"
else:
    _impl = python_backend
    BACKEND = "python"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def im2col(xp, kh, kw, stride, oh, ow):
    return _impl.im2col(_c(xp), kh, kw, stride, oh, ow)


def col2im(cols, hp, wp, stride):
    return _impl.col2im(_c(cols), hp, wp, stride)


def bilinear_forward(feat, ys, xs):
    return _impl.bilinear_forward(_c(feat), _c(ys), _c(xs))


def bilinear_backward(feat, ys, xs, gout):
    return _impl.bilinear_backward(_c(feat), _c(ys), _c(xs), _c(gout))


def iou_matrix(a, b):
    a = _c(a).reshape(-1, 4)
    b = _c(b).reshape(-1, 4)
    return _impl.iou_matrix(a, b)


def nms_sorted(boxes, iou_threshold):
    return _impl.nms_sorted(_c(boxes).reshape(-1, 4), float(iou_threshold))
