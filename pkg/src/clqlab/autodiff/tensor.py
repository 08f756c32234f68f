"""Reverse-mode autodiff over float64 numpy arrays.

Each differentiable op builds a :class:`Tensor` holding its parents and a
closure that maps the output gradient to parent gradients. ``backward``
walks the graph once in reverse topological order and then frees it, so a
training step rebuilds the graph each time.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from clqlab import kernels


class ShapeError(ValueError):
    pass


_grad_enabled = True
_kink_trackers: list = []


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class KinkTracker:
    """Records the smallest distance of any op input to a non-smooth point.

    Finite differences are meaningless across a kink (relu at 0, ties in
    max/min, clip bounds, integer sampling coordinates), so gradient checks
    use this to tell whether a draw is valid.
    """

    def __init__(self):
        self.margin = math.inf

    def note(self, dist):
        dist = np.asarray(dist)
        if dist.size:
            self.margin = min(self.margin, float(np.min(np.abs(dist))))


@contextlib.contextmanager
def track_kinks():
    tracker = KinkTracker()
    _kink_trackers.append(tracker)
    try:
        yield tracker
    finally:
        _kink_trackers.remove(tracker)


def _note_kink(dist):
    for t in _kink_trackers:
        t.note(dist)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    __array_priority__ = 1000  # keep ndarray <op> Tensor dispatching to Tensor

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = None
        self.name = name

    # -- basics ---------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.shape)
        else:
            self.grad += g

    def backward(self):
        """Populate ``grad`` on every tensor reachable from this scalar."""
        if self.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        order = _topological(self)
        self._accumulate(np.ones(()))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in order:
            if node._parents:
                node._parents = ()
                node._backward = None

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def abs(self):
        return abs_(self)

    def clip(self, lo=None, hi=None):
        return clip(self, lo, hi)


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary_shape(a: Tensor, b: Tensor, opname: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b, "add")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b, "sub")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b, "div")
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw, "div")


def power(a, p: float) -> Tensor:
    """``a ** p`` for a constant exponent; inputs must be positive unless p is an integer."""
    a = as_tensor(a)
    p = float(p)
    out = np.power(a.data, p)

    def bw(g):
        a._accumulate(g * p * np.power(a.data, p - 1.0))

    return _make(out, (a,), bw, "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: a._accumulate(g * out), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: a._accumulate(g / a.data), "log")


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid_np(np.atleast_1d(a.data)).reshape(a.shape)
    return _make(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    if _kink_trackers:
        _note_kink(a.data)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: a._accumulate(g * mask), "relu")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    if _kink_trackers:
        _note_kink(a.data)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: a._accumulate(g * sign), "abs")


def clip(a, lo=None, hi=None) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient is zero where the clamp is active."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    if _kink_trackers:
        if lo is not None:
            _note_kink(a.data - lo)
        if hi is not None:
            _note_kink(a.data - hi)
    mask = out == a.data
    return _make(out, (a,), lambda g: a._accumulate(g * mask), "clip")


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b, "maximum")
    if _kink_trackers:
        _note_kink(a.data - b.data)
    pick_a = a.data >= b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * pick_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~pick_a, b.shape))

    return _make(np.maximum(a.data, b.data), (a, b), bw, "maximum")


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b, "minimum")
    if _kink_trackers:
        _note_kink(a.data - b.data)
    pick_a = a.data <= b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * pick_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~pick_a, b.shape))

    return _make(np.minimum(a.data, b.data), (a, b), bw, "minimum")


# -- reductions and shape ------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = np.sum(a.data, axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(np.asarray(out, dtype=np.float64), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return mul(sum_(a, axes, keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _make(out, (a,), lambda g: a._accumulate(g.reshape(a.shape)), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,),
                 lambda g: a._accumulate(np.transpose(g, inv)), "transpose")


def index(a, key) -> Tensor:
    """Basic or fancy indexing; backward scatters with ``np.add.at``."""
    a = as_tensor(a)
    out = a.data[key]

    def bw(g):
        full = np.zeros(a.shape, dtype=np.float64)
        np.add.at(full, key, g)
        a._accumulate(full)

    return _make(np.array(out, dtype=np.float64), (a,), bw, "index")


def concat(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        shapes = " and ".join(str(t.shape) for t in ts)
        raise ShapeError(f"concat: incompatible shapes {shapes}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def bw(g):
        for t, s, e in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(s, e)
                t._accumulate(g[tuple(sl)])

    return _make(out, ts, bw, "concat")


def stack(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    expanded = []
    for t in ts:
        shape = list(t.shape)
        ax = axis % (t.ndim + 1)
        shape.insert(ax, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


# -- linear algebra -------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, (a, b), bw, "matmul")


def conv2d(x, w, b=None, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation. ``x [N, C, H, W]``, ``w [O, C, kh, kw]``, ``b [O]``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    hp, wp = h + 2 * padding, wd + 2 * padding
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = kernels.im2col(xp, kh, kw, stride, oh, ow).reshape(n, c * kh * kw, oh * ow)
    wmat = w.data.reshape(o, -1)
    out = np.matmul(wmat, cols)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {b.shape} does not match {o} output channels")
        out = out + b.data[None, :, None]
        parents.append(b)
    out = out.reshape(n, o, oh, ow)

    def bw(g):
        g2 = g.reshape(n, o, oh * ow)
        if w.requires_grad:
            dw = np.einsum("nol,nkl->ok", g2, cols, optimize=True)
            w._accumulate(dw.reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g2).reshape(n, c, kh, kw, oh, ow)
            dxp = kernels.col2im(dcols, hp, wp, stride)
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + wd]
            x._accumulate(dxp)

    return _make(out, parents, bw, "conv2d")


def bilinear_sample(feat, ys, xs) -> Tensor:
    """Sample ``feat [N, C, H, W]`` at fractional ``(ys, xs) [N, P]`` -> ``[N, C, P]``.

    Coordinates are in cell units (integer = cell center). Taps outside the
    map read as zero. Differentiable w.r.t. the map and both coordinates.
    """
    feat, ys, xs = as_tensor(feat), as_tensor(ys), as_tensor(xs)
    if feat.ndim != 4 or ys.shape != xs.shape or ys.ndim != 2 or ys.shape[0] != feat.shape[0]:
        raise ShapeError(f"bilinear_sample: incompatible shapes {feat.shape} and {ys.shape}/{xs.shape}")
    if _kink_trackers:
        for coord in (ys.data, xs.data):
            frac = coord - np.floor(coord)
            _note_kink(np.minimum(frac, 1.0 - frac))
    out = kernels.bilinear_forward(feat.data, ys.data, xs.data)

    def bw(g):
        dfeat, dys, dxs = kernels.bilinear_backward(feat.data, ys.data, xs.data, g)
        if feat.requires_grad:
            feat._accumulate(dfeat)
        if ys.requires_grad:
            ys._accumulate(dys)
        if xs.requires_grad:
            xs._accumulate(dxs)

    return _make(out, (feat, ys, xs), bw, "bilinear_sample")
