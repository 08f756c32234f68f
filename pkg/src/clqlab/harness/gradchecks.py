"""Registry of finite-difference gradient checks.

Each entry draws a random point, builds a scalar function of some input
tensors, and hands both to :func:`clqlab.autodiff.grad_check`. Draws whose
inputs sit within ``KINK_MARGIN`` of a non-smooth point are redrawn, since
central differences straddling a kink say nothing about the derivative.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from clqlab import autodiff as ad
from clqlab.assignment import GroundTruth, atss_assign, build_targets
from clqlab.autodiff import ParameterSet, Tensor, grad_check, track_kinks
from clqlab.geometry import Box, decode_array, generate_anchors
from clqlab.head import CLQHead, HeadConfig
from clqlab.losses import detection_losses, giou_loss, lqe_loss, qfl

KINK_MARGIN = 1e-3
TOLERANCE = 1e-4
MAX_REDRAWS = 200


@dataclass
class CheckResult:
    name: str
    draws: int
    max_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error <= TOLERANCE


def _weights(rng, shape):
    return rng.normal(size=shape)


# -- elementwise and structural ops ------------------------------------

def _unary(op, transform=lambda x: x):
    def draw(rng):
        x = transform(rng.normal(size=(3, 4)))
        r = _weights(rng, (3, 4))
        return (lambda a: ad.sum_(op(a) * r)), [x]
    return draw


def _binary(op, bshape=(3, 4), transform=lambda x: x):
    def draw(rng):
        a = rng.normal(size=(3, 4))
        b = transform(rng.normal(size=bshape))
        r = _weights(rng, (3, 4))
        return (lambda x, y: ad.sum_(op(x, y) * r)), [a, b]
    return draw


def _away_from_zero(x):
    return np.sign(x) * (np.abs(x) + 0.5)


def _draw_clip(rng):
    x = rng.normal(size=(3, 4))
    r = _weights(rng, (3, 4))
    return (lambda a: ad.sum_(ad.clip(a, -0.6, 0.6) * r)), [x]


def _draw_reduce(rng):
    x = rng.normal(size=(2, 3, 4))
    r1 = _weights(rng, (2, 4))
    r2 = _weights(rng, (2, 1, 4))
    return (lambda a: ad.sum_(ad.sum_(a, axis=1) * r1) + ad.sum_(ad.mean(a, axis=1, keepdims=True) * r2)), [x]


def _draw_shape_ops(rng):
    x = rng.normal(size=(2, 3, 4))
    r = _weights(rng, (4, 6))
    return (lambda a: ad.sum_(ad.transpose(a, (2, 0, 1)).reshape(4, 6) * r)), [x]


def _draw_index(rng):
    x = rng.normal(size=(5, 3))
    rows = rng.integers(0, 5, size=7)  # repeats exercise accumulation
    r = _weights(rng, (7, 2))
    return (lambda a: ad.sum_(a[rows, 1:] * r)), [x]


def _draw_concat_stack(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 3))
    r1 = _weights(rng, (6, 3))
    r2 = _weights(rng, (2, 2, 3))
    return (lambda x, y: ad.sum_(ad.concat([x, y], axis=0) * r1)
            + ad.sum_(ad.stack([x, y[:2]], axis=1) * r2)), [a, b]


def _draw_matmul(rng):
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    r = _weights(rng, (2, 3, 5))
    return (lambda x, y: ad.sum_(ad.matmul(x, y) * r)), [a, b]


def _draw_conv(rng):
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    x = rng.normal(size=(2, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    oh = (5 + 2 * pad - 3) // stride + 1
    r = _weights(rng, (2, 3, oh, oh))
    return (lambda x, w, b: ad.sum_(ad.conv2d(x, w, b, stride, pad) * r)), [x, w, b]


def _draw_bilinear(rng):
    feat = rng.normal(size=(2, 2, 4, 5))
    ys = rng.uniform(-1.5, 4.5, size=(2, 7))
    xs = rng.uniform(-1.5, 5.5, size=(2, 7))
    r = _weights(rng, (2, 2, 7))
    return (lambda f, y, x: ad.sum_(ad.bilinear_sample(f, y, x) * r)), [feat, ys, xs]


# -- losses ---------------------------------------------------------------

def _random_boxes(rng, n):
    xy = rng.uniform(0, 20, (n, 2))
    return np.concatenate([xy, xy + rng.uniform(2, 15, (n, 2))], axis=1)


def _draw_giou(rng):
    p, t = _random_boxes(rng, 6), _random_boxes(rng, 6)
    return (lambda x: giou_loss(x, t, 6)), [p]


def _draw_qfl(rng):
    z = rng.normal(size=(8, 3))
    y = rng.uniform(size=(8, 3)) * (rng.uniform(size=(8, 3)) < 0.4)
    beta = float(rng.choice([0.0, 1.5, 2.0]))
    return (lambda a: qfl(ad.sigmoid(a), y, beta, 3)), [z]


def _draw_lqe(rng):
    z = rng.normal(size=6)
    t = rng.uniform(size=6)
    return (lambda a: lqe_loss(ad.sigmoid(a), t, 6)), [z]


def _draw_composite(rng):
    """Total loss through the full head, alignment included, w.r.t. features and every parameter."""
    cfg = HeadConfig(num_classes=2, channel_width=2, trunk_depth=1, align_enabled=True,
                     align_detach_boxes=False, prior_prob=0.3)
    params = ParameterSet()
    head = CLQHead(cfg, 2, params, seed=int(rng.integers(1 << 31)))
    # scale up the small output layers so every term carries real gradient
    for p in params:
        p.data = p.data * 30.0 if p.name.endswith((".lqe.weight", "cls_out.weight")) else p.data
        if p.name.endswith(".bias"):
            p.data = p.data + rng.normal(0, 0.3, p.shape)
    anchors = generate_anchors(16, [8, 16], 1.5)
    feats = [rng.uniform(0, 1, (2, 2, 2, 2)), rng.uniform(0, 1, (2, 2, 1, 1))]
    gts = [[GroundTruth(Box(2.0, 1.0, 13.0, 14.0), 1)], [GroundTruth(Box(0.5, 3.0, 9.0, 10.0), 0)]]

    # targets are frozen at the base point, as in a training step
    with ad.no_grad():
        _, deltas, _ = head([Tensor(f) for f in feats], anchors).flatten()
    decoded = decode_array(np.broadcast_to(anchors.boxes, deltas.shape), deltas.data)
    targets = [build_targets(atss_assign(anchors, g, 3), g, decoded[i], cfg.alpha)
               for i, g in enumerate(gts)]
    assert all(t.n_pos for t in targets)
    plist = list(params)

    def f(f3, f4, *ps):
        rebound = _rebind(head, dict(zip((id(p) for p in plist), ps)))
        cls, d, iou = rebound([f3, f4], anchors).flatten()
        return detection_losses(cls, d, iou, anchors.boxes, targets, cfg.alpha).total

    return f, [feats[0], feats[1]] + [p.data.copy() for p in plist]


def _rebind(head: CLQHead, swap: dict) -> CLQHead:
    """Shallow copy of ``head`` whose parameter tensors are replaced via ``swap``."""
    clone = object.__new__(CLQHead)
    clone.__dict__.update(head.__dict__)

    def sub(pair):
        return None if pair is None else tuple(swap.get(id(t), t) for t in pair)

    clone.cls_convs = [sub(p) for p in head.cls_convs]
    clone.reg_convs = [sub(p) for p in head.reg_convs]
    clone.cls_out = sub(head.cls_out)
    clone.reg_out = sub(head.reg_out)
    clone.align = sub(head.align)
    clone.lqe = sub(head.lqe)
    return clone


REGISTRY = {
    "add": _binary(ad.add, (1, 4)),
    "sub": _binary(ad.sub, (3, 1)),
    "mul": _binary(ad.mul, (4,)),
    "div": _binary(ad.div, (3, 4), _away_from_zero),
    "power": _unary(lambda a: ad.power(a, 0.3), lambda x: np.abs(x) + 0.1),
    "exp": _unary(ad.exp),
    "log": _unary(ad.log, lambda x: np.abs(x) + 0.1),
    "sigmoid": _unary(ad.sigmoid, lambda x: 4 * x),
    "relu": _unary(ad.relu),
    "abs": _unary(ad.abs_),
    "clip": _draw_clip,
    "maximum": _binary(ad.maximum),
    "minimum": _binary(ad.minimum),
    "sum/mean": _draw_reduce,
    "reshape/transpose": _draw_shape_ops,
    "index": _draw_index,
    "concat/stack": _draw_concat_stack,
    "matmul": _draw_matmul,
    "conv2d": _draw_conv,
    "bilinear_sample": _draw_bilinear,
    "loss.giou": _draw_giou,
    "loss.qfl": _draw_qfl,
    "loss.lqe": _draw_lqe,
    "loss.total(head+align)": _draw_composite,
}

# coordinates checked per input per draw (None = all)
COORDS = {"loss.total(head+align)": 3}


def run_check(name: str, draws: int = 100, seed: int = 0, h: float = 1e-4) -> CheckResult:
    draw = REGISTRY[name]
    rng = np.random.default_rng([seed, *name.encode()])
    start = time.perf_counter()
    worst = 0.0
    for _ in range(draws):
        for _ in range(MAX_REDRAWS):
            f, inputs = draw(rng)
            with track_kinks() as k:
                f(*[Tensor(x) for x in inputs])
            if k.margin > KINK_MARGIN:
                break
        else:
            raise RuntimeError(f"{name}: no kink-free draw in {MAX_REDRAWS} tries")
        worst = max(worst, grad_check(f, inputs, h=h, coords=COORDS.get(name), rng=rng))
    return CheckResult(name, draws, worst, time.perf_counter() - start)


def run_all(draws: int = 100, seed: int = 0, names=None) -> list[CheckResult]:
    return [run_check(n, draws, seed) for n in (names or REGISTRY)]
