"""The CLQ detection head.

Classification and regression are separate conv stacks over the pyramid
features. The localization-quality branch is a single 1x1 projection off the
regression stack's last hidden map, squashed by a sigmoid into a predicted
IoU. At inference the ranking score is ``sigmoid(cls) * predicted_iou ** alpha``.
With ``align_enabled`` the classification stack (and the quality projection)
read features re-sampled on a 3x3 grid spanning each point's regressed box.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from clqlab import autodiff as ad
from clqlab.autodiff import ParameterSet, Tensor
from clqlab.geometry import DELTA_CLAMP, AnchorGrid, decode_array

FUSION_MODES = ("through_both", "detach_lqe")


@dataclass
class HeadConfig:
    num_classes: int = 4
    trunk_depth: int = 1
    channel_width: int = 32
    alpha: float = 0.3
    align_enabled: bool = False
    lqe_enabled: bool = True
    fusion_gradient_mode: str = "through_both"
    prior_prob: float = 0.01
    align_detach_boxes: bool = True

    def validate(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.trunk_depth < 1:
            raise ValueError("trunk_depth must be >= 1")
        if self.channel_width < 1:
            raise ValueError("channel_width must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.fusion_gradient_mode not in FUSION_MODES:
            raise ValueError(f"fusion_gradient_mode must be one of {FUSION_MODES}")
        if not 0 < self.prior_prob < 1:
            raise ValueError("prior_prob must lie in (0, 1)")


def keyed_rng(seed: int, name: str) -> np.random.Generator:
    """Generator keyed on (seed, name), independent of creation order."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])


def init_conv(params: ParameterSet, name: str, c_out: int, c_in: int, k: int, seed: int,
              std: float | None = None, bias: float = 0.0):
    rng = keyed_rng(seed, name)
    if std is None:
        std = math.sqrt(2.0 / (c_in * k * k))
    w = params.add(f"{name}.weight", rng.normal(0.0, std, size=(c_out, c_in, k, k)))
    b = params.add(f"{name}.bias", np.full(c_out, float(bias)))
    return w, b


@dataclass
class LevelPredictions:
    cls_logits: Tensor  # [N, M, H, W]
    deltas: Tensor  # [N, 4, H, W]
    iou_logits: Tensor | None  # [N, 1, H, W]


@dataclass
class DensePredictions:
    levels: list[LevelPredictions]

    def flatten(self):
        """Concatenate levels into per-anchor ``[N, A, M]``, ``[N, A, 4]``, ``[N, A, 1]``."""
        cls, deltas, ious = [], [], []
        for lv in self.levels:
            n, m, h, w = lv.cls_logits.shape
            cls.append(lv.cls_logits.reshape(n, m, h * w).transpose(0, 2, 1))
            deltas.append(lv.deltas.reshape(n, 4, h * w).transpose(0, 2, 1))
            if lv.iou_logits is not None:
                ious.append(lv.iou_logits.reshape(n, 1, h * w).transpose(0, 2, 1))
        cls = ad.concat(cls, axis=1)
        deltas = ad.concat(deltas, axis=1)
        iou = ad.concat(ious, axis=1) if ious else None
        return cls, deltas, iou


def qe_score(predicted_iou, alpha: float):
    """Quality score ``iou ** alpha`` (tensor or array)."""
    if isinstance(predicted_iou, Tensor):
        return ad.power(predicted_iou, alpha)
    return np.power(np.asarray(predicted_iou, dtype=np.float64), alpha)


def fuse_ranking_scores(cls_logits: Tensor, iou_logits: Tensor | None, alpha: float,
                        mode: str = "through_both") -> Tensor:
    """``sigmoid(cls) * qe_score(sigmoid(iou))``, broadcasting the quality factor over classes."""
    cls_score = ad.sigmoid(cls_logits)
    if iou_logits is None:
        return cls_score
    if mode not in FUSION_MODES:
        raise ValueError(f"unknown fusion mode {mode!r}")
    qe = qe_score(ad.sigmoid(iou_logits), alpha)
    if mode == "detach_lqe":
        qe = qe.detach()
    return cls_score * qe


def decode_tensor(anchor_boxes: np.ndarray, deltas: Tensor) -> Tensor:
    """Differentiable decode; ``deltas [..., 4]`` against constant anchors ``[..., 4]``."""
    aw = anchor_boxes[..., 2] - anchor_boxes[..., 0]
    ah = anchor_boxes[..., 3] - anchor_boxes[..., 1]
    acx = 0.5 * (anchor_boxes[..., 0] + anchor_boxes[..., 2])
    acy = 0.5 * (anchor_boxes[..., 1] + anchor_boxes[..., 3])
    cx = deltas[..., 0] * aw + acx
    cy = deltas[..., 1] * ah + acy
    half_w = ad.exp(ad.clip(deltas[..., 2], None, DELTA_CLAMP)) * (0.5 * aw)
    half_h = ad.exp(ad.clip(deltas[..., 3], None, DELTA_CLAMP)) * (0.5 * ah)
    return ad.stack([cx - half_w, cy - half_h, cx + half_w, cy + half_h], axis=-1)


def box_sample_grid(boxes, stride: float):
    """3x3 sampling locations spanning each box, in cell units.

    ``boxes`` is ``[N, 4, P]`` (tensor or array). Returns ``(ys, xs)`` of shape
    ``[N, 9 * P]`` ordered (row, col, point) so that tap ``k = 3*row + col``
    matches a 3x3 kernel's layout.
    """
    if not isinstance(boxes, Tensor):
        boxes = Tensor(boxes)
    n, _, p = boxes.shape
    x1, y1, x2, y2 = (boxes[:, i, :] * (1.0 / stride) - 0.5 for i in range(4))
    ys, xs = [], []
    for r in range(3):
        yr = y1 + (y2 - y1) * (0.5 * r)
        for c in range(3):
            ys.append(yr)
            xs.append(x1 + (x2 - x1) * (0.5 * c))
    ys = ad.stack(ys, axis=1).reshape(n, 9 * p)
    xs = ad.stack(xs, axis=1).reshape(n, 9 * p)
    return ys, xs


def align_features(features: Tensor, boxes, stride: float, weight: Tensor, bias: Tensor | None) -> Tensor:
    """Box-guided 3x3 sampling followed by a learned projection.

    ``features [N, C, H, W]``; ``boxes [N, 4, H, W]`` in image coordinates
    (one decoded box per feature point); ``weight [O, C, 3, 3]``. With each
    box equal to the point's native 3x3 neighbourhood this is exactly a
    padded 3x3 convolution.
    """
    n, c, h, w = features.shape
    o = weight.shape[0]
    if weight.shape[1:] != (c, 3, 3):
        raise ad.ShapeError(f"align_features: weight {weight.shape} vs features {features.shape}")
    if not isinstance(boxes, Tensor):
        boxes = Tensor(boxes)
    ys, xs = box_sample_grid(boxes.reshape(n, 4, h * w), stride)
    samples = ad.bilinear_sample(features, ys, xs)  # [N, C, 9*HW], laid out (c, k, p)
    cols = samples.reshape(n, c * 9, h * w)
    out = ad.matmul(weight.reshape(o, c * 9), cols)
    if bias is not None:
        out = out + bias.reshape(1, o, 1)
    return out.reshape(n, o, h, w)


class CLQHead:
    """Shared-across-levels CLQ head. Parameters live in ``params``."""

    def __init__(self, cfg: HeadConfig, in_channels: int, params: ParameterSet | None = None,
                 seed: int = 0, prefix: str = "head"):
        cfg.validate()
        self.cfg = cfg
        self.in_channels = in_channels
        self.params = params if params is not None else ParameterSet()
        self.prefix = prefix
        C = cfg.channel_width
        p = self.params
        self.cls_convs, self.reg_convs = [], []
        c_in = in_channels
        for i in range(cfg.trunk_depth):
            self.cls_convs.append(init_conv(p, f"{prefix}.cls_conv{i}", C, c_in, 3, seed))
            self.reg_convs.append(init_conv(p, f"{prefix}.reg_conv{i}", C, c_in, 3, seed))
            c_in = C
        prior_bias = -math.log((1 - cfg.prior_prob) / cfg.prior_prob)
        self.cls_out = init_conv(p, f"{prefix}.cls_out", cfg.num_classes, C, 3, seed,
                                 std=0.01, bias=prior_bias)
        self.reg_out = init_conv(p, f"{prefix}.reg_out", 4, C, 3, seed, std=0.01)
        self.align = None
        if cfg.align_enabled:
            if in_channels != C:
                raise ValueError("alignment needs in_channels == channel_width")
            self.align = init_conv(p, f"{prefix}.align", C, C, 3, seed)
        self.lqe = None
        if cfg.lqe_enabled:
            self.lqe = init_conv(p, f"{prefix}.lqe", 1, C, 1, seed, std=0.01)

    def forward(self, features: list[Tensor], anchors: AnchorGrid) -> DensePredictions:
        if len(features) != len(anchors.levels):
            raise ValueError(f"{len(features)} feature levels for {len(anchors.levels)} anchor levels")
        return DensePredictions([self._level(f, lv) for f, lv in zip(features, anchors.levels)])

    __call__ = forward

    def _level(self, feat: Tensor, level) -> LevelPredictions:
        n, c, h, w = feat.shape
        if c != self.in_channels:
            raise ValueError(f"feature map has {c} channels, head expects {self.in_channels}")
        if (h, w) != (level.height, level.width):
            raise ValueError(f"feature map {h}x{w} does not match anchor grid {level.height}x{level.width}")
        reg = feat
        for wt, b in self.reg_convs:
            reg = ad.relu(ad.conv2d(reg, wt, b, padding=1))
        deltas = ad.conv2d(reg, *self.reg_out, padding=1)

        cls_in, lqe_in = feat, reg
        if self.align is not None:
            boxes = self._decoded_boxes(deltas, level)
            cls_in = ad.relu(align_features(feat, boxes, level.stride, *self.align))
            if self.lqe is not None:
                lqe_in = ad.relu(align_features(reg, boxes, level.stride, *self.align))
        cls = cls_in
        for wt, b in self.cls_convs:
            cls = ad.relu(ad.conv2d(cls, wt, b, padding=1))
        cls_logits = ad.conv2d(cls, *self.cls_out, padding=1)
        iou_logits = ad.conv2d(lqe_in, *self.lqe) if self.lqe is not None else None
        return LevelPredictions(cls_logits, deltas, iou_logits)

    def _decoded_boxes(self, deltas: Tensor, level):
        n, _, h, w = deltas.shape
        anchors = level.boxes.reshape(h, w, 4)
        if self.cfg.align_detach_boxes:
            d = np.transpose(deltas.data, (0, 2, 3, 1))  # [N, H, W, 4]
            boxes = decode_array(np.broadcast_to(anchors, d.shape), d)
            return np.ascontiguousarray(np.transpose(boxes, (0, 3, 1, 2)))
        boxes = decode_tensor(np.broadcast_to(anchors, (n, h, w, 4)), deltas.transpose(0, 2, 3, 1))
        return boxes.transpose(0, 3, 1, 2)

    def lqe_parameter_count(self) -> int:
        if self.lqe is None:
            return 0
        return sum(t.size for t in self.lqe)
