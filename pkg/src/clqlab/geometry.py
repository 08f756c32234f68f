"""Boxes, overlap measures, anchors and delta coding.

Scalar helpers operate on :class:`Box`; the ``*_array`` variants take
``[n, 4]`` corner-form float arrays and are what the training loop uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from clqlab import kernels

# upper clamp on log-size deltas before exponentiation
DELTA_CLAMP = math.log(1000.0 / 16)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise GeometryError(f"negative extent in box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "Box":
        x1, y1, x2, y2 = (float(v) for v in arr)
        return cls(x1, y1, x2, y2)


@dataclass(frozen=True)
class BoxDeltas:
    dx: float
    dy: float
    dw: float
    dh: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dw, self.dh], dtype=np.float64)


def _overlap(a: Box, b: Box) -> tuple[float, float]:
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = iw * ih
    return inter, a.area + b.area - inter


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when the union is empty."""
    inter, union = _overlap(a, b)
    if union <= 0:
        return 0.0
    return inter / union


def giou(a: Box, b: Box) -> float:
    """Generalized IoU: ``iou - (|C| - |a u b|) / |C|`` with C the enclosing box."""
    if a.area <= 0 or b.area <= 0:
        raise GeometryError("giou needs positive-area boxes (invalid regression target)")
    inter, union = _overlap(a, b)
    cw = max(a.x2, b.x2) - min(a.x1, b.x1)
    ch = max(a.y2, b.y2) - min(a.y1, b.y1)
    enclose = cw * ch
    return inter / union - (enclose - union) / enclose


def box_iou(a, b) -> np.ndarray:
    """Pairwise IoU matrix between ``[n, 4]`` and ``[m, 4]`` arrays."""
    return kernels.iou_matrix(a, b)


def giou_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise GIoU of aligned ``[n, 4]`` box arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    if np.any(area_a <= 0) or np.any(area_b <= 0):
        raise GeometryError("giou needs positive-area boxes (invalid regression target)")
    iw = np.clip(np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1]), 0, None)
    inter = iw * ih
    union = area_a + area_b - inter
    enclose = ((np.maximum(a[:, 2], b[:, 2]) - np.minimum(a[:, 0], b[:, 0]))
               * (np.maximum(a[:, 3], b[:, 3]) - np.minimum(a[:, 1], b[:, 1])))
    return inter / union - (enclose - union) / enclose


def encode_array(anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 4)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    tw = targets[:, 2] - targets[:, 0]
    th = targets[:, 3] - targets[:, 1]
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise GeometryError("cannot encode against a zero-area anchor")
    if np.any(tw <= 0) or np.any(th <= 0):
        raise GeometryError("cannot encode a zero-area target")
    dx = (0.5 * (targets[:, 0] + targets[:, 2]) - 0.5 * (anchors[:, 0] + anchors[:, 2])) / aw
    dy = (0.5 * (targets[:, 1] + targets[:, 3]) - 0.5 * (anchors[:, 1] + anchors[:, 3])) / ah
    return np.stack([dx, dy, np.log(tw / aw), np.log(th / ah)], axis=1)


def decode_array(anchors: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    anchors = np.asarray(anchors, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    aw = anchors[..., 2] - anchors[..., 0]
    ah = anchors[..., 3] - anchors[..., 1]
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise GeometryError("cannot decode against a zero-area anchor")
    cx = 0.5 * (anchors[..., 0] + anchors[..., 2]) + deltas[..., 0] * aw
    cy = 0.5 * (anchors[..., 1] + anchors[..., 3]) + deltas[..., 1] * ah
    w = aw * np.exp(np.minimum(deltas[..., 2], DELTA_CLAMP))
    h = ah * np.exp(np.minimum(deltas[..., 3], DELTA_CLAMP))
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1)


def encode_box(anchor: Box, target: Box) -> BoxDeltas:
    d = encode_array(anchor.as_array(), target.as_array())[0]
    return BoxDeltas(*(float(v) for v in d))


def decode_box(anchor: Box, deltas: BoxDeltas) -> Box:
    return Box.from_array(decode_array(anchor.as_array()[None], deltas.as_array()[None])[0])


@dataclass
class AnchorLevel:
    stride: int
    height: int
    width: int
    boxes: np.ndarray  # [height * width, 4], row-major over cells

    @property
    def count(self) -> int:
        return self.height * self.width


@dataclass
class AnchorGrid:
    levels: list[AnchorLevel]
    image_size: tuple[int, int]
    scale_factor: float
    boxes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.boxes = np.concatenate([lv.boxes for lv in self.levels], axis=0)

    def __len__(self) -> int:
        return self.boxes.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.boxes[:, :2] + self.boxes[:, 2:])

    @property
    def level_slices(self) -> list[slice]:
        out, start = [], 0
        for lv in self.levels:
            out.append(slice(start, start + lv.count))
            start += lv.count
        return out

    def level_boxes(self) -> list[Box]:
        return [Box.from_array(b) for b in self.boxes]


def generate_anchors(image_size, level_strides, scale_factor: float = 8.0) -> AnchorGrid:
    """One square anchor per feature point, side ``scale_factor * stride``."""
    if isinstance(image_size, int):
        ih, iw = image_size, image_size
    else:
        ih, iw = image_size
    levels = []
    for stride in level_strides:
        if stride <= 0 or ih % stride or iw % stride:
            raise GeometryError(f"stride {stride} does not divide image size {ih}x{iw}")
        h, w = ih // stride, iw // stride
        cy, cx = np.meshgrid((np.arange(h) + 0.5) * stride, (np.arange(w) + 0.5) * stride,
                             indexing="ij")
        half = 0.5 * scale_factor * stride
        boxes = np.stack([cx - half, cy - half, cx + half, cy + half], axis=-1).reshape(-1, 4)
        levels.append(AnchorLevel(int(stride), h, w, boxes.astype(np.float64)))
    return AnchorGrid(levels, (ih, iw), float(scale_factor))
