"""Trunk + CLQ head bundled with its anchor grid."""

from __future__ import annotations

import numpy as np

from clqlab import autodiff as ad
from clqlab.autodiff import ParameterSet, Tensor
from clqlab.geometry import decode_array, generate_anchors
from clqlab.head import CLQHead, HeadConfig, qe_score
from clqlab.synthdata import FeatureTrunk


class Detector:
    def __init__(self, head_cfg: HeadConfig, image_size: int = 64, anchor_scale: float = 4.0,
                 seed: int = 0, trunk_widths=(16, 32)):
        self.cfg = head_cfg
        self.params = ParameterSet()
        C = head_cfg.channel_width
        self.trunk = FeatureTrunk(C, self.params, seed, widths=trunk_widths)
        self.head = CLQHead(head_cfg, C, self.params, seed)
        self.anchors = generate_anchors(image_size, FeatureTrunk.STRIDES, anchor_scale)

    def forward(self, images):
        """Flattened ``(cls_logits [N,A,M], deltas [N,A,4], iou_logits [N,A,1] | None)``."""
        feats = self.trunk(images if isinstance(images, Tensor) else Tensor(images))
        return self.head(feats, self.anchors).flatten()

    __call__ = forward

    def predict(self, images, use_lqe: bool = True):
        """Ranking scores ``[N, A, M]`` and decoded boxes ``[N, A, 4]`` as arrays."""
        with ad.no_grad():
            cls, deltas, iou = self.forward(images)
        scores = _sigmoid(cls.data)
        if use_lqe and iou is not None:
            scores = scores * qe_score(_sigmoid(iou.data), self.cfg.alpha)
        boxes = decode_array(np.broadcast_to(self.anchors.boxes, deltas.shape), deltas.data)
        return scores, boxes


def _sigmoid(x):
    return ad.sigmoid(Tensor(x)).data
