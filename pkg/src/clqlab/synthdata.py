"""Deterministic synthetic detection scenes and the miniature feature trunk.

Randomness is counter-based: every draw comes from a Philox generator keyed
on ``(seed, index, tag)``, so scene ``i`` does not depend on which other
scenes were generated or in what order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from clqlab import autodiff as ad
from clqlab.assignment import GroundTruth
from clqlab.autodiff import ParameterSet, Tensor
from clqlab.geometry import Box
from clqlab.head import init_conv

# distinct base colours; stripe period (pixels) and orientation per class
CLASS_COLORS = np.array([
    [0.90, 0.20, 0.20],
    [0.20, 0.85, 0.25],
    [0.25, 0.35, 0.95],
    [0.95, 0.85, 0.20],
    [0.85, 0.25, 0.85],
    [0.20, 0.85, 0.85],
    [0.95, 0.55, 0.15],
    [0.55, 0.55, 0.55],
])
STRIPE_PERIODS = (2, 3, 4, 6, 2, 3, 4, 6)
STRIPE_VERTICAL = (True, False, True, False, False, True, False, True)
BACKGROUND_LEVEL = 0.35
BACKGROUND_NOISE = 0.04
MAX_PLACEMENT_TRIES = 50


@dataclass
class SceneConfig:
    image_size: int = 64
    num_classes: int = 4
    min_objects: int = 1
    max_objects: int = 4
    min_size: int = 12
    max_size: int = 40
    noise_sigma: float = 0.1
    allow_occlusion: bool = False
    seed: int = 0
    n_train: int = 2000
    n_val: int = 500

    def validate(self, smallest_stride: int = 8):
        if not 1 <= self.num_classes <= len(CLASS_COLORS):
            raise ValueError(f"num_classes must lie in [1, {len(CLASS_COLORS)}]")
        # any box side longer than the stride contains a cell center, so every
        # object has at least one anchor centred strictly inside it
        if self.min_size <= smallest_stride:
            raise ValueError(f"min_size {self.min_size} must exceed the smallest stride {smallest_stride}")
        if not self.min_size <= self.max_size <= self.image_size:
            raise ValueError("need min_size <= max_size <= image_size")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ValueError("need 1 <= min_objects <= max_objects")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.image_size % 16:
            raise ValueError("image_size must be divisible by 16")


@dataclass
class Scene:
    image: np.ndarray  # [3, S, S] in [0, 1]
    gts: list[GroundTruth]
    index: int = 0


_TAGS = {"layout": 1, "noise": 2, "background": 3, "split": 4}


def scene_rng(seed: int, index: int, tag: str) -> np.random.Generator:
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index), _TAGS[tag]])
    return np.random.Generator(np.random.Philox(key))


def class_pattern(class_id: int, height: int, width: int) -> np.ndarray:
    """``[3, height, width]`` texture for a class, anchored at the box corner."""
    period = STRIPE_PERIODS[class_id]
    coord = np.arange(width if STRIPE_VERTICAL[class_id] else height)
    stripe = np.where((coord // period) % 2 == 0, 1.0, 0.6)
    if STRIPE_VERTICAL[class_id]:
        mask = np.broadcast_to(stripe[None, :], (height, width))
    else:
        mask = np.broadcast_to(stripe[:, None], (height, width))
    return CLASS_COLORS[class_id][:, None, None] * mask[None]


def _overlaps(box, others) -> bool:
    x1, y1, x2, y2 = box
    for a1, b1, a2, b2 in others:
        if min(x2, a2) > max(x1, a1) and min(y2, b2) > max(y1, b1):
            return True
    return False


def _layout(cfg: SceneConfig, index: int):
    rng = scene_rng(cfg.seed, index, "layout")
    n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    S = cfg.image_size
    while True:
        placed, classes = [], []
        for _ in range(n_obj):
            for _ in range(MAX_PLACEMENT_TRIES):
                w = int(rng.integers(cfg.min_size, cfg.max_size + 1))
                h = int(rng.integers(cfg.min_size, cfg.max_size + 1))
                x1 = int(rng.integers(0, S - w + 1))
                y1 = int(rng.integers(0, S - h + 1))
                box = (x1, y1, x1 + w, y1 + h)
                if cfg.allow_occlusion or not _overlaps(box, placed):
                    placed.append(box)
                    classes.append(int(rng.integers(0, cfg.num_classes)))
                    break
            else:
                break
        if len(placed) == n_obj:
            return placed, classes
        n_obj = max(1, n_obj - 1)


def generate_scene(cfg: SceneConfig, index: int) -> Scene:
    S = cfg.image_size
    boxes, classes = _layout(cfg, index)
    bg = scene_rng(cfg.seed, index, "background")
    image = BACKGROUND_LEVEL + BACKGROUND_NOISE * bg.standard_normal((3, S, S))
    noise = scene_rng(cfg.seed, index, "noise")
    gts = []
    for (x1, y1, x2, y2), c in zip(boxes, classes):
        patch = class_pattern(c, y2 - y1, x2 - x1)
        if cfg.noise_sigma > 0:
            patch = patch + cfg.noise_sigma * noise.standard_normal(patch.shape)
        image[:, y1:y2, x1:x2] = patch
        gts.append(GroundTruth(Box(float(x1), float(y1), float(x2), float(y2)), c))
    return Scene(np.clip(image, 0.0, 1.0), gts, index)


def split_indices(cfg: SceneConfig) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint train / val scene indices, a pure function of the seed."""
    total = cfg.n_train + cfg.n_val
    perm = scene_rng(cfg.seed, 0, "split").permutation(total)
    return np.sort(perm[:cfg.n_train]), np.sort(perm[cfg.n_train:])


def dump_scene(scene: Scene, cfg: SceneConfig, path):
    """Debug dump: header, one ground-truth line per object, then the raw floats."""
    S = scene.image.shape[-1]
    lines = [f"{S} {cfg.num_classes} {len(scene.gts)} {cfg.seed} {scene.index}"]
    for g in scene.gts:
        b = g.box
        lines.append(f"{g.class_id} {b.x1!r} {b.y1!r} {b.x2!r} {b.y2!r}")
    lines.append(" ".join(repr(float(v)) for v in scene.image.reshape(-1)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_scene(path) -> tuple[Scene, dict]:
    with open(path) as fh:
        header = fh.readline().split()
        S, M, n_obj, seed, index = (int(v) for v in header)
        gts = []
        for _ in range(n_obj):
            c, *coords = fh.readline().split()
            gts.append(GroundTruth(Box(*(float(v) for v in coords)), int(c)))
        image = np.array(fh.readline().split(), dtype=np.float64).reshape(3, S, S)
    return Scene(image, gts, index), {"image_size": S, "num_classes": M, "seed": seed}


class FeatureTrunk:
    """Strided conv stack producing stride-8 and stride-16 feature maps."""

    STRIDES = (8, 16)

    def __init__(self, channels: int = 32, params: ParameterSet | None = None, seed: int = 0,
                 prefix: str = "trunk", widths=(16, 32)):
        self.params = params if params is not None else ParameterSet()
        self.channels = channels
        c1, c2 = widths
        self.layers = [
            init_conv(self.params, f"{prefix}.conv1", c1, 3, 3, seed),
            init_conv(self.params, f"{prefix}.conv2", c2, c1, 3, seed),
            init_conv(self.params, f"{prefix}.conv3", channels, c2, 3, seed),
            init_conv(self.params, f"{prefix}.conv4", channels, channels, 3, seed),
        ]

    def __call__(self, images) -> list[Tensor]:
        return feature_trunk(images, self)


def feature_trunk(image, trunk: FeatureTrunk) -> list[Tensor]:
    """Run the trunk on ``[N, 3, S, S]`` (or a single ``[3, S, S]``) images."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.ndim == 3:
        x = x.reshape(1, *x.shape)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected [N, 3, S, S] images, got {x.shape}")
    if x.shape[2] % 16 or x.shape[3] % 16:
        raise ValueError(f"image size {x.shape[2]}x{x.shape[3]} not divisible by 16")
    (w1, b1), (w2, b2), (w3, b3), (w4, b4) = trunk.layers
    x = ad.relu(ad.conv2d(x, w1, b1, stride=2, padding=1))
    x = ad.relu(ad.conv2d(x, w2, b2, stride=2, padding=1))
    p3 = ad.relu(ad.conv2d(x, w3, b3, stride=2, padding=1))
    p4 = ad.relu(ad.conv2d(p3, w4, b4, stride=2, padding=1))
    return [p3, p4]


