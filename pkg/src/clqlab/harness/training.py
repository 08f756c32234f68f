"""Training loop and evaluation."""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass
from pathlib import Path

import numpy as np

from clqlab.assignment import atss_assign, build_targets
from clqlab.detector import Detector
from clqlab.geometry import decode_array
from clqlab.harness import config as config_mod
from clqlab.harness.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from clqlab.harness.config import RunConfig
from clqlab.losses import LossError, detection_losses
from clqlab.autodiff import sgd_step
from clqlab.postprocess import evaluate_ap, score_iou_correlation, select_detections
from clqlab.synthdata import generate_scene, split_indices

log = logging.getLogger(__name__)

RESULT_HEADER = "run,alpha,qfl,lqe,align,seed,AP,AP50,AP75,spearman,seconds"
LOSS_HEADER = "iter,L_cls,L_reg,L_lqe,L_total,N_pos"


class TrainingAborted(RuntimeError):
    pass


_scene_cache: dict = {}
_assign_cache: dict = {}


def get_scene(scene_cfg, index: int):
    key = (astuple(scene_cfg), int(index))
    scene = _scene_cache.get(key)
    if scene is None:
        scene = _scene_cache[key] = generate_scene(scene_cfg, int(index))
    return scene


def _get_assignment(cfg: RunConfig, anchors, index: int, gts):
    key = (astuple(cfg.scene), cfg.assign.top_k, cfg.assign.anchor_scale, int(index))
    res = _assign_cache.get(key)
    if res is None:
        res = _assign_cache[key] = atss_assign(anchors, gts, cfg.assign.top_k)
    return res


def clear_caches():
    _scene_cache.clear()
    _assign_cache.clear()


def build_detector(cfg: RunConfig) -> Detector:
    return Detector(cfg.head, cfg.scene.image_size, cfg.assign.anchor_scale, cfg.seed)


def lr_at(optim, it: int) -> float:
    lr = optim.lr
    for step in optim.lr_decay_steps:
        if it >= step:
            lr *= optim.lr_decay_factor
    if optim.warmup_iters and it < optim.warmup_iters:
        lr *= (it + 1) / optim.warmup_iters
    return lr


def batch_indices(cfg: RunConfig, train_idx: np.ndarray, it: int) -> np.ndarray:
    rng = np.random.default_rng([int(cfg.seed) & 0xFFFFFFFFFFFFFFFF, int(it), 0x5EED])
    return train_idx[np.sort(rng.choice(train_idx.size, size=cfg.optim.batch_size, replace=False))]


def train_step(cfg: RunConfig, det: Detector, scenes, lr: float):
    """One forward/backward/update on a list of scenes; returns the LossReport."""
    images = np.stack([s.image for s in scenes])
    cls, deltas, iou = det(images)
    decoded = decode_array(np.broadcast_to(det.anchors.boxes, deltas.shape), deltas.data)
    targets = []
    for i, s in enumerate(scenes):
        assignment = _get_assignment(cfg, det.anchors, s.index, s.gts)
        targets.append(build_targets(assignment, s.gts, decoded[i], cfg.head.alpha, det.anchors.boxes,
                                     cfg.assign.iou_target_source, cfg.assign.qe_target_mode))
    weights = (cfg.loss.w_cls, cfg.loss.w_reg, cfg.loss.w_lqe)
    report = detection_losses(cls, deltas, iou, det.anchors.boxes, targets, cfg.head.alpha,
                              cfg.loss.beta, weights, cfg.head.fusion_gradient_mode)
    report.total.backward()
    sgd_step(det.params, lr, cfg.optim.momentum, cfg.optim.weight_decay)
    return report


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    loss_rows: list
    checkpoint_path: Path | None = None
    loss_csv: Path | None = None
    seconds: float = 0.0


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def train(cfg: RunConfig, out_dir=None, progress_every: int = 0) -> TrainResult:
    """Train a detector. Writes ``model.clq`` and ``loss.csv`` when ``out_dir`` is given."""
    cfg.validate()
    start = time.perf_counter()
    det = build_detector(cfg)
    train_idx, _ = split_indices(cfg.scene)
    rows = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "loss.csv", "w")
        fh.write(LOSS_HEADER + "\n")
    else:
        fh = None
    try:
        for it in range(cfg.optim.iterations):
            scenes = [get_scene(cfg.scene, i) for i in batch_indices(cfg, train_idx, it)]
            try:
                report = train_step(cfg, det, scenes, lr_at(cfg.optim, it))
            except LossError as exc:
                raise TrainingAborted(f"iteration {it}: {exc}") from exc
            row = report.row(it)
            rows.append(row)
            if fh is not None:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
            if progress_every and it % progress_every == 0:
                log.info("iter %d L_total %.4f (cls %.4f reg %.4f lqe %.4f) N_pos %d", it,
                         report.L_total, report.L_cls, report.L_reg, report.L_lqe, report.N_pos)
            k = cfg.checkpoint_interval
            if out is not None and k and (it + 1) % k == 0 and it + 1 < cfg.optim.iterations:
                save_checkpoint(Checkpoint(cfg, det.params.state(), it + 1), out / f"ckpt_{it + 1:06d}.clq")
    finally:
        if fh is not None:
            fh.close()
    ckpt = Checkpoint(config_mod.clone(cfg), det.params.state(), cfg.optim.iterations)
    path = None
    if out is not None:
        path = out / "model.clq"
        save_checkpoint(ckpt, path)
    return TrainResult(ckpt, rows, path, out / "loss.csv" if out else None,
                       time.perf_counter() - start)


@dataclass
class ResultRow:
    run: str
    alpha: float
    qfl: int
    lqe: int
    align: int
    seed: int
    AP: float
    AP50: float
    AP75: float
    spearman: float
    seconds: float

    def csv(self) -> str:
        return ",".join(_fmt(v) for v in astuple(self))


@dataclass
class Evaluation:
    row: ResultRow
    report: object
    images_per_second: float
    detections: list


def detector_from_checkpoint(ckpt: Checkpoint) -> Detector:
    det = build_detector(ckpt.config)
    det.params.load_state(ckpt.tensors)
    return det


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("CLQ_THREADS", "1")))
    except ValueError:
        return 1


def evaluate(ckpt, split: str = "val", use_lqe: bool = True, run_name: str | None = None,
             train_seconds: float = 0.0) -> Evaluation:
    """Full inference path on a split, scored with COCO-style AP and score/IoU rank correlation."""
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    cfg = ckpt.config
    det = detector_from_checkpoint(ckpt)
    train_idx, val_idx = split_indices(cfg.scene)
    indices = val_idx if split == "val" else train_idx
    scenes = [get_scene(cfg.scene, i) for i in indices]
    chunks = [scenes[i:i + cfg.eval_batch] for i in range(0, len(scenes), cfg.eval_batch)]
    slices = det.anchors.level_slices
    n = cfg.nms

    def infer(chunk):
        scores, boxes = det.predict(np.stack([s.image for s in chunk]), use_lqe=use_lqe)
        return [select_detections(scores[i], boxes[i], slices, n.score_threshold, n.iou_threshold,
                                  n.pre_nms_top, n.max_per_image) for i in range(len(chunk))]

    start = time.perf_counter()
    workers = 1 if cfg.deterministic else _workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_chunk = list(pool.map(infer, chunks))
    else:
        per_chunk = [infer(c) for c in chunks]
    elapsed = time.perf_counter() - start
    dets = [d for chunk in per_chunk for d in chunk]
    gts = [s.gts for s in scenes]
    report = evaluate_ap(dets, gts)
    try:
        rho = score_iou_correlation(dets, gts)
    except ValueError:
        rho = float("nan")
    if not math.isfinite(rho):
        rho = float("nan")
    seconds = 0.0 if cfg.deterministic else float(train_seconds + elapsed)
    row = ResultRow(run_name or cfg.run_name, float(cfg.head.alpha), int(cfg.qfl),
                    int(cfg.head.lqe_enabled and use_lqe), int(cfg.head.align_enabled), int(cfg.seed),
                    report.AP, report.AP50, report.AP75, rho, seconds)
    return Evaluation(row, report, len(scenes) / max(elapsed, 1e-9), dets)


def write_results(rows, path):
    with open(path, "w") as fh:
        fh.write(RESULT_HEADER + "\n")
        for r in rows:
            fh.write(r.csv() + "\n")


def read_results(path) -> list[ResultRow]:
    out = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != RESULT_HEADER:
            raise ValueError(f"unexpected results header {header!r}")
        for line in fh:
            f = line.strip().split(",")
            if len(f) != 11:
                continue
            out.append(ResultRow(f[0], float(f[1]), int(f[2]), int(f[3]), int(f[4]), int(f[5]),
                                 *(float(v) for v in f[6:])))
    return out
