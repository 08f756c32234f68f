"""Compiled vs numpy kernel timings.

    python benchmarks/bench_kernels.py [--repeat N] [--csv out.csv]

Each kernel runs on inputs shaped like a default training step. Reports the
best-of-N wall time per call for both backends and the speedup.
"""

import argparse
import csv
import sys
import timeit

import numpy as np

from clqlab import _kernels_py as py
from clqlab import kernels


def cases(rng):
    xp = rng.normal(size=(8, 32, 10, 10))
    cols = py.im2col(xp, 3, 3, 1, 8, 8)
    feat = rng.normal(size=(8, 32, 8, 8))
    ys = rng.uniform(-1, 8, (8, 9 * 64))
    xs = rng.uniform(-1, 8, (8, 9 * 64))
    gout = rng.normal(size=(8, 32, 9 * 64))
    xy = rng.uniform(0, 64, (400, 2))
    boxes = np.concatenate([xy, xy + rng.uniform(4, 40, (400, 2))], 1)
    strided = rng.normal(size=(8, 16, 34, 34))
    return {
        "im2col 3x3 s1": lambda k: k.im2col(xp, 3, 3, 1, 8, 8),
        "im2col 3x3 s2": lambda k: k.im2col(strided, 3, 3, 2, 16, 16),
        "col2im 3x3 s1": lambda k: k.col2im(cols, 10, 10, 1),
        "bilinear fwd": lambda k: k.bilinear_forward(feat, ys, xs),
        "bilinear bwd": lambda k: k.bilinear_backward(feat, ys, xs, gout),
        "iou_matrix 400x400": lambda k: k.iou_matrix(boxes, boxes),
        "nms 400 boxes": lambda k: k.nms_sorted(boxes, 0.6),
    }


def train_step_times(backends, steps=5):
    """Seconds per default training step (batch 8, alignment on) under each backend."""
    from clqlab.harness.config import RunConfig
    from clqlab.harness.training import build_detector, get_scene, train_step

    cfg = RunConfig()
    cfg.head.align_enabled = True
    scenes = [get_scene(cfg.scene, i) for i in range(cfg.optim.batch_size)]
    out = {}
    saved = kernels._impl
    try:
        for bname, mod in backends:
            kernels._impl = mod
            det = build_detector(cfg)
            train_step(cfg, det, scenes, 0.0)  # warm caches
            t = timeit.default_timer()
            for _ in range(steps):
                train_step(cfg, det, scenes, 0.0)
            out[bname] = (timeit.default_timer() - t) / steps
    finally:
        kernels._impl = saved
    return out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--csv")
    ap.add_argument("--no-e2e", action="store_true", help="skip the full training-step timing")
    args = ap.parse_args(argv)
    if kernels.compiled_backend is None:
        print("compiled extension not built; only the numpy backend is available", file=sys.stderr)
    backends = [("python", py)] + ([("compiled", kernels.compiled_backend)] if kernels.compiled_backend else [])
    rows = []
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for bname, mod in backends:
            timer = timeit.Timer(lambda: fn(mod))
            n, _ = timer.autorange()
            times[bname] = min(timer.repeat(args.repeat, n)) / n
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        rows.append((name, times["python"], times.get("compiled", float("nan")), speed))
    if not args.no_e2e:
        t = train_step_times(backends)
        rows.append(("train step (align)", t["python"], t.get("compiled", float("nan")),
                     t["python"] / t["compiled"] if "compiled" in t else float("nan")))
    print(f"{'kernel':<22} {'numpy (ms)':>11} {'compiled (ms)':>14} {'speedup':>8}")
    for r in rows:
        print(f"{r[0]:<22} {r[1] * 1e3:>11.3f} {r[2] * 1e3:>14.3f} {r[3]:>7.2f}x")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kernel", "python_s", "compiled_s", "speedup"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
