"""Regenerate the AP fixture scenes and their frozen expected values.

Expected values come from the loop-based reference in ``clqlab.oracles``
and are written once; the tests compare the vectorized evaluator to them.
"""

import json
from pathlib import Path

import numpy as np

from clqlab.assignment import GroundTruth
from clqlab.geometry import Box
from clqlab.oracles import ap_reference
from clqlab.postprocess import COCO_IOU_THRESHOLDS, Detection, read_records, write_records

HERE = Path(__file__).parent


def scene(rng, n_img=4, n_cls=3):
    gts, dets = [], []
    for _ in range(n_img):
        g = []
        for _ in range(rng.integers(0, 5)):
            x, y = rng.uniform(0, 40, 2)
            w, h = rng.uniform(5, 20, 2)
            g.append(GroundTruth(Box(x, y, x + w, y + h), int(rng.integers(n_cls))))
        d = []
        for t in g:
            for _ in range(rng.integers(0, 3)):
                j = rng.normal(0, 2.0, 4)
                b = np.array(t.box.as_tuple()) + j
                b[2:] = np.maximum(b[2:], b[:2] + 0.5)
                d.append(Detection(Box(*b), t.class_id, float(rng.uniform(0.05, 1))))
        for _ in range(rng.integers(0, 4)):
            x, y = rng.uniform(0, 40, 2)
            d.append(Detection(Box(x, y, x + 10, y + 10), int(rng.integers(n_cls)),
                               float(rng.uniform(0.05, 1))))
        gts.append(g)
        dets.append(d)
    return dets, gts


def main():
    rng = np.random.default_rng(2024)
    expected = {}
    for k in range(6):
        dets, gts = scene(rng)
        write_records(HERE / f"ap_scene{k}.dets", dets)
        write_records(HERE / f"ap_scene{k}.gts", gts_per_image=gts)
        # re-read so the frozen values match the rounded file contents
        dets = read_records(HERE / f"ap_scene{k}.dets", len(gts))
        gts = read_records(HERE / f"ap_scene{k}.gts", len(gts), as_gt=True)
        ap, per_t = ap_reference(dets, gts, COCO_IOU_THRESHOLDS)
        expected[f"ap_scene{k}"] = {"n_images": len(gts), "AP": ap, "per_threshold": per_t}
    (HERE / "ap_expected.json").write_text(json.dumps(expected, indent=1) + "\n")


if __name__ == "__main__":
    main()
