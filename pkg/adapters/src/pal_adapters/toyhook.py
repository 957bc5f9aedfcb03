"""Deterministic stand-in hooks for smoke tests and wiring checks.

`detect` fabricates a couple of boxes per image from a hash of the file name,
with jittered pre-suppression proposals around each; `encode` produces a
16-dim embedding the same way. Real integrations replace these with calls
into the detector; the return shapes are the hook contract:

    detect(path)  -> {"detections": [{class_id, x, y, w, h, confidence,
                                      probs?}, ...],
                      "proposals":  [{x, y, w, h, confidence}, ...]}
    encode(path)  -> iterable of floats (fixed length across images)
"""

from __future__ import annotations

import hashlib
import random
from pathlib import Path

NUM_CLASSES = 3
EMBED_DIM = 16


def _rng_for(path) -> random.Random:
    digest = hashlib.sha256(Path(path).name.encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "little"))


def true_boxes(path):
    """The objects the toy detector 'sees'; handy for writing ground truth."""
    rng = _rng_for(path)
    boxes = []
    for _ in range(rng.randint(1, 2)):
        w = rng.uniform(60.0, 140.0)
        h = rng.uniform(60.0, 140.0)
        boxes.append({
            "class_id": rng.randrange(NUM_CLASSES),
            "x": rng.uniform(0.0, 640.0 - w),
            "y": rng.uniform(0.0, 480.0 - h),
            "w": w,
            "h": h,
        })
    return boxes


def detect(path):
    rng = _rng_for(path)
    detections = []
    proposals = []
    for box in true_boxes(path):
        conf = rng.uniform(0.35, 0.95)
        detections.append({**box, "confidence": conf})
        for _ in range(rng.randint(2, 6)):
            proposals.append({
                "x": box["x"] + rng.uniform(-4.0, 4.0),
                "y": box["y"] + rng.uniform(-4.0, 4.0),
                "w": box["w"] * rng.uniform(0.9, 1.1),
                "h": box["h"] * rng.uniform(0.9, 1.1),
                "confidence": min(max(conf + rng.uniform(-0.1, 0.1), 0.01), 0.99),
            })
    return {"detections": detections, "proposals": proposals}


def encode(path):
    rng = _rng_for(path)
    return [rng.gauss(0.0, 1.0) for _ in range(EMBED_DIM)]
