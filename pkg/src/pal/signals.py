"""Image-level uncertainty and diversity signals for candidate refinement.

Three cues per candidate image: class-weighted image entropy (CWIE) over all
of its detections, a rare-class diversity index (RCDI) summing class ratios
over the distinct classes present, and a rank-conditioned similarity penalty
(RCSP) that discounts an image by its highest cosine similarity to any
better-ranked candidate of the same class list. CWIE and RCDI are min-max
scaled within each class's candidate list, with the minimum anchored at 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .records import DetectionRecord, EmbeddingStore
from .scoring import Candidate


@dataclass(frozen=True)
class ImageSignals:
    image_id: int
    cwie_raw: float
    cwie_norm: float
    rcdi_raw: float
    rcdi_norm: float
    rcsp: float


def detection_entropy(det: DetectionRecord) -> float:
    """Shannon entropy of one detection's class distribution, in nats.

    Detectors that emit only a top-1 confidence p are handled with the
    two-point distribution (p, 1 - p).
    """
    if det.class_probabilities is not None:
        probs = det.class_probabilities
    else:
        probs = (det.confidence, 1.0 - det.confidence)
    total = 0.0
    for p in probs:
        if p > 0.0:
            total -= p * math.log(p)
    return total


def cwie(detections: Sequence[DetectionRecord], ratios: Mapping[int, float]) -> float:
    """Class-weighted image entropy: each detection's entropy scaled by the
    ratio of its predicted class, summed over the image."""
    return sum(ratios[det.class_id] * detection_entropy(det) for det in detections)


def rcdi(detections: Sequence[DetectionRecord], ratios: Mapping[int, float]) -> float:
    """Sum of class ratios over the distinct predicted classes in the image."""
    present = {det.class_id for det in detections}
    return sum(ratios[class_id] for class_id in present)


def minmax_normalize(values: Sequence[float]) -> list[float]:
    """Scale nonnegative scores into [0, 1] by the list maximum (min fixed at 0)."""
    for v in values:
        if v < 0.0:
            raise DataError(f"minmax_normalize: negative input {v}")
    top = max(values, default=0.0)
    if top == 0.0:
        return [0.0 for _ in values]
    return [v / top for v in values]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a64))
    nb = float(np.linalg.norm(b64))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a64, b64) / (na * nb))


def rcsp(candidates: Sequence[Candidate], embeddings: EmbeddingStore) -> list[float]:
    """Similarity penalty per candidate, in the given (entropy-rank) order.

    The rank-1 image scores 1; every later image scores 1 minus its largest
    cosine similarity to any higher-ranked image, so of two near-duplicates
    only the lower-ranked one is penalized. Negative similarities clamp to 0
    to keep the score in [0, 1].
    """
    for cand in candidates:
        if cand.image_id not in embeddings:
            raise DataError(f"no embedding for candidate image {cand.image_id}")
    out: list[float] = []
    seen: list[np.ndarray] = []
    for cand in candidates:
        vec = embeddings.get(cand.image_id)
        if not seen:
            out.append(1.0)
        else:
            worst = max(cosine(vec, prev) for prev in seen)
            out.append(1.0 - max(worst, 0.0))
        seen.append(vec)
    return out


def guide_signals(
    candidates: Sequence[Candidate],
    detections_by_image: Mapping[int, Sequence[DetectionRecord]],
    ratios: Mapping[int, float],
    embeddings: EmbeddingStore,
) -> list[ImageSignals]:
    """All three image-level signals for one class's candidate list.

    Normalization happens over exactly this list, and the similarity penalty
    uses this list's ranking, so signals from different classes are never
    mixed.
    """
    cwie_raw = [cwie(detections_by_image.get(c.image_id, ()), ratios) for c in candidates]
    rcdi_raw = [rcdi(detections_by_image.get(c.image_id, ()), ratios) for c in candidates]
    cwie_norm = minmax_normalize(cwie_raw)
    rcdi_norm = minmax_normalize(rcdi_raw)
    penalties = rcsp(candidates, embeddings)
    return [
        ImageSignals(
            image_id=c.image_id,
            cwie_raw=cw, cwie_norm=cwn,
            rcdi_raw=rd, rcdi_norm=rdn,
            rcsp=pen,
        )
        for c, cw, cwn, rd, rdn, pen in zip(
            candidates, cwie_raw, cwie_norm, rcdi_raw, rcdi_norm, penalties
        )
    ]
