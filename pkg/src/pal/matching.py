"""Box geometry and detection labeling.

Proposal assignment is class-agnostic and exclusive: each proposal counts
toward at most one final detection, the one it overlaps most. TP/FP labeling
follows the usual detection-evaluation convention: greedy confidence-descending
matching against unmatched same-class ground-truth boxes at an IoU threshold.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Sequence

import numpy as np

from .errors import DataError
from .records import Annotation, Box, DetectionRecord, GroundTruthSet, Proposal


def iou(box_a: Box, box_b: Box) -> float:
    """Intersection-over-union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise DataError(f"degenerate box in iou: {box_a} vs {box_b}")
    ax2, ay2 = ax + aw, ay + ah
    bx2, by2 = bx + bw, by + bh
    # areas come from the same corner values as the intersection, so
    # iou(a, a) == 1.0 exactly and the ratio never exceeds 1
    area_a = (ax2 - ax) * (ay2 - ay)
    area_b = (bx2 - bx) * (by2 - by)
    if area_a <= 0 or area_b <= 0:
        raise DataError(f"degenerate box in iou: {box_a} vs {box_b}")
    ix = max(ax, bx)
    iy = max(ay, by)
    ix2 = min(ax2, bx2)
    iy2 = min(ay2, by2)
    if ix2 <= ix or iy2 <= iy:
        return 0.0
    inter = (ix2 - ix) * (iy2 - iy)
    return inter / (area_a + area_b - inter)


def _iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU for two (n, 4) arrays of (x, y, w, h) boxes."""
    if len(boxes_a) == 0 or len(boxes_b) == 0:
        return np.zeros((len(boxes_a), len(boxes_b)))
    ax1, ay1 = boxes_a[:, 0], boxes_a[:, 1]
    ax2, ay2 = ax1 + boxes_a[:, 2], ay1 + boxes_a[:, 3]
    bx1, by1 = boxes_b[:, 0], boxes_b[:, 1]
    bx2, by2 = bx1 + boxes_b[:, 2], by1 + boxes_b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(ax1[:, None], bx1[None, :])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(ay1[:, None], by1[None, :])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = ((ax2 - ax1) * (ay2 - ay1))[:, None]
    area_b = ((bx2 - bx1) * (by2 - by1))[None, :]
    return inter / (area_a + area_b - inter)


def assign_pre_nms_counts(
    final: Sequence[DetectionRecord],
    proposals: Sequence[Proposal],
    threshold: float,
) -> list[int]:
    """Count proposals per final detection of one image.

    A proposal goes to the detection it overlaps most, provided that overlap
    reaches the threshold (ties broken toward the lowest detection index);
    below-threshold proposals stay unassigned, so counts partition proposals.
    """
    for det in final:
        if final and det.image_id != final[0].image_id:
            raise DataError("assign_pre_nms_counts: detections from multiple images")
    counts = [0] * len(final)
    if not final or not proposals:
        return counts
    det_boxes = np.array([d.bbox for d in final], dtype=float)
    prop_boxes = np.array([p.bbox for p in proposals], dtype=float)
    matrix = _iou_matrix(prop_boxes, det_boxes)  # (n_prop, n_det)
    best = np.argmax(matrix, axis=1)  # argmax takes the lowest index on ties
    best_iou = matrix[np.arange(len(proposals)), best]
    for det_idx, ok in zip(best, best_iou >= threshold):
        if ok:
            counts[det_idx] += 1
    return counts


def label_tp_fp(
    detections: Sequence[DetectionRecord],
    gt: GroundTruthSet,
    threshold: float,
) -> list[DetectionRecord]:
    """Set tp_label on every detection by greedy matching against ground truth.

    Per (image, class), detections are visited in confidence-descending order
    (ties broken by box coordinates, then input position, so the labeling does
    not depend on input order); each claims the unmatched ground-truth box of
    the same class it overlaps most, if that overlap reaches the threshold.
    Records are returned in input order.
    """
    known_images = gt.image_ids()
    for det in detections:
        if det.image_id not in known_images:
            raise DataError(f"detection references unknown image {det.image_id}")

    gt_by_key: dict[tuple[int, int], list[Annotation]] = defaultdict(list)
    for ann in gt.annotations:
        gt_by_key[(ann.image_id, ann.class_id)].append(ann)

    groups: dict[tuple[int, int], list[tuple[int, DetectionRecord]]] = defaultdict(list)
    for pos, det in enumerate(detections):
        groups[(det.image_id, det.class_id)].append((pos, det))

    labels: dict[int, bool] = {}
    for key, members in groups.items():
        members = sorted(members, key=lambda m: (-m[1].confidence, m[1].bbox, m[0]))
        candidates = gt_by_key.get(key, [])
        matched = [False] * len(candidates)
        for pos, det in members:
            best_iou, best_idx = 0.0, -1
            for idx, ann in enumerate(candidates):
                if matched[idx]:
                    continue
                overlap = iou(det.bbox, ann.bbox)
                if overlap > best_iou:
                    best_iou, best_idx = overlap, idx
            if best_idx >= 0 and best_iou >= threshold:
                matched[best_idx] = True
                labels[pos] = True
            else:
                labels[pos] = False

    out = []
    for pos, det in enumerate(detections):
        det.tp_label = labels[pos]
        out.append(det)
    return out
