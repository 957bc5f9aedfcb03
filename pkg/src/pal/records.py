"""Domain records shared across the selection pipeline.

Boxes are (x, y, w, h) in pixels with a top-left origin; coordinates are
continuous (no +1 pixel convention). Class ids index into the category list
declared by the artifact headers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError

Box = tuple[float, float, float, float]

# Fused-score weights used when a config file omits them.
DEFAULT_ALPHA = 0.9
DEFAULT_BETA = 0.04
DEFAULT_GAMMA = 0.02
DEFAULT_D = 0.1

WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class ImageInfo:
    image_id: int
    width: float
    height: float


@dataclass(frozen=True)
class Annotation:
    id: int
    image_id: int
    class_id: int
    bbox: Box


@dataclass(frozen=True)
class GroundTruthSet:
    classes: tuple[str, ...]
    images: tuple[ImageInfo, ...]
    annotations: tuple[Annotation, ...]

    def image_ids(self) -> set[int]:
        return {im.image_id for im in self.images}

    def validate(self) -> None:
        ids = [im.image_id for im in self.images]
        if len(ids) != len(set(ids)):
            raise DataError("duplicate image id in ground truth")
        ann_ids = [a.id for a in self.annotations]
        if len(ann_ids) != len(set(ann_ids)):
            raise DataError("duplicate annotation id in ground truth")
        known = set(ids)
        for ann in self.annotations:
            if ann.image_id not in known:
                raise DataError(f"annotation {ann.id} references unknown image {ann.image_id}")
            if ann.bbox[2] <= 0 or ann.bbox[3] <= 0:
                raise DataError(f"annotation {ann.id}: degenerate box {ann.bbox}")
            if not 0 <= ann.class_id < len(self.classes):
                raise DataError(f"annotation {ann.id}: class_id {ann.class_id} outside category list")


@dataclass
class DetectionRecord:
    """One final (post-suppression) detection.

    pre_nms_count and tp_label start unset and are filled by the matching
    stage; tp_label only ever appears on labelled-pool detections.
    """

    image_id: int
    class_id: int
    bbox: Box
    confidence: float
    class_probabilities: Optional[tuple[float, ...]] = None
    pre_nms_count: int = 0
    tp_label: Optional[bool] = None
    index: int = 0  # position within its image group, file order


@dataclass(frozen=True)
class Proposal:
    image_id: int
    bbox: Box
    confidence: float


@dataclass
class DetectionDump:
    classes: tuple[str, ...]
    image_ids: tuple[int, ...]
    final_detections: list[DetectionRecord]
    pre_nms_proposals: list[Proposal]

    def validate(self) -> None:
        if len(self.image_ids) != len(set(self.image_ids)):
            raise DataError("duplicate image id in detection dump")
        pool = set(self.image_ids)
        n_classes = len(self.classes)
        for det in self.final_detections:
            if det.image_id not in pool:
                raise DataError(f"detection references image {det.image_id} outside the pool index")
            if not 0 <= det.class_id < n_classes:
                raise DataError(f"detection class_id {det.class_id} outside category list")
            if not 0.0 <= det.confidence <= 1.0:
                raise DataError(f"detection confidence {det.confidence} outside [0, 1]")
            if det.bbox[2] <= 0 or det.bbox[3] <= 0:
                raise DataError(f"detection has degenerate box {det.bbox}")
            if det.class_probabilities is not None:
                probs = det.class_probabilities
                if len(probs) != n_classes:
                    raise DataError(
                        f"class_probabilities length {len(probs)} != {n_classes} declared classes"
                    )
                if any(p < 0 for p in probs):
                    raise DataError("class_probabilities entry below 0")
                if abs(sum(probs) - 1.0) > 1e-6:
                    raise DataError(f"class_probabilities sum {sum(probs)} not within 1e-6 of 1")
        for prop in self.pre_nms_proposals:
            if prop.image_id not in pool:
                raise DataError(f"proposal references image {prop.image_id} outside the pool index")
            if prop.bbox[2] <= 0 or prop.bbox[3] <= 0:
                raise DataError(f"proposal has degenerate box {prop.bbox}")

    def detections_by_image(self) -> dict[int, list[DetectionRecord]]:
        out: dict[int, list[DetectionRecord]] = {iid: [] for iid in self.image_ids}
        for det in self.final_detections:
            group = out[det.image_id]
            det.index = len(group)
            group.append(det)
        return out

    def proposals_by_image(self) -> dict[int, list[Proposal]]:
        out: dict[int, list[Proposal]] = {iid: [] for iid in self.image_ids}
        for prop in self.pre_nms_proposals:
            out[prop.image_id].append(prop)
        return out


class EmbeddingStore:
    """Immutable image_id -> float32 vector map with a fixed dimension."""

    def __init__(self, dim: int, rows: dict[int, np.ndarray]):
        if dim <= 0:
            raise DataError(f"embedding dim must be positive, got {dim}")
        self.dim = int(dim)
        self.rows: dict[int, np.ndarray] = {}
        for image_id, vec in rows.items():
            arr = np.asarray(vec, dtype=np.float32)
            if arr.shape != (self.dim,):
                raise DataError(f"embedding for image {image_id} has length {arr.shape}, want {dim}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"embedding for image {image_id} contains NaN/Inf")
            self.rows[int(image_id)] = arr

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, image_id: int) -> bool:
        return image_id in self.rows

    def get(self, image_id: int) -> np.ndarray:
        if image_id not in self.rows:
            raise DataError(f"no embedding for image {image_id}")
        return self.rows[image_id]


@dataclass(frozen=True)
class SelectionConfig:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA
    d: float = DEFAULT_D
    budget_b: int = 100
    iou_prenms: float = 0.5
    iou_tp: float = 0.5
    l2_lambda: float = 1e-4
    tol: float = 1e-8
    max_iter: int = 100
    min_pos: int = 5
    min_neg: int = 5
    seed: int = 0

    def validate(self) -> None:
        bad: list[str] = []
        if abs(self.alpha + self.d - 1.0) > WEIGHT_TOL:
            bad.append(f"alpha+d must equal 1 (alpha={self.alpha}, d={self.d})")
        if abs(2.0 * self.beta + self.gamma - self.d) > WEIGHT_TOL:
            bad.append(f"2*beta+gamma must equal d (beta={self.beta}, gamma={self.gamma}, d={self.d})")
        for name in ("alpha", "beta", "gamma", "d"):
            if getattr(self, name) < 0:
                bad.append(f"{name} must be >= 0")
        if self.budget_b < 1:
            bad.append(f"budget_b must be >= 1, got {self.budget_b}")
        for name in ("iou_prenms", "iou_tp"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                bad.append(f"{name} must lie in (0, 1), got {v}")
        if self.l2_lambda < 0:
            bad.append("l2_lambda must be >= 0")
        if self.tol <= 0:
            bad.append("tol must be > 0")
        if self.max_iter < 1:
            bad.append("max_iter must be >= 1")
        if self.min_pos < 1 or self.min_neg < 1:
            bad.append("min_pos and min_neg must be >= 1")
        if bad:
            raise DataError("invalid config: " + "; ".join(bad))


@dataclass(frozen=True)
class SelectedImage:
    image_id: int
    lius: float
    cwie: float
    rcdi: float
    rcsp: float
    score: float


@dataclass(frozen=True)
class ClassSelection:
    class_id: int
    r_c: float
    b_c: int
    deficit: int
    selected: tuple[SelectedImage, ...]


@dataclass(frozen=True)
class SelectionManifest:
    round: int
    classes: tuple[str, ...]
    per_class: tuple[ClassSelection, ...]
    fill: tuple[int, ...]
    budget: int

    @property
    def total_selected(self) -> int:
        return sum(len(blk.selected) for blk in self.per_class) + len(self.fill)

    def selected_ids(self) -> set[int]:
        ids = {s.image_id for blk in self.per_class for s in blk.selected}
        ids.update(self.fill)
        return ids

    def validate(self) -> None:
        seen: set[int] = set()
        for blk in self.per_class:
            for sel in blk.selected:
                if sel.image_id in seen:
                    raise DataError(f"image {sel.image_id} selected more than once")
                seen.add(sel.image_id)
            if blk.deficit != blk.b_c - len(blk.selected):
                raise DataError(f"class {blk.class_id}: deficit does not match b_c - selected")
        for image_id in self.fill:
            if image_id in seen:
                raise DataError(f"image {image_id} selected more than once")
            seen.add(image_id)
        if self.total_selected > self.budget:
            raise DataError("manifest selects more images than the budget allows")


@dataclass
class RoundState:
    round: int
    budget: int
    labelled: set[int]
    unlabelled: set[int]
    history: list[SelectionManifest] = field(default_factory=list)

    def validate(self) -> None:
        if self.round < 1:
            raise DataError(f"round must be >= 1, got {self.round}")
        if self.budget < 0:
            raise DataError(f"budget must be >= 0, got {self.budget}")
        overlap = self.labelled & self.unlabelled
        if overlap:
            raise DataError(f"labelled and unlabelled pools overlap: {sorted(overlap)[:5]}")


def ensure_same_classes(*class_lists: Sequence[str]) -> tuple[str, ...]:
    """All artifacts of a round must declare the identical category list."""
    first = tuple(class_lists[0])
    for other in class_lists[1:]:
        if tuple(other) != first:
            raise DataError(f"category lists disagree: {first} vs {tuple(other)}")
    return first
