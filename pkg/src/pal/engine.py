"""One active-learning round, end to end.

The round is a pipeline of pure stages: feature extraction (pre-NMS counts,
TP/FP labels), per-class classifier training, instance entropy scoring,
class budgeting, candidate shortlists, image-level signals, score fusion,
and per-class selection with cross-class deduplication. Classes claim images
rarest-first so common classes cannot steal contested images from rare ones;
leftover budget is topped up with the lowest-id unselected images so a budget
covering the whole pool selects the whole pool. All ties break on ascending
ids, making the manifest a pure function of the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import DataError
from .matching import assign_pre_nms_counts, label_tp_fp
from .records import (
    ClassSelection,
    DetectionDump,
    DetectionRecord,
    EmbeddingStore,
    GroundTruthSet,
    RoundState,
    SelectedImage,
    SelectionConfig,
    SelectionManifest,
    ensure_same_classes,
)
from .scoring import (
    ClassifierModel,
    InstanceScore,
    compute_class_ratios,
    allocate_budgets,
    lius_score,
    predict_tp_probability,
    shortlist_candidates,
    train_clc,
    train_fallback_clc,
)
from .signals import ImageSignals, detection_entropy, guide_signals


@dataclass(frozen=True)
class ScoredCandidate:
    image_id: int
    class_id: int
    lius: float
    cwie_norm: float
    rcdi_norm: float
    rcsp: float
    score: float


def combine_score(lius: float, signals: ImageSignals, cfg: SelectionConfig) -> float:
    """Fuse instance entropy with the image-level signals into one score."""
    return (
        cfg.alpha * lius
        + cfg.gamma * signals.rcsp
        + cfg.beta * (signals.cwie_norm + signals.rcdi_norm)
    )


def entropy_baseline_score(detections: Sequence[DetectionRecord]) -> float:
    """Unweighted sum of classification entropies over an image's detections."""
    return sum(detection_entropy(det) for det in detections)


def select_top(
    scored: Sequence[ScoredCandidate],
    b_c: int,
    claimed: set[int],
) -> list[ScoredCandidate]:
    """Take up to b_c unclaimed candidates by score (ties to lower image_id).

    Mutates `claimed` so the caller can process classes rarest-first and no
    image is ever selected under two classes.
    """
    chosen: list[ScoredCandidate] = []
    for cand in sorted(scored, key=lambda c: (-c.score, c.image_id)):
        if len(chosen) >= b_c:
            break
        if cand.image_id in claimed:
            continue
        claimed.add(cand.image_id)
        chosen.append(cand)
    return chosen


def assign_features(dump: DetectionDump, iou_prenms: float) -> dict[int, list[DetectionRecord]]:
    """Group a dump per image and fill every detection's pre-NMS count."""
    by_image = dump.detections_by_image()
    props = dump.proposals_by_image()
    for image_id, dets in by_image.items():
        counts = assign_pre_nms_counts(dets, props[image_id], iou_prenms)
        for det, count in zip(dets, counts):
            det.pre_nms_count = count
    return by_image


def train_classifiers(
    labelled: Sequence[DetectionRecord],
    num_classes: int,
    cfg: SelectionConfig,
) -> tuple[dict[int, ClassifierModel], ClassifierModel]:
    """Per-class TP/FP classifiers plus the pooled fallback."""
    by_class: dict[int, list[DetectionRecord]] = {c: [] for c in range(num_classes)}
    for det in labelled:
        by_class[det.class_id].append(det)
    models = {
        class_id: train_clc(dets, cfg, class_id=class_id)
        for class_id, dets in sorted(by_class.items())
    }
    fallback = train_fallback_clc(list(labelled), cfg)
    return models, fallback


def score_instances(
    unlabelled_by_image: Mapping[int, Sequence[DetectionRecord]],
    models: Mapping[int, ClassifierModel],
    fallback: ClassifierModel,
) -> list[InstanceScore]:
    """LIUS for every unlabelled detection.

    Classes without a usable model (own or fallback) score 0, which keeps
    them out of shortlists unless nothing else is available.
    """
    dets: list[DetectionRecord] = []
    for image_id in sorted(unlabelled_by_image):
        dets.extend(unlabelled_by_image[image_id])
    by_class: dict[int, list[DetectionRecord]] = {}
    for det in dets:
        by_class.setdefault(det.class_id, []).append(det)

    scores: list[InstanceScore] = []
    for class_id in sorted(by_class):
        group = by_class[class_id]
        model: Optional[ClassifierModel] = models.get(class_id)
        if model is None or not model.trained:
            model = fallback if fallback.trained else None
        if model is None:
            scores.extend(
                InstanceScore(det.image_id, class_id, det.index, None, 0.0) for det in group
            )
            continue
        x1 = np.array([float(det.pre_nms_count) for det in group])
        x2 = np.array([det.confidence for det in group])
        p = np.atleast_1d(predict_tp_probability(model, x1, x2))
        entropies = np.atleast_1d(lius_score(p))
        scores.extend(
            InstanceScore(det.image_id, class_id, det.index, float(pi), float(ei))
            for det, pi, ei in zip(group, p, entropies)
        )
    return scores


def _empty_manifest(round_no: int, classes: tuple[str, ...], budget: int) -> SelectionManifest:
    return SelectionManifest(round=round_no, classes=classes, per_class=(), fill=(), budget=budget)


def run_round(
    gt: GroundTruthSet,
    labelled_dump: DetectionDump,
    unlabelled_dump: DetectionDump,
    embeddings: EmbeddingStore,
    cfg: SelectionConfig,
    state: RoundState,
) -> SelectionManifest:
    """Produce the round's selection manifest; deterministic for fixed inputs."""
    try:
        return _run_round(gt, labelled_dump, unlabelled_dump, embeddings, cfg, state)
    except DataError as exc:
        raise DataError(f"round {state.round}: {exc}") from exc


def _run_round(
    gt: GroundTruthSet,
    labelled_dump: DetectionDump,
    unlabelled_dump: DetectionDump,
    embeddings: EmbeddingStore,
    cfg: SelectionConfig,
    state: RoundState,
) -> SelectionManifest:
    state.validate()
    classes = ensure_same_classes(gt.classes, labelled_dump.classes, unlabelled_dump.classes)
    num_classes = len(classes)
    if set(labelled_dump.image_ids) != state.labelled:
        raise DataError("labelled dump does not cover exactly the labelled pool")
    if set(unlabelled_dump.image_ids) != state.unlabelled:
        raise DataError("unlabelled dump does not cover exactly the unlabelled pool")
    if state.budget == 0:
        return _empty_manifest(state.round, classes, 0)

    labelled_by_image = assign_features(labelled_dump, cfg.iou_prenms)
    unlabelled_by_image = assign_features(unlabelled_dump, cfg.iou_prenms)
    label_tp_fp(labelled_dump.final_detections, gt, cfg.iou_tp)

    models, fallback = train_classifiers(labelled_dump.final_detections, num_classes, cfg)
    instance_scores = score_instances(unlabelled_by_image, models, fallback)

    stats = compute_class_ratios(
        labelled_dump.final_detections, unlabelled_dump.final_detections, num_classes
    )
    ratio_map = {st.class_id: st.r_c for st in stats}
    capacity = {
        st.class_id: len({s.image_id for s in instance_scores if s.class_id == st.class_id})
        for st in stats
    }
    plan = allocate_budgets(stats, capacity, state.budget)
    shortlists = shortlist_candidates(instance_scores, plan)

    scored: dict[int, list[ScoredCandidate]] = {}
    for class_id in sorted(shortlists):
        candidates = shortlists[class_id]
        sigs = guide_signals(candidates, unlabelled_by_image, ratio_map, embeddings)
        scored[class_id] = [
            ScoredCandidate(
                image_id=cand.image_id,
                class_id=class_id,
                lius=cand.lius,
                cwie_norm=sig.cwie_norm,
                rcdi_norm=sig.rcdi_norm,
                rcsp=sig.rcsp,
                score=combine_score(cand.lius, sig, cfg),
            )
            for cand, sig in zip(candidates, sigs)
        ]

    claimed: set[int] = set()
    chosen: dict[int, list[ScoredCandidate]] = {}
    for st in sorted(stats, key=lambda s: (s.n_c_u, s.class_id)):
        chosen[st.class_id] = select_top(scored.get(st.class_id, []), plan.per_class[st.class_id], claimed)

    leftover = state.budget - sum(len(v) for v in chosen.values())
    fill = tuple(sorted(state.unlabelled - claimed)[: max(leftover, 0)])

    per_class = tuple(
        ClassSelection(
            class_id=st.class_id,
            r_c=round(st.r_c, 6),
            b_c=plan.per_class[st.class_id],
            deficit=plan.per_class[st.class_id] - len(chosen[st.class_id]),
            selected=tuple(
                SelectedImage(
                    image_id=c.image_id,
                    lius=round(c.lius, 6),
                    cwie=round(c.cwie_norm, 6),
                    rcdi=round(c.rcdi_norm, 6),
                    rcsp=round(c.rcsp, 6),
                    score=round(c.score, 6),
                )
                for c in chosen[st.class_id]
            ),
        )
        for st in sorted(stats, key=lambda s: s.class_id)
    )
    manifest = SelectionManifest(
        round=state.round, classes=classes, per_class=per_class, fill=fill, budget=state.budget
    )
    manifest.validate()
    return manifest


def update_pools(state: RoundState, manifest: SelectionManifest) -> RoundState:
    """Move the selected images from the unlabelled to the labelled pool."""
    selected = manifest.selected_ids()
    outside = selected - state.unlabelled
    if outside:
        raise DataError(f"selected images not in the unlabelled pool: {sorted(outside)[:5]}")
    return RoundState(
        round=state.round + 1,
        budget=state.budget,
        labelled=state.labelled | selected,
        unlabelled=state.unlabelled - selected,
        history=state.history + [manifest],
    )
