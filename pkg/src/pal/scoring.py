"""Instance-level uncertainty scoring and class-aware budget allocation.

Each class gets a tiny logistic classifier over two detection features,
pre-suppression box count and confidence, trained to separate true from
false positives on the labelled pool. The binary entropy of its TP
probability (LIUS) scores unlabelled instances; classes too rare to train
their own model share one pooled fallback classifier.

Budgets are split across classes by a weighted ratio favouring classes
under-represented in both pools, using largest-remainder rounding with
iterative redistribution of capacity-clamped surplus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import DataError
from .records import DetectionRecord, SelectionConfig

FALLBACK_CLASS_ID = -1

_ETA_CLIP = 35.0  # keeps sigmoid strictly inside (0, 1) in float64


@dataclass(frozen=True)
class ClassifierModel:
    class_id: int
    beta0: float
    beta1: float
    beta2: float
    feature_means: tuple[float, float]
    feature_stds: tuple[float, float]
    trained: bool
    fallback: bool = False


@dataclass(frozen=True)
class ClassStats:
    class_id: int
    n_c_l: int
    n_c_u: int
    r_c: float


@dataclass(frozen=True)
class BudgetPlan:
    per_class: dict[int, int]
    total_b: int


@dataclass(frozen=True)
class InstanceScore:
    image_id: int
    class_id: int
    index: int
    p_tp: Optional[float]
    lius: float


@dataclass(frozen=True)
class Candidate:
    """An image shortlisted for one class, with its best instance."""

    image_id: int
    class_id: int
    lius: float
    instance_index: int


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -_ETA_CLIP, _ETA_CLIP)))


def _fit_logistic(x: np.ndarray, y: np.ndarray, cfg: SelectionConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """L2-regularized logistic fit by Newton iteration from a zero start.

    Returns (beta, means, stds) with beta in standardized-feature space.
    The intercept is unpenalized; the schedule is fixed and randomness-free,
    so identical inputs give bitwise-identical coefficients.
    """
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    stds = np.where(stds > 0.0, stds, 1.0)
    z = (x - means) / stds
    design = np.column_stack([np.ones(len(z)), z])
    penalty = cfg.l2_lambda * np.diag([0.0, 1.0, 1.0])
    beta = np.zeros(3)
    for _ in range(cfg.max_iter):
        mu = _sigmoid(design @ beta)
        grad = design.T @ (y - mu) - cfg.l2_lambda * np.array([0.0, beta[1], beta[2]])
        hessian = design.T @ (design * (mu * (1.0 - mu))[:, None]) + penalty
        try:
            delta = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            delta, *_ = np.linalg.lstsq(hessian, grad, rcond=None)
        beta = beta + delta
        if np.max(np.abs(delta)) < cfg.tol:
            break
    return beta, means, stds


def train_clc(
    instances: Sequence[DetectionRecord],
    cfg: SelectionConfig,
    class_id: Optional[int] = None,
    fallback: bool = False,
) -> ClassifierModel:
    """Train one TP/FP classifier; untrained when either label side is scarce."""
    if class_id is None:
        if not instances:
            raise DataError("train_clc: empty instance list and no class_id")
        class_id = instances[0].class_id
    if not fallback:
        for det in instances:
            if det.class_id != class_id:
                raise DataError(f"train_clc: instance of class {det.class_id} passed for class {class_id}")
    for det in instances:
        if det.tp_label is None:
            raise DataError("train_clc: instance without tp_label")

    y = np.array([1.0 if det.tp_label else 0.0 for det in instances])
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos < cfg.min_pos or n_neg < cfg.min_neg:
        return ClassifierModel(
            class_id=class_id, beta0=0.0, beta1=0.0, beta2=0.0,
            feature_means=(0.0, 0.0), feature_stds=(1.0, 1.0),
            trained=False, fallback=fallback,
        )
    x = np.array([[float(det.pre_nms_count), det.confidence] for det in instances])
    beta, means, stds = _fit_logistic(x, y, cfg)
    return ClassifierModel(
        class_id=class_id,
        beta0=float(beta[0]), beta1=float(beta[1]), beta2=float(beta[2]),
        feature_means=(float(means[0]), float(means[1])),
        feature_stds=(float(stds[0]), float(stds[1])),
        trained=True, fallback=fallback,
    )


def train_fallback_clc(instances: Sequence[DetectionRecord], cfg: SelectionConfig) -> ClassifierModel:
    """Pooled all-class classifier serving classes whose own model is untrained."""
    return train_clc(instances, cfg, class_id=FALLBACK_CLASS_ID, fallback=True)


def predict_tp_probability(
    model: ClassifierModel,
    x1: Union[float, np.ndarray],
    x2: Union[float, np.ndarray],
):
    """TP probability of an instance with pre-NMS count x1 and confidence x2."""
    if not model.trained:
        raise DataError(f"untrained classifier queried (class {model.class_id})")
    z1 = (np.asarray(x1, dtype=float) - model.feature_means[0]) / model.feature_stds[0]
    z2 = (np.asarray(x2, dtype=float) - model.feature_means[1]) / model.feature_stds[1]
    p = _sigmoid(model.beta0 + model.beta1 * z1 + model.beta2 * z2)
    return float(p) if np.isscalar(x1) or np.ndim(p) == 0 else p


def lius_score(p: Union[float, np.ndarray]):
    """Binary entropy of a TP probability, in nats; 0 log 0 reads as 0."""
    arr = np.asarray(p, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DataError(f"probability outside [0, 1]: {p}")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(arr > 0.0, arr * np.log(arr), 0.0)
        terms = terms + np.where(arr < 1.0, (1.0 - arr) * np.log(1.0 - arr), 0.0)
    out = -terms
    return float(out) if np.ndim(out) == 0 else out


def compute_class_ratios(
    labelled: Sequence[DetectionRecord],
    unlabelled: Sequence[DetectionRecord],
    num_classes: int,
) -> list[ClassStats]:
    """Weighted under-representation ratio per declared class.

    r_c = 1 - 0.5 * (n_c_l / N_l + n_c_u / N_u) over detection counts; a class
    absent from both pools gets r_c = 1.
    """
    n_l = len(labelled)
    n_u = len(unlabelled)
    if n_l == 0 or n_u == 0:
        raise DataError("no detections in pool: cannot compute class ratios")
    count_l = [0] * num_classes
    count_u = [0] * num_classes
    for det in labelled:
        count_l[det.class_id] += 1
    for det in unlabelled:
        count_u[det.class_id] += 1
    out = []
    for class_id in range(num_classes):
        r = 1.0 - 0.5 * (count_l[class_id] / n_l + count_u[class_id] / n_u)
        out.append(ClassStats(class_id=class_id, n_c_l=count_l[class_id], n_c_u=count_u[class_id], r_c=r))
    return out


def _largest_remainder(weights: Sequence[float], total: int, ids: Sequence[int]) -> list[int]:
    """Integer shares proportional to weights, summing exactly to total."""
    s = float(sum(weights))
    raw = [total * w / s for w in weights]
    shares = [math.floor(r) for r in raw]
    leftover = max(total - sum(shares), 0)
    order = sorted(range(len(ids)), key=lambda i: (-(raw[i] - shares[i]), ids[i]))
    for i in order[:leftover]:
        shares[i] += 1
    return shares


def allocate_budgets(
    stats: Sequence[ClassStats],
    image_capacity: Mapping[int, int],
    b: int,
) -> BudgetPlan:
    """Split budget b over classes proportionally to r_c, clamped to capacity.

    capacity counts distinct unlabelled images containing the class, since
    budgets buy whole images. Clamped surplus is redistributed over unclamped
    classes (proportional to their r_c, equal split when those are all zero)
    until the budget is spent or every class is full.
    """
    if b < 1:
        raise DataError(f"allocate_budgets: budget must be >= 1, got {b}")
    caps = {st.class_id: max(int(image_capacity.get(st.class_id, 0)), 0) for st in stats}
    ratios = {st.class_id: st.r_c for st in stats}
    total_cap = sum(caps.values())
    target = min(b, total_cap)
    alloc = {cid: 0 for cid in caps}
    if target == 0:
        return BudgetPlan(per_class=alloc, total_b=b)

    active = sorted(cid for cid in caps if caps[cid] > 0)
    remaining = target
    while remaining > 0 and active:
        weights = [ratios[cid] for cid in active]
        if sum(weights) <= 0.0:
            weights = [1.0] * len(active)
        shares = _largest_remainder(weights, remaining, active)
        for cid, share in zip(active, shares):
            alloc[cid] += min(share, caps[cid] - alloc[cid])
        remaining = target - sum(alloc.values())
        active = [cid for cid in active if alloc[cid] < caps[cid]]
    return BudgetPlan(per_class=alloc, total_b=b)


def shortlist_candidates(
    scores: Sequence[InstanceScore],
    plan: BudgetPlan,
) -> dict[int, list[Candidate]]:
    """Top 2*b_c candidate images per class, ranked by best instance entropy.

    An image's class score is the max LIUS over its instances of that class
    (the maximizing instance is kept, lowest index on ties); images rank by
    score descending with ascending image_id breaking ties.
    """
    best: dict[int, dict[int, tuple[float, int]]] = {}
    for s in scores:
        per_image = best.setdefault(s.class_id, {})
        cur = per_image.get(s.image_id)
        if cur is None or s.lius > cur[0] or (s.lius == cur[0] and s.index < cur[1]):
            per_image[s.image_id] = (s.lius, s.index)
    out: dict[int, list[Candidate]] = {}
    for class_id, b_c in sorted(plan.per_class.items()):
        if b_c <= 0:
            out[class_id] = []
            continue
        per_image = best.get(class_id, {})
        ranked = sorted(per_image.items(), key=lambda kv: (-kv[1][0], kv[0]))
        out[class_id] = [
            Candidate(image_id=image_id, class_id=class_id, lius=score, instance_index=idx)
            for image_id, (score, idx) in ranked[: 2 * b_c]
        ]
    return out
