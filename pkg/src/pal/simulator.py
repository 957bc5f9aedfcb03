"""Synthetic detection worlds and desk-scale selection campaigns.

A world is a set of images with power-law class frequencies, ground-truth
boxes, and clustered context embeddings. The detector is emulated by a
per-class skill in [0, 1]: each ground-truth box is found with probability
skill_c as a true positive whose confidence and pre-suppression proposal
density rise with skill, while clutter-driven false positives stay in a
low-confidence, low-proposal regime. Detector retraining between rounds is
replaced by a saturating skill curve over labelled instance counts, which
preserves the feedback loop batch selection depends on while staying fully
reproducible from (params, seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import formats
from .engine import (
    assign_features,
    entropy_baseline_score,
    run_round,
    train_classifiers,
    update_pools,
)
from .errors import DataError
from .matching import label_tp_fp
from .records import (
    Annotation,
    DetectionDump,
    DetectionRecord,
    EmbeddingStore,
    GroundTruthSet,
    ImageInfo,
    Proposal,
    RoundState,
    SelectionConfig,
)
from .scoring import predict_tp_probability

STRATEGIES = ("random", "entropy", "pal")


def _eval_entropy(seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=(seed, 0xE7A1))


@dataclass(frozen=True)
class WorldParams:
    num_images: int = 2000
    num_classes: int = 10
    freq_exponent: float = 1.3
    image_width: float = 640.0
    image_height: float = 480.0
    min_objects: int = 1
    max_objects: int = 5
    # true positives are a quality mixture: a skill-growing share of strong
    # detections (confidence mean tp_conf_base + tp_conf_gain * skill_c, dense
    # proposals) over a floor of marginal ones that sit in the false-positive
    # feature regime, keeping early-round classes barely separable
    tp_conf_base: float = 0.33
    tp_conf_gain: float = 0.42
    tp_conf_sd: float = 0.13
    tp_strong_base: float = 0.30
    tp_marginal_conf: float = 0.36
    tp_marginal_sd: float = 0.10
    tp_marginal_proposals_mean: float = 3.0
    fp_conf_mean: float = 0.30
    fp_conf_sd: float = 0.10
    fp_rate: float = 0.6
    # fraction of false positives that are shifted duplicates of a real
    # object (many proposals, middling confidence) rather than background
    # hallucinations (few proposals, low confidence)
    fp_dup_frac: float = 0.35
    tp_proposals_mean: float = 9.0
    fp_proposals_mean: float = 1.5
    fp_dup_proposals_mean: float = 4.0
    proposal_jitter: float = 0.06
    box_jitter: float = 0.04
    embedding_dim: int = 16
    embedding_clusters: int = 8
    embedding_noise: float = 0.25
    skill_base: float = 0.15
    skill_gain: float = 0.80
    skill_rate: float = 0.02

    def validate(self) -> None:
        if self.num_images < 1 or self.num_classes < 1:
            raise DataError("world needs at least one image and one class")
        if self.freq_exponent < 0:
            raise DataError("freq_exponent must be >= 0")
        if not 1 <= self.min_objects <= self.max_objects:
            raise DataError("need 1 <= min_objects <= max_objects")
        if self.embedding_dim < 1 or self.embedding_clusters < 1:
            raise DataError("embedding dim and cluster count must be positive")
        for name in ("tp_conf_base", "fp_conf_mean"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise DataError(f"{name} must lie in (0, 1)")
        if self.tp_conf_base + self.tp_conf_gain > 1.0 + 1e-9:
            raise DataError("tp confidence mean may not exceed 1 at full skill")
        if min(self.skill_base, self.skill_gain, self.skill_rate) < 0 or self.skill_base + self.skill_gain > 1.0 + 1e-9:
            raise DataError("skill curve must stay inside [0, 1]")


class World:
    """Generated ground truth plus embeddings, with array caches for speed."""

    def __init__(self, params: WorldParams, gt: GroundTruthSet, embeddings: EmbeddingStore):
        self.params = params
        self.gt = gt
        self.embeddings = embeddings
        self.ann_image_ids = np.array([a.image_id for a in gt.annotations], dtype=np.int64)
        self.ann_class_ids = np.array([a.class_id for a in gt.annotations], dtype=np.int64)
        self.ann_boxes = np.array([a.bbox for a in gt.annotations], dtype=float).reshape(-1, 4)
        self.class_counts = np.bincount(self.ann_class_ids, minlength=params.num_classes)
        self.objects_per_image = np.bincount(self.ann_image_ids, minlength=params.num_images)

    @property
    def rare_class(self) -> int:
        # ties go to the higher class id, the long-tail end
        counts = self.class_counts
        best = 0
        for class_id in range(len(counts)):
            if counts[class_id] <= counts[best]:
                best = class_id
        return best


def class_frequencies(params: WorldParams) -> np.ndarray:
    weights = (np.arange(params.num_classes) + 1.0) ** (-params.freq_exponent)
    return weights / weights.sum()


def generate_world(params: WorldParams, seed: int) -> World:
    """Fully seeded world: boxes, classes, and clustered embeddings."""
    params.validate()
    rng = np.random.default_rng(seed)
    freqs = class_frequencies(params)
    images = []
    annotations = []
    ann_id = 0
    for image_id in range(params.num_images):
        images.append(ImageInfo(image_id=image_id, width=params.image_width, height=params.image_height))
        n_obj = int(rng.integers(params.min_objects, params.max_objects + 1))
        classes = rng.choice(params.num_classes, size=n_obj, p=freqs)
        for class_id in classes:
            bw = float(rng.uniform(40.0, 160.0))
            bh = float(rng.uniform(40.0, 160.0))
            bx = float(rng.uniform(0.0, params.image_width - bw))
            by = float(rng.uniform(0.0, params.image_height - bh))
            annotations.append(Annotation(
                id=ann_id, image_id=image_id, class_id=int(class_id), bbox=(bx, by, bw, bh),
            ))
            ann_id += 1
    centers = rng.normal(size=(params.embedding_clusters, params.embedding_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    rows = {}
    for image_id in range(params.num_images):
        cluster = int(rng.integers(params.embedding_clusters))
        vec = centers[cluster] + params.embedding_noise * rng.normal(size=params.embedding_dim)
        rows[image_id] = vec.astype(np.float32)
    gt = GroundTruthSet(
        classes=tuple(f"c{i}" for i in range(params.num_classes)),
        images=tuple(images),
        annotations=tuple(annotations),
    )
    gt.validate()
    return World(params, gt, EmbeddingStore(dim=params.embedding_dim, rows=rows))


def skill_from_counts(params: WorldParams, labelled_instances: np.ndarray) -> np.ndarray:
    """Saturating per-class detector skill given labelled instance counts."""
    raw = params.skill_base + params.skill_gain * (1.0 - np.exp(-params.skill_rate * labelled_instances))
    return np.clip(raw, 0.0, 1.0)


def _class_distribution(class_id: int, confidence: float, num_classes: int) -> tuple[float, ...]:
    if num_classes == 1:
        return (1.0,)
    rest = (1.0 - confidence) / (num_classes - 1)
    return tuple(confidence if k == class_id else rest for k in range(num_classes))


def simulate_detector(
    world: World,
    skill: np.ndarray,
    seed: int,
    image_ids: Sequence[int],
) -> DetectionDump:
    """Inference dump (detections + raw proposals) over an image subset."""
    p = world.params
    skill = np.asarray(skill, dtype=float)
    if skill.shape != (p.num_classes,) or np.any(skill < 0) or np.any(skill > 1):
        raise DataError("skill must be one value in [0, 1] per class")
    rng = np.random.default_rng(seed)
    subset = np.array(sorted(image_ids), dtype=np.int64)
    freqs = class_frequencies(p)

    detections: list[DetectionRecord] = []
    proposals: list[Proposal] = []

    mask = np.isin(world.ann_image_ids, subset)
    gt_images = world.ann_image_ids[mask]
    gt_classes = world.ann_class_ids[mask]
    gt_boxes = world.ann_boxes[mask]
    detected = rng.random(len(gt_images)) < skill[gt_classes]

    def _emit(image_id: int, class_id: int, box: np.ndarray, conf: float, n_props: int) -> None:
        detections.append(DetectionRecord(
            image_id=int(image_id), class_id=int(class_id),
            bbox=(float(box[0]), float(box[1]), float(box[2]), float(box[3])),
            confidence=conf,
            class_probabilities=_class_distribution(int(class_id), conf, p.num_classes),
        ))
        jit = rng.normal(scale=p.proposal_jitter, size=(n_props, 2)) * box[2:4]
        sizes = box[2:4] * np.clip(1.0 + rng.normal(scale=p.proposal_jitter, size=(n_props, 2)), 0.5, 1.5)
        confs = np.clip(conf + rng.normal(scale=0.08, size=n_props), 0.01, 0.99)
        for k in range(n_props):
            proposals.append(Proposal(
                image_id=int(image_id),
                bbox=(float(box[0] + jit[k, 0]), float(box[1] + jit[k, 1]),
                      float(sizes[k, 0]), float(sizes[k, 1])),
                confidence=float(confs[k]),
            ))

    order = np.argsort(gt_images, kind="stable")
    for idx in order:
        if not detected[idx]:
            continue
        image_id = gt_images[idx]
        class_id = int(gt_classes[idx])
        box = gt_boxes[idx]
        shift = rng.normal(scale=p.box_jitter, size=2) * box[2:4]
        scale = np.clip(1.0 + rng.normal(scale=p.box_jitter, size=2), 0.8, 1.2)
        jittered = np.array([box[0] + shift[0], box[1] + shift[1], box[2] * scale[0], box[3] * scale[1]])
        strong_share = p.tp_strong_base + (1.0 - p.tp_strong_base) * skill[class_id]
        if rng.random() < strong_share:
            conf = float(np.clip(
                rng.normal(p.tp_conf_base + p.tp_conf_gain * skill[class_id], p.tp_conf_sd), 0.01, 0.99,
            ))
            density = 0.4 + 0.6 * skill[class_id]
            n_props = 1 + int(rng.poisson(p.tp_proposals_mean * density))
        else:
            conf = float(np.clip(rng.normal(p.tp_marginal_conf, p.tp_marginal_sd), 0.01, 0.99))
            n_props = 1 + int(rng.poisson(p.tp_marginal_proposals_mean))
        _emit(image_id, class_id, jittered, conf, n_props)

    gt_by_image: dict[int, list[int]] = {}
    for k in range(len(gt_images)):
        gt_by_image.setdefault(int(gt_images[k]), []).append(k)

    n_obj = world.objects_per_image[subset]
    fp_counts = rng.poisson(p.fp_rate * (0.4 + 0.3 * n_obj))
    # hallucinations are only half frequency-driven, so rare classes keep a
    # supply of negatives for their classifiers
    fp_class_probs = 0.5 / p.num_classes + 0.5 * freqs
    for image_id, n_fp in zip(subset, fp_counts):
        in_image = gt_by_image.get(int(image_id), [])
        for _ in range(int(n_fp)):
            if in_image and rng.random() < p.fp_dup_frac:
                # duplicate of a real object, pushed far enough off that no
                # ground-truth match at 0.5 overlap is possible
                k = in_image[int(rng.integers(len(in_image)))]
                src = gt_boxes[k]
                class_id = int(gt_classes[k])
                sx = 1.0 if rng.random() < 0.5 else -1.0
                sy = 1.0 if rng.random() < 0.5 else -1.0
                box = np.array([
                    src[0] + sx * (0.3 + 0.2 * rng.random()) * src[2],
                    src[1] + sy * (0.3 + 0.2 * rng.random()) * src[3],
                    src[2], src[3],
                ])
                conf = float(np.clip(
                    rng.normal(0.40 + 0.15 * skill[class_id], 0.12), 0.01, 0.99,
                ))
                n_props = 1 + int(rng.poisson(p.fp_dup_proposals_mean))
            else:
                class_id = int(rng.choice(p.num_classes, p=fp_class_probs))
                bw = float(rng.uniform(40.0, 160.0))
                bh = float(rng.uniform(40.0, 160.0))
                box = np.array([
                    rng.uniform(0.0, p.image_width - bw), rng.uniform(0.0, p.image_height - bh), bw, bh,
                ])
                conf = float(np.clip(rng.normal(p.fp_conf_mean, p.fp_conf_sd), 0.01, 0.99))
                n_props = 1 + int(rng.poisson(p.fp_proposals_mean))
            _emit(image_id, class_id, box, conf, n_props)

    dump = DetectionDump(
        classes=world.gt.classes,
        image_ids=tuple(int(i) for i in subset),
        final_detections=detections,
        pre_nms_proposals=proposals,
    )
    dump.validate()
    return dump


# ---------------------------------------------------------------------------
# campaigns

@dataclass(frozen=True)
class CampaignRow:
    strategy: str
    round: int
    labelled: int
    labelled_fraction: float
    proxy: float
    rare_share: float
    clc_accuracy: Optional[float]
    class_instances: tuple[int, ...]


@dataclass(frozen=True)
class CampaignReport:
    num_images: int
    num_classes: int
    rounds: int
    budget: int
    seed: int
    rare_class: int
    classes: tuple[str, ...]
    rows: tuple[CampaignRow, ...]

    def strategy_rows(self, strategy: str) -> list[CampaignRow]:
        return [row for row in self.rows if row.strategy == strategy]


def _labelled_instances(world: World, labelled: set[int]) -> np.ndarray:
    ids = np.array(sorted(labelled), dtype=np.int64)
    mask = np.isin(world.ann_image_ids, ids)
    return np.bincount(world.ann_class_ids[mask], minlength=world.params.num_classes)


def _clc_accuracy(
    train_world: World,
    labelled_dump: DetectionDump,
    eval_world: World,
    eval_dump: DetectionDump,
    cfg: SelectionConfig,
    class_id: int,
) -> Optional[float]:
    """Held-out TP/FP accuracy: train on the labelled pool, test on one
    class's detections over a disjoint validation image set."""
    assign_features(labelled_dump, cfg.iou_prenms)
    label_tp_fp(labelled_dump.final_detections, train_world.gt, cfg.iou_tp)
    models, fallback = train_classifiers(
        labelled_dump.final_detections, train_world.params.num_classes, cfg
    )
    model = models.get(class_id)
    if model is None or not model.trained:
        model = fallback
    if not model.trained:
        return None
    assign_features(eval_dump, cfg.iou_prenms)
    held_out = [d for d in eval_dump.final_detections if d.class_id == class_id]
    if not held_out:
        return None
    label_tp_fp(held_out, eval_world.gt, cfg.iou_tp)
    x1 = np.array([float(d.pre_nms_count) for d in held_out])
    x2 = np.array([d.confidence for d in held_out])
    pred = np.atleast_1d(predict_tp_probability(model, x1, x2)) >= 0.5
    truth = np.array([bool(d.tp_label) for d in held_out])
    return float(np.mean(pred == truth))


def _select_random(unlabelled: set[int], budget: int, rng: np.random.Generator) -> set[int]:
    pool = sorted(unlabelled)
    take = min(budget, len(pool))
    return set(int(i) for i in rng.choice(pool, size=take, replace=False))


def _select_entropy(unlabelled_dump: DetectionDump, budget: int) -> set[int]:
    by_image = unlabelled_dump.detections_by_image()
    ranked = sorted(
        ((entropy_baseline_score(dets), image_id) for image_id, dets in by_image.items()),
        key=lambda t: (-t[0], t[1]),
    )
    return {image_id for _, image_id in ranked[:budget]}


def run_campaign(
    world: World,
    strategy: str,
    rounds: int,
    budget: int,
    seed: int,
    cfg: Optional[SelectionConfig] = None,
    initial_labelled: Optional[int] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> CampaignReport:
    """Iterate select/annotate/update for one strategy and report each round.

    The detection-quality proxy is the unweighted mean over classes of the
    per-class expected recall (which equals the skill), mirroring class-mean
    detection metrics; rare_share is the labelled fraction of the rarest
    class's instances.
    """
    if strategy not in STRATEGIES:
        raise DataError(f"unknown strategy '{strategy}', want one of {STRATEGIES}")
    if cfg is None:
        cfg = SelectionConfig()
    p = world.params
    initial = budget if initial_labelled is None else initial_labelled
    if initial < 1 or initial >= p.num_images:
        raise DataError(f"initial labelled size {initial} out of range")
    if budget * rounds > p.num_images - initial:
        raise DataError("budget * rounds exceeds the unlabelled pool")

    root = np.random.SeedSequence(entropy=(seed, STRATEGIES.index(strategy)))
    init_rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0xA11)))
    all_ids = list(range(p.num_images))
    labelled = set(int(i) for i in init_rng.choice(all_ids, size=initial, replace=False))
    unlabelled = set(all_ids) - labelled

    # classifier quality is measured on a disjoint validation world, shared
    # across strategies of the same campaign seed for paired comparisons
    eval_world = generate_world(p, seed=_eval_entropy(seed))

    rare = world.rare_class
    rare_total = max(int(world.class_counts[rare]), 1)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        formats.write_ground_truth(world.gt, out_path / "ground_truth.txt")
        formats.write_embeddings(world.embeddings, out_path / "embeddings.bin")

    rows: list[CampaignRow] = []
    round_seqs = root.spawn(rounds + 1)
    for r in range(rounds + 1):
        counts = _labelled_instances(world, labelled)
        skill = skill_from_counts(p, counts)
        sub = round_seqs[r].spawn(3)
        labelled_dump = simulate_detector(world, skill, sub[0].generate_state(1)[0], sorted(labelled))
        unlabelled_dump = simulate_detector(world, skill, sub[1].generate_state(1)[0], sorted(unlabelled))
        eval_seed = np.random.SeedSequence(entropy=(seed, 0xE7A1, r)).generate_state(1)[0]
        eval_dump = simulate_detector(eval_world, skill, eval_seed, range(p.num_images))
        accuracy = _clc_accuracy(world, labelled_dump, eval_world, eval_dump, cfg, rare)
        rows.append(CampaignRow(
            strategy=strategy,
            round=r,
            labelled=len(labelled),
            labelled_fraction=len(labelled) / p.num_images,
            proxy=float(np.mean(skill)),
            rare_share=float(counts[rare]) / rare_total,
            clc_accuracy=accuracy,
            class_instances=tuple(int(c) for c in counts),
        ))
        if r == rounds:
            break

        if out_path is not None:
            round_dir = out_path / f"round_{r + 1}"
            round_dir.mkdir(exist_ok=True)
            formats.write_detection_dump(labelled_dump, round_dir / "labelled_dump.txt")
            formats.write_detection_dump(unlabelled_dump, round_dir / "unlabelled_dump.txt")

        take = min(budget, len(unlabelled))
        if strategy == "random":
            selected = _select_random(unlabelled, take, np.random.default_rng(sub[2]))
        elif strategy == "entropy":
            selected = _select_entropy(unlabelled_dump, take)
        else:
            state = RoundState(round=r + 1, budget=take, labelled=set(labelled), unlabelled=set(unlabelled))
            manifest = run_round(world.gt, labelled_dump, unlabelled_dump, world.embeddings, cfg, state)
            if out_path is not None:
                formats.write_selection_manifest(manifest, out_path / f"round_{r + 1}" / "manifest.txt")
                formats.write_round_state(update_pools(state, manifest), out_path / f"round_{r + 1}" / "state.txt")
            selected = manifest.selected_ids()
        labelled |= selected
        unlabelled -= selected

    return CampaignReport(
        num_images=p.num_images,
        num_classes=p.num_classes,
        rounds=rounds,
        budget=budget,
        seed=seed,
        rare_class=rare,
        classes=world.gt.classes,
        rows=tuple(rows),
    )


def merge_reports(reports: Sequence[CampaignReport]) -> CampaignReport:
    """Combine per-strategy reports over the same world into one file."""
    first = reports[0]
    for rep in reports[1:]:
        if (rep.num_images, rep.num_classes, rep.rounds, rep.budget, rep.seed) != (
            first.num_images, first.num_classes, first.rounds, first.budget, first.seed,
        ):
            raise DataError("cannot merge reports from different campaign settings")
    rows = tuple(row for rep in reports for row in rep.rows)
    return replace_rows(first, rows)


def replace_rows(report: CampaignReport, rows: tuple[CampaignRow, ...]) -> CampaignReport:
    return CampaignReport(
        num_images=report.num_images, num_classes=report.num_classes,
        rounds=report.rounds, budget=report.budget, seed=report.seed,
        rare_class=report.rare_class, classes=report.classes, rows=rows,
    )


def write_campaign_report(report: CampaignReport, path: Union[str, Path]) -> None:
    out = [f"#schema campaign_report 1", "#classes " + ",".join(report.classes)]
    out.append(
        f"meta images={report.num_images} rounds={report.rounds} budget={report.budget}"
        f" seed={report.seed} rare_class={report.rare_class}"
    )
    for row in report.rows:
        line = (
            f"row strategy={row.strategy} round={row.round} labelled={row.labelled}"
            f" labelled_fraction={row.labelled_fraction:.6f} proxy={row.proxy:.6f}"
            f" rare_share={row.rare_share:.6f}"
        )
        if row.clc_accuracy is not None:
            line += f" clc_accuracy={row.clc_accuracy:.6f}"
        line += " class_instances=" + ",".join(str(c) for c in row.class_instances)
        out.append(line)
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_campaign_report(path: Union[str, Path]) -> CampaignReport:
    reader = formats._LineReader(path, ("campaign_report",))
    meta: dict[str, str] = {}
    rows: list[CampaignRow] = []
    for line_no, kind, fields in reader.records():
        where = f"{reader.path}:{line_no}"
        if kind == "meta":
            meta = fields
        elif kind == "row":
            acc = fields.get("clc_accuracy")
            rows.append(CampaignRow(
                strategy=fields["strategy"],
                round=int(fields["round"]),
                labelled=int(fields["labelled"]),
                labelled_fraction=float(fields["labelled_fraction"]),
                proxy=float(fields["proxy"]),
                rare_share=float(fields["rare_share"]),
                clc_accuracy=None if acc is None else float(acc),
                class_instances=tuple(int(c) for c in fields["class_instances"].split(",")),
            ))
        else:
            raise DataError(f"{where}: unknown record kind '{kind}'")
    if not meta:
        raise DataError(f"{reader.path}: report missing meta record")
    return CampaignReport(
        num_images=int(meta["images"]),
        num_classes=len(reader.classes),
        rounds=int(meta["rounds"]),
        budget=int(meta["budget"]),
        seed=int(meta["seed"]),
        rare_class=int(meta["rare_class"]),
        classes=reader.classes,
        rows=tuple(rows),
    )


def report_table(report: CampaignReport) -> str:
    """Human-readable learning curves, one block per strategy."""
    lines = [
        f"campaign: {report.num_images} images, {len(report.classes)} classes,"
        f" budget {report.budget}/round, seed {report.seed}, rare class {report.rare_class}",
    ]
    strategies = sorted({row.strategy for row in report.rows}, key=STRATEGIES.index)
    for strategy in strategies:
        lines.append(f"\nstrategy {strategy}")
        lines.append(f"  {'round':>5} {'labelled':>9} {'fraction':>9} {'proxy':>8} {'rare_share':>10} {'clc_acc':>8}")
        for row in report.strategy_rows(strategy):
            acc = f"{row.clc_accuracy:.4f}" if row.clc_accuracy is not None else "-"
            lines.append(
                f"  {row.round:>5} {row.labelled:>9} {row.labelled_fraction:>9.4f}"
                f" {row.proxy:>8.4f} {row.rare_share:>10.4f} {acc:>8}"
            )
    return "\n".join(lines)
