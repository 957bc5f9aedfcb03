"""Randomized miniature selection instances for oracle-equivalence checks."""

import numpy as np

from pal.records import (
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


def _random_box(rng, max_w=640.0, max_h=480.0):
    w = float(rng.uniform(8.0, 120.0))
    h = float(rng.uniform(8.0, 120.0))
    x = float(rng.uniform(0.0, max_w - w))
    y = float(rng.uniform(0.0, max_h - h))
    return (x, y, w, h)


def _jitter_box(rng, box, scale):
    x, y, w, h = box
    return (
        x + float(rng.normal(0.0, scale)) * w,
        y + float(rng.normal(0.0, scale)) * h,
        max(w * (1.0 + float(rng.normal(0.0, scale))), 1.0),
        max(h * (1.0 + float(rng.normal(0.0, scale))), 1.0),
    )


def _random_config(rng):
    if rng.random() < 0.5:
        return SelectionConfig()
    alpha = float(rng.uniform(0.5, 1.0))
    d = 1.0 - alpha
    gamma = d * float(rng.uniform(0.0, 1.0))
    beta = (d - gamma) / 2.0
    return SelectionConfig(alpha=alpha, beta=beta, gamma=gamma, d=d)


def random_miniature(seed):
    """A full run_round input tuple, at most 20 images and 5 classes."""
    rng = np.random.default_rng(seed)
    n_images = int(rng.integers(6, 21))
    n_classes = int(rng.integers(2, 6))
    classes = tuple(f"k{i}" for i in range(n_classes))

    images = tuple(ImageInfo(image_id=i, width=640.0, height=480.0) for i in range(n_images))
    annotations = []
    for image_id in range(n_images):
        for _ in range(int(rng.integers(0, 4))):
            annotations.append(Annotation(
                id=len(annotations), image_id=image_id,
                class_id=int(rng.integers(n_classes)), bbox=_random_box(rng),
            ))
    gt = GroundTruthSet(classes=classes, images=images, annotations=annotations and tuple(annotations) or ())

    order = list(rng.permutation(n_images))
    n_lab = int(rng.integers(2, n_images - 1))
    labelled = set(int(i) for i in order[:n_lab])
    unlabelled = set(int(i) for i in order[n_lab:])

    def make_pool_dump(pool):
        dets, props = [], []
        ann_by_image = {}
        for ann in gt.annotations:
            ann_by_image.setdefault(ann.image_id, []).append(ann)
        for image_id in sorted(pool):
            for ann in ann_by_image.get(image_id, []):
                if rng.random() < 0.8:
                    dets.append(_make_det(rng, image_id, ann.class_id, _jitter_box(rng, ann.bbox, 0.05), n_classes, high=True))
            for _ in range(int(rng.integers(0, 3))):
                dets.append(_make_det(rng, image_id, int(rng.integers(n_classes)), _random_box(rng), n_classes, high=False))
        for det in dets:
            for _ in range(int(rng.integers(0, 7))):
                props.append(Proposal(
                    image_id=det.image_id, bbox=_jitter_box(rng, det.bbox, 0.08),
                    confidence=float(rng.uniform(0.05, 0.95)),
                ))
        for image_id in sorted(pool):
            if rng.random() < 0.2:
                props.append(Proposal(image_id=image_id, bbox=_random_box(rng), confidence=float(rng.uniform())))
        if not dets:  # class ratio stage needs at least one detection per pool
            image_id = sorted(pool)[0]
            dets.append(_make_det(rng, image_id, 0, _random_box(rng), n_classes, high=False))
        dump = DetectionDump(
            classes=classes, image_ids=tuple(sorted(pool)),
            final_detections=dets, pre_nms_proposals=props,
        )
        dump.validate()
        return dump

    labelled_dump = make_pool_dump(labelled)
    unlabelled_dump = make_pool_dump(unlabelled)

    dim = int(rng.integers(3, 9))
    rows = {}
    prev = None
    for image_id in range(n_images):
        if prev is not None and rng.random() < 0.15:
            rows[image_id] = prev.copy()  # exact duplicates exercise full penalties
        else:
            rows[image_id] = rng.normal(size=dim).astype(np.float32)
        prev = rows[image_id]
    embeddings = EmbeddingStore(dim=dim, rows=rows)

    cfg = _random_config(rng)
    budget = int(rng.integers(1, len(unlabelled) + 4))
    state = RoundState(round=int(rng.integers(1, 4)), budget=budget,
                       labelled=labelled, unlabelled=unlabelled)
    return gt, labelled_dump, unlabelled_dump, embeddings, cfg, state


def _make_det(rng, image_id, class_id, box, n_classes, high):
    conf = float(rng.uniform(0.55, 0.95)) if high else float(rng.uniform(0.05, 0.5))
    probs = None
    if rng.random() < 0.5:
        raw = rng.dirichlet(np.ones(n_classes) * 0.7)
        raw[class_id] += 1.0
        raw /= raw.sum()
        probs = tuple(float(p) for p in raw)
    return DetectionRecord(
        image_id=image_id, class_id=class_id, bbox=box,
        confidence=conf, class_probabilities=probs,
    )


def assert_matches_oracle(manifest, expected, state):
    """Engine manifest vs the oracle's nested-dict recomputation: identical
    ids everywhere, every real within 1e-9 of the oracle's 6-decimal value."""
    got_blocks = {blk.class_id: blk for blk in manifest.per_class}
    assert set(got_blocks) == set(expected["per_class"]), "class block mismatch"
    for class_id, exp in expected["per_class"].items():
        blk = got_blocks[class_id]
        assert abs(blk.r_c - round(exp["r_c"], 6)) <= 1e-9, f"r_c mismatch for class {class_id}"
        assert blk.b_c == exp["b_c"], f"b_c mismatch for class {class_id}"
        assert blk.deficit == exp["b_c"] - len(exp["selected"])
        assert {s.image_id for s in blk.selected} == set(exp["selected"]), (
            f"selection mismatch for class {class_id}"
        )
        for sel in blk.selected:
            row = exp["selected"][sel.image_id]
            for field in ("lius", "cwie", "rcdi", "rcsp", "score"):
                assert abs(getattr(sel, field) - round(row[field], 6)) <= 1e-9, (
                    f"{field} mismatch for image {sel.image_id} class {class_id}"
                )
    assert list(manifest.fill) == list(expected["fill"])
    assert manifest.selected_ids() <= state.unlabelled
    assert manifest.total_selected <= state.budget
