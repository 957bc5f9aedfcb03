import numpy as np
import pytest

from pal.records import (
    Annotation,
    DetectionDump,
    DetectionRecord,
    EmbeddingStore,
    GroundTruthSet,
    ImageInfo,
    Proposal,
    SelectionConfig,
)


@pytest.fixture
def default_cfg():
    return SelectionConfig()


def make_gt(classes, image_ids, annotations):
    """annotations: list of (image_id, class_id, bbox)."""
    return GroundTruthSet(
        classes=tuple(classes),
        images=tuple(ImageInfo(image_id=i, width=640.0, height=480.0) for i in image_ids),
        annotations=tuple(
            Annotation(id=k, image_id=img, class_id=cls, bbox=tuple(float(v) for v in box))
            for k, (img, cls, box) in enumerate(annotations)
        ),
    )


def make_dump(classes, image_ids, detections, proposals=()):
    """detections: (image_id, class_id, bbox, confidence[, probs]); proposals: (image_id, bbox, confidence)."""
    dets = []
    for entry in detections:
        image_id, class_id, box, conf = entry[:4]
        probs = tuple(entry[4]) if len(entry) > 4 else None
        dets.append(DetectionRecord(
            image_id=image_id, class_id=class_id,
            bbox=tuple(float(v) for v in box), confidence=float(conf),
            class_probabilities=probs,
        ))
    props = [
        Proposal(image_id=i, bbox=tuple(float(v) for v in box), confidence=float(c))
        for i, box, c in proposals
    ]
    return DetectionDump(
        classes=tuple(classes), image_ids=tuple(image_ids),
        final_detections=dets, pre_nms_proposals=props,
    )


def make_embeddings(vectors):
    """vectors: dict image_id -> sequence of floats."""
    dim = len(next(iter(vectors.values())))
    return EmbeddingStore(dim=dim, rows={k: np.asarray(v, dtype=np.float32) for k, v in vectors.items()})
