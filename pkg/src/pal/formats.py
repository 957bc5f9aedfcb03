"""Readers and writers for every on-disk artifact.

Text artifacts are line-delimited: two header lines (``#schema <name> <version>``
and ``#classes <comma-separated names>``) followed by one record per line,
``<kind> key=value ...``. Floats in dumps and ground truth are serialized with
``repr`` so write-then-read reproduces the value exactly; manifests and reports
use fixed 6-decimal formatting so golden files are byte-stable.

Embeddings use a compact binary layout: magic ``PALEMB1\\0``, little-endian
u32 dim, u32 count, then count records of (u64 image_id, dim x f32).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .errors import DataError
from .records import (
    Annotation,
    ClassSelection,
    DetectionDump,
    DetectionRecord,
    EmbeddingStore,
    GroundTruthSet,
    ImageInfo,
    Proposal,
    RoundState,
    SelectedImage,
    SelectionConfig,
    SelectionManifest,
)

PathLike = Union[str, Path]

EMBEDDING_MAGIC = b"PALEMB1\x00"

_CONFIG_KEYS = {
    "alpha", "beta", "gamma", "d", "budget_b", "iou_prenms", "iou_tp",
    "l2_lambda", "tol", "max_iter", "min_pos", "min_neg", "seed",
}


def _fmt(value: float) -> str:
    return repr(float(value))


def _fmt6(value: float) -> str:
    return f"{value:.6f}"


class _LineReader:
    """Tokenizes one artifact file and checks its header block."""

    def __init__(self, path: PathLike, expect_schema: tuple[str, ...]):
        self.path = str(path)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"{path}: {exc}") from exc
        self.lines = text.splitlines()
        if len(self.lines) < 2:
            raise DataError(f"{self.path}: missing header block")
        schema_line = self.lines[0].split()
        if len(schema_line) != 3 or schema_line[0] != "#schema":
            raise DataError(f"{self.path}:1: expected '#schema <name> <version>'")
        self.schema, self.version = schema_line[1], schema_line[2]
        if self.schema not in expect_schema:
            raise DataError(f"{self.path}: schema '{self.schema}' not one of {expect_schema}")
        if not self.lines[1].startswith("#classes"):
            raise DataError(f"{self.path}:2: expected '#classes <names>'")
        rest = self.lines[1][len("#classes"):].strip()
        self.classes: tuple[str, ...] = tuple(rest.split(",")) if rest else ()

    def records(self) -> Iterable[tuple[int, str, dict[str, str]]]:
        for line_no, line in enumerate(self.lines[2:], start=3):
            if not line.strip() or line.startswith("#"):
                continue
            tokens = line.split()
            kind = tokens[0]
            fields: dict[str, str] = {}
            for tok in tokens[1:]:
                if "=" not in tok:
                    raise DataError(f"{self.path}:{line_no}: malformed field '{tok}'")
                key, _, value = tok.partition("=")
                if key in fields:
                    raise DataError(f"{self.path}:{line_no}: duplicate field '{key}'")
                fields[key] = value
            yield line_no, kind, fields


def _need(fields: dict[str, str], keys: tuple[str, ...], where: str) -> None:
    missing = [k for k in keys if k not in fields]
    if missing:
        raise DataError(f"{where}: missing fields {missing}")


def _to_int(value: str, where: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise DataError(f"{where}: expected integer, got '{value}'") from exc


def _to_float(value: str, where: str) -> float:
    try:
        out = float(value)
    except ValueError as exc:
        raise DataError(f"{where}: expected number, got '{value}'") from exc
    if math.isnan(out) or math.isinf(out):
        raise DataError(f"{where}: non-finite value '{value}'")
    return out


def _write_text(path: PathLike, chunks: list[str]) -> None:
    Path(path).write_text("\n".join(chunks) + "\n", encoding="utf-8")


def _header(schema: str, classes: tuple[str, ...]) -> list[str]:
    for name in classes:
        if "," in name or " " in name:
            raise DataError(f"class name '{name}' may not contain spaces or commas")
    return [f"#schema {schema} 1", "#classes " + ",".join(classes)]


# ---------------------------------------------------------------------------
# config

def load_config(path: PathLike) -> SelectionConfig:
    """Parse a JSON config, fill defaults, and enforce the weight constraints."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: config parse failure: {exc}") from exc
    if not isinstance(raw, dict):
        raise DataError(f"{path}: config must be a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise DataError(f"{path}: unknown config keys {sorted(unknown)}")
    cfg = SelectionConfig(**raw)
    cfg.validate()
    return cfg


def write_config(cfg: SelectionConfig, path: PathLike) -> None:
    Path(path).write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# ground truth

def load_ground_truth(path: PathLike) -> GroundTruthSet:
    reader = _LineReader(path, ("ground_truth",))
    images: list[ImageInfo] = []
    annotations: list[Annotation] = []
    for line_no, kind, fields in reader.records():
        where = f"{reader.path}:{line_no}"
        if kind == "image":
            _need(fields, ("id", "width", "height"), where)
            images.append(ImageInfo(
                image_id=_to_int(fields["id"], where),
                width=_to_float(fields["width"], where),
                height=_to_float(fields["height"], where),
            ))
        elif kind == "annotation":
            _need(fields, ("id", "image_id", "class_id", "x", "y", "w", "h"), where)
            annotations.append(Annotation(
                id=_to_int(fields["id"], where),
                image_id=_to_int(fields["image_id"], where),
                class_id=_to_int(fields["class_id"], where),
                bbox=(
                    _to_float(fields["x"], where), _to_float(fields["y"], where),
                    _to_float(fields["w"], where), _to_float(fields["h"], where),
                ),
            ))
        else:
            raise DataError(f"{where}: unknown record kind '{kind}'")
    gt = GroundTruthSet(classes=reader.classes, images=tuple(images), annotations=tuple(annotations))
    gt.validate()
    return gt


def write_ground_truth(gt: GroundTruthSet, path: PathLike) -> None:
    gt.validate()
    out = _header("ground_truth", gt.classes)
    for im in gt.images:
        out.append(f"image id={im.image_id} width={_fmt(im.width)} height={_fmt(im.height)}")
    for ann in gt.annotations:
        x, y, w, h = ann.bbox
        out.append(
            f"annotation id={ann.id} image_id={ann.image_id} class_id={ann.class_id}"
            f" x={_fmt(x)} y={_fmt(y)} w={_fmt(w)} h={_fmt(h)}"
        )
    _write_text(path, out)


# ---------------------------------------------------------------------------
# detection dumps (final detections and/or pre-NMS proposals)

def load_detection_dump(path: PathLike) -> DetectionDump:
    reader = _LineReader(path, ("detections", "proposals"))
    image_ids: list[int] = []
    detections: list[DetectionRecord] = []
    proposals: list[Proposal] = []
    for line_no, kind, fields in reader.records():
        where = f"{reader.path}:{line_no}"
        if kind == "image":
            _need(fields, ("id",), where)
            image_ids.append(_to_int(fields["id"], where))
        elif kind == "detection":
            _need(fields, ("image_id", "class_id", "x", "y", "w", "h", "confidence"), where)
            probs: Optional[tuple[float, ...]] = None
            if "probs" in fields:
                probs = tuple(_to_float(p, where) for p in fields["probs"].split(","))
            detections.append(DetectionRecord(
                image_id=_to_int(fields["image_id"], where),
                class_id=_to_int(fields["class_id"], where),
                bbox=(
                    _to_float(fields["x"], where), _to_float(fields["y"], where),
                    _to_float(fields["w"], where), _to_float(fields["h"], where),
                ),
                confidence=_to_float(fields["confidence"], where),
                class_probabilities=probs,
            ))
        elif kind == "proposal":
            _need(fields, ("image_id", "x", "y", "w", "h", "confidence"), where)
            proposals.append(Proposal(
                image_id=_to_int(fields["image_id"], where),
                bbox=(
                    _to_float(fields["x"], where), _to_float(fields["y"], where),
                    _to_float(fields["w"], where), _to_float(fields["h"], where),
                ),
                confidence=_to_float(fields["confidence"], where),
            ))
        else:
            raise DataError(f"{where}: unknown record kind '{kind}'")
    dump = DetectionDump(
        classes=reader.classes,
        image_ids=tuple(image_ids),
        final_detections=detections,
        pre_nms_proposals=proposals,
    )
    dump.validate()
    return dump


def write_detection_dump(dump: DetectionDump, path: PathLike, schema: str = "detections") -> None:
    dump.validate()
    out = _header(schema, dump.classes)
    for image_id in dump.image_ids:
        out.append(f"image id={image_id}")
    for det in dump.final_detections:
        x, y, w, h = det.bbox
        line = (
            f"detection image_id={det.image_id} class_id={det.class_id}"
            f" x={_fmt(x)} y={_fmt(y)} w={_fmt(w)} h={_fmt(h)} confidence={_fmt(det.confidence)}"
        )
        if det.class_probabilities is not None:
            line += " probs=" + ",".join(_fmt(p) for p in det.class_probabilities)
        out.append(line)
    for prop in dump.pre_nms_proposals:
        x, y, w, h = prop.bbox
        out.append(
            f"proposal image_id={prop.image_id}"
            f" x={_fmt(x)} y={_fmt(y)} w={_fmt(w)} h={_fmt(h)} confidence={_fmt(prop.confidence)}"
        )
    _write_text(path, out)


def merge_dumps(detections: DetectionDump, proposals: DetectionDump) -> DetectionDump:
    """Combine a detections-only file with a proposals-only file."""
    from .records import ensure_same_classes

    classes = ensure_same_classes(detections.classes, proposals.classes)
    ids = list(detections.image_ids)
    known = set(ids)
    for image_id in proposals.image_ids:
        if image_id not in known:
            ids.append(image_id)
            known.add(image_id)
    merged = DetectionDump(
        classes=classes,
        image_ids=tuple(ids),
        final_detections=list(detections.final_detections) + list(proposals.final_detections),
        pre_nms_proposals=list(detections.pre_nms_proposals) + list(proposals.pre_nms_proposals),
    )
    merged.validate()
    return merged


# ---------------------------------------------------------------------------
# embeddings

def load_embeddings(path: PathLike) -> EmbeddingStore:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if len(blob) < len(EMBEDDING_MAGIC) + 8:
        raise DataError(f"{path}: truncated embedding file")
    if blob[: len(EMBEDDING_MAGIC)] != EMBEDDING_MAGIC:
        raise DataError(f"{path}: bad magic bytes, not an embedding file")
    dim, count = struct.unpack_from("<II", blob, len(EMBEDDING_MAGIC))
    if dim == 0:
        raise DataError(f"{path}: embedding dim must be positive")
    offset = len(EMBEDDING_MAGIC) + 8
    record_size = 8 + 4 * dim
    if len(blob) != offset + count * record_size:
        raise DataError(
            f"{path}: truncated embedding file: have {len(blob)} bytes,"
            f" want {offset + count * record_size} for count={count} dim={dim}"
        )
    rows: dict[int, np.ndarray] = {}
    for _ in range(count):
        (image_id,) = struct.unpack_from("<Q", blob, offset)
        vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset + 8).copy()
        if image_id in rows:
            raise DataError(f"{path}: duplicate image_id {image_id}")
        if not np.all(np.isfinite(vec)):
            raise DataError(f"{path}: embedding for image {image_id} contains NaN/Inf")
        rows[image_id] = vec
        offset += record_size
    return EmbeddingStore(dim=dim, rows=rows)


def write_embeddings(store: EmbeddingStore, path: PathLike) -> None:
    parts = [EMBEDDING_MAGIC, struct.pack("<II", store.dim, len(store.rows))]
    for image_id in sorted(store.rows):
        parts.append(struct.pack("<Q", image_id))
        parts.append(store.rows[image_id].astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


# ---------------------------------------------------------------------------
# selection manifests

def write_selection_manifest(manifest: SelectionManifest, path: PathLike) -> None:
    """Emit the manifest deterministically.

    Class blocks appear in ascending class_id order and selected images in
    ascending image_id order within each block; every real is printed with
    6 decimals so identical manifests are byte-identical files.
    """
    manifest.validate()
    out = _header("selection_manifest", manifest.classes)
    out.append(f"meta round={manifest.round} budget={manifest.budget}")
    for blk in sorted(manifest.per_class, key=lambda b: b.class_id):
        out.append(
            f"class class_id={blk.class_id} r_c={_fmt6(blk.r_c)} b_c={blk.b_c} deficit={blk.deficit}"
        )
        for sel in sorted(blk.selected, key=lambda s: s.image_id):
            out.append(
                f"selected class_id={blk.class_id} image_id={sel.image_id}"
                f" lius={_fmt6(sel.lius)} cwie={_fmt6(sel.cwie)} rcdi={_fmt6(sel.rcdi)}"
                f" rcsp={_fmt6(sel.rcsp)} score={_fmt6(sel.score)}"
            )
    for image_id in sorted(manifest.fill):
        out.append(f"fill image_id={image_id}")
    out.append(
        f"totals selected={manifest.total_selected} fill={len(manifest.fill)}"
        f" deficit={sum(blk.deficit for blk in manifest.per_class)}"
    )
    _write_text(path, out)


def load_selection_manifest(path: PathLike) -> SelectionManifest:
    reader = _LineReader(path, ("selection_manifest",))
    round_no: Optional[int] = None
    budget: Optional[int] = None
    blocks: dict[int, dict] = {}
    fill: list[int] = []
    for line_no, kind, fields in reader.records():
        where = f"{reader.path}:{line_no}"
        if kind == "meta":
            _need(fields, ("round", "budget"), where)
            round_no = _to_int(fields["round"], where)
            budget = _to_int(fields["budget"], where)
        elif kind == "class":
            _need(fields, ("class_id", "r_c", "b_c", "deficit"), where)
            cid = _to_int(fields["class_id"], where)
            blocks[cid] = {
                "r_c": _to_float(fields["r_c"], where),
                "b_c": _to_int(fields["b_c"], where),
                "deficit": _to_int(fields["deficit"], where),
                "selected": [],
            }
        elif kind == "selected":
            _need(fields, ("class_id", "image_id", "lius", "cwie", "rcdi", "rcsp", "score"), where)
            cid = _to_int(fields["class_id"], where)
            if cid not in blocks:
                raise DataError(f"{where}: selected row before its class row")
            blocks[cid]["selected"].append(SelectedImage(
                image_id=_to_int(fields["image_id"], where),
                lius=_to_float(fields["lius"], where),
                cwie=_to_float(fields["cwie"], where),
                rcdi=_to_float(fields["rcdi"], where),
                rcsp=_to_float(fields["rcsp"], where),
                score=_to_float(fields["score"], where),
            ))
        elif kind == "fill":
            _need(fields, ("image_id",), where)
            fill.append(_to_int(fields["image_id"], where))
        elif kind == "totals":
            pass
        else:
            raise DataError(f"{where}: unknown record kind '{kind}'")
    if round_no is None or budget is None:
        raise DataError(f"{reader.path}: manifest missing its meta line")
    per_class = tuple(
        ClassSelection(
            class_id=cid,
            r_c=blk["r_c"],
            b_c=blk["b_c"],
            deficit=blk["deficit"],
            selected=tuple(blk["selected"]),
        )
        for cid, blk in sorted(blocks.items())
    )
    manifest = SelectionManifest(
        round=round_no, classes=reader.classes, per_class=per_class,
        fill=tuple(fill), budget=budget,
    )
    manifest.validate()
    return manifest


# ---------------------------------------------------------------------------
# round state

def write_round_state(state: RoundState, path: PathLike) -> None:
    state.validate()
    out = _header("round_state", ())
    out.append(f"state round={state.round} budget={state.budget}")
    for image_id in sorted(state.labelled):
        out.append(f"labelled id={image_id}")
    for image_id in sorted(state.unlabelled):
        out.append(f"unlabelled id={image_id}")
    _write_text(path, out)


def load_round_state(path: PathLike) -> RoundState:
    reader = _LineReader(path, ("round_state",))
    round_no = budget = None
    labelled: set[int] = set()
    unlabelled: set[int] = set()
    for line_no, kind, fields in reader.records():
        where = f"{reader.path}:{line_no}"
        if kind == "state":
            _need(fields, ("round", "budget"), where)
            round_no = _to_int(fields["round"], where)
            budget = _to_int(fields["budget"], where)
        elif kind == "labelled":
            _need(fields, ("id",), where)
            labelled.add(_to_int(fields["id"], where))
        elif kind == "unlabelled":
            _need(fields, ("id",), where)
            unlabelled.add(_to_int(fields["id"], where))
        else:
            raise DataError(f"{where}: unknown record kind '{kind}'")
    if round_no is None or budget is None:
        raise DataError(f"{reader.path}: state file missing 'state' record")
    state = RoundState(round=round_no, budget=budget, labelled=labelled, unlabelled=unlabelled)
    state.validate()
    return state


# ---------------------------------------------------------------------------
# featureized instances (output of the match stage)

def write_features(
    classes: tuple[str, ...], records: list[DetectionRecord], path: PathLike,
    image_ids: tuple[int, ...],
) -> None:
    out = _header("features", classes)
    for image_id in image_ids:
        out.append(f"image id={image_id}")
    for det in records:
        x, y, w, h = det.bbox
        line = (
            f"instance image_id={det.image_id} class_id={det.class_id}"
            f" x={_fmt(x)} y={_fmt(y)} w={_fmt(w)} h={_fmt(h)}"
            f" confidence={_fmt(det.confidence)} pre_nms_count={det.pre_nms_count}"
        )
        if det.tp_label is not None:
            line += f" tp_label={int(det.tp_label)}"
        out.append(line)
    _write_text(path, out)


def load_features(path: PathLike) -> tuple[tuple[str, ...], tuple[int, ...], list[DetectionRecord]]:
    reader = _LineReader(path, ("features",))
    image_ids: list[int] = []
    records: list[DetectionRecord] = []
    for line_no, kind, fields in reader.records():
        where = f"{reader.path}:{line_no}"
        if kind == "image":
            _need(fields, ("id",), where)
            image_ids.append(_to_int(fields["id"], where))
        elif kind == "instance":
            _need(fields, ("image_id", "class_id", "x", "y", "w", "h", "confidence", "pre_nms_count"), where)
            tp = fields.get("tp_label")
            records.append(DetectionRecord(
                image_id=_to_int(fields["image_id"], where),
                class_id=_to_int(fields["class_id"], where),
                bbox=(
                    _to_float(fields["x"], where), _to_float(fields["y"], where),
                    _to_float(fields["w"], where), _to_float(fields["h"], where),
                ),
                confidence=_to_float(fields["confidence"], where),
                pre_nms_count=_to_int(fields["pre_nms_count"], where),
                tp_label=None if tp is None else bool(_to_int(tp, where)),
            ))
        else:
            raise DataError(f"{where}: unknown record kind '{kind}'")
    return reader.classes, tuple(image_ids), records


# ---------------------------------------------------------------------------
# classifier models

def write_models(classes: tuple[str, ...], models: dict[int, "object"], path: PathLike) -> None:
    from .scoring import ClassifierModel  # cycle guard

    out = _header("clc_models", classes)
    for class_id in sorted(models):
        m: ClassifierModel = models[class_id]
        if m.trained:
            out.append(
                f"model class_id={class_id} trained=1 fallback={int(m.fallback)}"
                f" beta0={_fmt(m.beta0)} beta1={_fmt(m.beta1)} beta2={_fmt(m.beta2)}"
                f" mean_count={_fmt(m.feature_means[0])} mean_conf={_fmt(m.feature_means[1])}"
                f" std_count={_fmt(m.feature_stds[0])} std_conf={_fmt(m.feature_stds[1])}"
            )
        else:
            out.append(f"model class_id={class_id} trained=0 fallback={int(m.fallback)}")
    _write_text(path, out)


def load_models(path: PathLike) -> tuple[tuple[str, ...], dict[int, "object"]]:
    from .scoring import ClassifierModel

    reader = _LineReader(path, ("clc_models",))
    models: dict[int, ClassifierModel] = {}
    for line_no, kind, fields in reader.records():
        where = f"{reader.path}:{line_no}"
        if kind != "model":
            raise DataError(f"{where}: unknown record kind '{kind}'")
        _need(fields, ("class_id", "trained", "fallback"), where)
        class_id = _to_int(fields["class_id"], where)
        trained = bool(_to_int(fields["trained"], where))
        fallback = bool(_to_int(fields["fallback"], where))
        if trained:
            _need(fields, ("beta0", "beta1", "beta2", "mean_count", "mean_conf", "std_count", "std_conf"), where)
            models[class_id] = ClassifierModel(
                class_id=class_id,
                beta0=_to_float(fields["beta0"], where),
                beta1=_to_float(fields["beta1"], where),
                beta2=_to_float(fields["beta2"], where),
                feature_means=(_to_float(fields["mean_count"], where), _to_float(fields["mean_conf"], where)),
                feature_stds=(_to_float(fields["std_count"], where), _to_float(fields["std_conf"], where)),
                trained=True,
                fallback=fallback,
            )
        else:
            models[class_id] = ClassifierModel(
                class_id=class_id, beta0=0.0, beta1=0.0, beta2=0.0,
                feature_means=(0.0, 0.0), feature_stds=(1.0, 1.0),
                trained=False, fallback=fallback,
            )
    return reader.classes, models


# ---------------------------------------------------------------------------
# instance scores

def write_instance_scores(classes: tuple[str, ...], scores: list["object"], path: PathLike) -> None:
    out = _header("instance_scores", classes)
    for s in scores:
        line = f"score image_id={s.image_id} class_id={s.class_id} index={s.index} lius={_fmt(s.lius)}"
        if s.p_tp is not None:
            line += f" p_tp={_fmt(s.p_tp)}"
        out.append(line)
    _write_text(path, out)


def load_instance_scores(path: PathLike) -> tuple[tuple[str, ...], list["object"]]:
    from .scoring import InstanceScore

    reader = _LineReader(path, ("instance_scores",))
    out: list[InstanceScore] = []
    for line_no, kind, fields in reader.records():
        where = f"{reader.path}:{line_no}"
        if kind != "score":
            raise DataError(f"{where}: unknown record kind '{kind}'")
        _need(fields, ("image_id", "class_id", "index", "lius"), where)
        p = fields.get("p_tp")
        out.append(InstanceScore(
            image_id=_to_int(fields["image_id"], where),
            class_id=_to_int(fields["class_id"], where),
            index=_to_int(fields["index"], where),
            p_tp=None if p is None else _to_float(p, where),
            lius=_to_float(fields["lius"], where),
        ))
    return reader.classes, out
