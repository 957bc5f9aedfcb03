"""Write detector outputs in the selection engine's canonical file formats.

This module computes no scores: it is a pure exporter, so all selection math
lives in one place. Everything it writes must load on the engine side with
zero validation errors; the local validator enforces the same rules.
"""

from __future__ import annotations

import math
import struct
import warnings
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .session import AdapterSession

EMBEDDING_MAGIC = b"PALEMB1\x00"

PROPOSALS_HINT = (
    "model outputs lack pre-NMS proposals: the hook must return a 'proposals' list"
    " per image (enable raw-proposal capture in the detector before suppression)"
)


class _Records:
    def __init__(self, session: AdapterSession, schema: str):
        self.lines = [f"#schema {schema} 1", "#classes " + ",".join(session.classes),
                      session.capture.header_line()]

    def add(self, line: str) -> None:
        self.lines.append(line)

    def write(self, path: Path) -> None:
        path.write_text("\n".join(self.lines) + "\n", encoding="utf-8")


def _clamped_confidence(raw, where: str) -> float:
    conf = float(raw)
    if math.isnan(conf) or math.isinf(conf):
        raise _export_error(f"{where}: non-finite confidence {raw}")
    if conf < 0.0 or conf > 1.0:
        warnings.warn(f"{where}: confidence {conf} clamped into [0, 1]", stacklevel=2)
        conf = min(max(conf, 0.0), 1.0)
    return conf


def _export_error(message: str):
    from .session import AdapterError

    return AdapterError(message)


def _box_fields(entry: Mapping, where: str) -> str:
    try:
        x, y, w, h = float(entry["x"]), float(entry["y"]), float(entry["w"]), float(entry["h"])
    except KeyError as exc:
        raise _export_error(f"{where}: box missing field {exc}") from exc
    if w <= 0 or h <= 0:
        raise _export_error(f"{where}: degenerate box w={w} h={h}")
    return f"x={x!r} y={y!r} w={w!r} h={h!r}"


def export_detections(
    session: AdapterSession,
    outputs: Sequence[Mapping],
) -> tuple[Path, Path]:
    """Write detections.txt and proposals.txt from per-image raw outputs.

    `outputs` has one mapping per session image (same order) with keys
    'detections' and 'proposals'; an image with no detections still appears
    in the pool index of both files.
    """
    session.validate()
    if len(outputs) != len(session.images):
        raise _export_error(f"got {len(outputs)} outputs for {len(session.images)} images")
    session.out_dir.mkdir(parents=True, exist_ok=True)

    detections = _Records(session, "detections")
    proposals = _Records(session, "proposals")
    for position, (image, raw) in enumerate(zip(session.images, outputs)):
        image_id = session.image_id(position)
        detections.add(f"#image id={image_id} file={image.name}")
        detections.add(f"image id={image_id}")
        proposals.add(f"image id={image_id}")
        if "proposals" not in raw:
            raise _export_error(f"{image.name}: {PROPOSALS_HINT}")
        for k, det in enumerate(raw.get("detections", [])):
            where = f"{image.name} detection {k}"
            class_id = int(det["class_id"])
            if not 0 <= class_id < len(session.classes):
                raise _export_error(f"{where}: class_id {class_id} outside the class list")
            conf = _clamped_confidence(det["confidence"], where)
            line = (
                f"detection image_id={image_id} class_id={class_id}"
                f" {_box_fields(det, where)} confidence={conf!r}"
            )
            if det.get("probs") is not None:
                probs = [float(p) for p in det["probs"]]
                if len(probs) != len(session.classes):
                    raise _export_error(f"{where}: probs length {len(probs)} != {len(session.classes)}")
                if any(p < 0 or math.isnan(p) for p in probs):
                    raise _export_error(f"{where}: invalid probability entry")
                total = sum(probs)
                if abs(total - 1.0) > 1e-6:
                    if total <= 0:
                        raise _export_error(f"{where}: probabilities sum to {total}")
                    warnings.warn(f"{where}: probabilities sum {total} renormalized", stacklevel=2)
                    probs = [p / total for p in probs]
                line += " probs=" + ",".join(repr(p) for p in probs)
            detections.add(line)
        cap = session.capture.pre_nms_cap
        for k, prop in enumerate(raw["proposals"][:cap]):
            where = f"{image.name} proposal {k}"
            conf = _clamped_confidence(prop["confidence"], where)
            proposals.add(
                f"proposal image_id={image_id} {_box_fields(prop, where)} confidence={conf!r}"
            )

    det_path = session.out_dir / "detections.txt"
    prop_path = session.out_dir / "proposals.txt"
    detections.write(det_path)
    proposals.write(prop_path)
    return det_path, prop_path


def export_embeddings(
    session: AdapterSession,
    encoder: Callable[[Path], Iterable[float]],
    images: Sequence[Path] | None = None,
) -> Path:
    """Encode images and write the binary embedding store.

    The dimension is taken from the first vector; any later mismatch or
    non-finite value aborts naming the offending image.
    """
    session.validate()
    session.out_dir.mkdir(parents=True, exist_ok=True)
    images = session.images if images is None else tuple(images)
    rows: list[tuple[int, list[float]]] = []
    dim = None
    for position, image in enumerate(images):
        vec = [float(v) for v in encoder(image)]
        if any(math.isnan(v) or math.isinf(v) for v in vec):
            raise _export_error(f"{image.name}: encoder returned a non-finite value")
        if dim is None:
            dim = len(vec)
            if dim == 0:
                raise _export_error(f"{image.name}: encoder returned an empty vector")
        elif len(vec) != dim:
            raise _export_error(
                f"{image.name}: embedding dim drifted to {len(vec)} (expected {dim})"
            )
        rows.append((session.image_id(position), vec))

    path = session.out_dir / "embeddings.bin"
    parts = [EMBEDDING_MAGIC, struct.pack("<II", dim, len(rows))]
    for image_id, vec in sorted(rows):
        parts.append(struct.pack("<Q", image_id))
        parts.append(struct.pack(f"<{dim}f", *vec))
    path.write_bytes(b"".join(parts))
    return path
