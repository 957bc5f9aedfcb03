"""Standalone schema validator for the interchange files.

Re-states the engine-side acceptance rules so exports can be checked at the
detector without installing the engine. Every function returns a list of
human-readable problems; an empty list means the file will load cleanly.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

_REQUIRED = {
    "image": ("id",),
    "detection": ("image_id", "class_id", "x", "y", "w", "h", "confidence"),
    "proposal": ("image_id", "x", "y", "w", "h", "confidence"),
    "annotation": ("id", "image_id", "class_id", "x", "y", "w", "h"),
}

_SCHEMA_KINDS = {
    "detections": {"image", "detection", "proposal"},
    "proposals": {"image", "detection", "proposal"},
    "ground_truth": {"image", "annotation"},
}


def validate_text_artifact(path) -> list[str]:
    """Check a line-delimited artifact (detections, proposals, ground truth)."""
    problems: list[str] = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        return [f"{path}: unreadable: {exc}"]
    if len(lines) < 2:
        return [f"{path}: missing header block"]

    head = lines[0].split()
    if len(head) != 3 or head[0] != "#schema":
        return [f"{path}:1: first line must be '#schema <name> <version>'"]
    schema = head[1]
    if schema not in _SCHEMA_KINDS:
        return [f"{path}:1: unknown schema '{schema}'"]
    if not lines[1].startswith("#classes"):
        return [f"{path}:2: second line must be '#classes <names>'"]
    classes = [c for c in lines[1][len("#classes"):].strip().split(",") if c]
    allowed = _SCHEMA_KINDS[schema]

    pool: set[int] = set()
    ann_ids: set[int] = set()
    deferred: list[tuple[int, str, dict]] = []
    for line_no, line in enumerate(lines[2:], start=3):
        if not line.strip() or line.startswith("#"):
            continue
        tokens = line.split()
        kind = tokens[0]
        if kind not in allowed:
            problems.append(f"{path}:{line_no}: record kind '{kind}' not allowed in {schema}")
            continue
        fields = {}
        bad = False
        for tok in tokens[1:]:
            if "=" not in tok:
                problems.append(f"{path}:{line_no}: malformed field '{tok}'")
                bad = True
                break
            key, _, value = tok.partition("=")
            fields[key] = value
        if bad:
            continue
        missing = [k for k in _REQUIRED[kind] if k not in fields]
        if missing:
            problems.append(f"{path}:{line_no}: {kind} missing fields {missing}")
            continue
        if kind == "image":
            pool.add(int(fields["id"]))
            continue
        deferred.append((line_no, kind, fields))

    for line_no, kind, fields in deferred:
        where = f"{path}:{line_no}"
        try:
            image_id = int(fields["image_id"])
            w = float(fields["w"])
            h = float(fields["h"])
        except ValueError:
            problems.append(f"{where}: non-numeric field")
            continue
        if image_id not in pool:
            problems.append(f"{where}: image {image_id} not declared in the pool index")
        if w <= 0 or h <= 0:
            problems.append(f"{where}: degenerate box w={w} h={h}")
        if kind in ("detection", "proposal"):
            conf = float(fields["confidence"])
            if math.isnan(conf) or not 0.0 <= conf <= 1.0:
                problems.append(f"{where}: confidence {conf} outside [0, 1]")
        if kind in ("detection", "annotation"):
            class_id = int(fields["class_id"])
            if not 0 <= class_id < len(classes):
                problems.append(f"{where}: class_id {class_id} outside the declared class list")
        if kind == "detection" and "probs" in fields:
            probs = [float(p) for p in fields["probs"].split(",")]
            if len(probs) != len(classes):
                problems.append(f"{where}: probs length {len(probs)} != {len(classes)} classes")
            elif any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-6:
                problems.append(f"{where}: probs must be nonnegative and sum to 1")
        if kind == "annotation":
            ann_id = int(fields["id"])
            if ann_id in ann_ids:
                problems.append(f"{where}: duplicate annotation id {ann_id}")
            ann_ids.add(ann_id)
    return problems


def validate_embedding_file(path) -> list[str]:
    """Check the binary embedding store layout and values."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        return [f"{path}: unreadable: {exc}"]
    magic = b"PALEMB1\x00"
    if len(blob) < len(magic) + 8:
        return [f"{path}: truncated header"]
    if blob[: len(magic)] != magic:
        return [f"{path}: bad magic bytes"]
    dim, count = struct.unpack_from("<II", blob, len(magic))
    problems: list[str] = []
    if dim == 0:
        return [f"{path}: dim must be positive"]
    expect = len(magic) + 8 + count * (8 + 4 * dim)
    if len(blob) != expect:
        return [f"{path}: size {len(blob)} != expected {expect} for dim={dim} count={count}"]
    offset = len(magic) + 8
    seen: set[int] = set()
    for _ in range(count):
        (image_id,) = struct.unpack_from("<Q", blob, offset)
        if image_id in seen:
            problems.append(f"{path}: duplicate image_id {image_id}")
        seen.add(image_id)
        values = struct.unpack_from(f"<{dim}f", blob, offset + 8)
        if any(math.isnan(v) or math.isinf(v) for v in values):
            problems.append(f"{path}: non-finite embedding for image {image_id}")
        offset += 8 + 4 * dim
    return problems


def validate_export_dir(out_dir) -> list[str]:
    """Validate every file an export run produces."""
    out_dir = Path(out_dir)
    problems: list[str] = []
    for name in ("detections.txt", "proposals.txt"):
        target = out_dir / name
        if target.exists():
            problems.extend(validate_text_artifact(target))
        else:
            problems.append(f"{target}: missing")
    emb = out_dir / "embeddings.bin"
    if emb.exists():
        problems.extend(validate_embedding_file(emb))
    return problems
