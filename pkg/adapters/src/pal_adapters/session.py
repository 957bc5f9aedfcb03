"""Export session: what is being captured, from where, with which settings."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


class AdapterError(Exception):
    """Raised when model outputs or settings cannot be exported faithfully."""


@dataclass(frozen=True)
class CaptureSettings:
    """Inference-time knobs recorded in every output header for provenance."""

    pre_nms_cap: int = 1000
    score_threshold: float = 0.3
    nms_iou: float = 0.5

    def header_line(self) -> str:
        return (
            f"#capture pre_nms_cap={self.pre_nms_cap}"
            f" score_threshold={self.score_threshold} nms_iou={self.nms_iou}"
        )


@dataclass(frozen=True)
class AdapterSession:
    """One export run over a list of images.

    image ids are id_offset + position in `images` (sorted by the caller);
    the class list is emitted verbatim into every header.
    """

    images: tuple[Path, ...]
    out_dir: Path
    classes: tuple[str, ...]
    capture: CaptureSettings = field(default_factory=CaptureSettings)
    id_offset: int = 0

    def validate(self) -> None:
        if not self.classes:
            raise AdapterError("session needs a non-empty class list")
        for name in self.classes:
            if "," in name or " " in name:
                raise AdapterError(f"class name '{name}' may not contain spaces or commas")
        if not self.images:
            raise AdapterError("session has no images")
        if self.id_offset < 0:
            raise AdapterError("id_offset must be >= 0")

    def image_id(self, position: int) -> int:
        return self.id_offset + position
