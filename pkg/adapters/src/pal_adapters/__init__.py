"""Detector-side glue: export inference outputs for the pal selection engine.

Pure exporters plus a standalone schema validator; no selection math lives
here, so scored numbers always have a single source of truth on the engine
side.
"""

from .export import export_detections, export_embeddings
from .session import AdapterError, AdapterSession, CaptureSettings
from .validate import validate_embedding_file, validate_export_dir, validate_text_artifact

__all__ = [
    "AdapterError",
    "AdapterSession",
    "CaptureSettings",
    "export_detections",
    "export_embeddings",
    "validate_embedding_file",
    "validate_export_dir",
    "validate_text_artifact",
]
