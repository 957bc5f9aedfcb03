"""pal-export: run a model hook over an image directory and dump artifacts."""

from __future__ import annotations

import argparse
import importlib
import sys
from pathlib import Path

from .export import export_detections, export_embeddings
from .session import AdapterError, AdapterSession, CaptureSettings
from .validate import validate_export_dir


def load_entrypoint(spec: str):
    if ":" not in spec:
        raise AdapterError(f"entrypoint '{spec}' must look like 'module:callable'")
    module_name, _, attr = spec.partition(":")
    try:
        module = importlib.import_module(module_name)
    except ImportError as exc:
        raise AdapterError(f"cannot import '{module_name}': {exc}") from exc
    try:
        return getattr(module, attr)
    except AttributeError as exc:
        raise AdapterError(f"module '{module_name}' has no attribute '{attr}'") from exc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pal-export",
        description="Export detector inference outputs in the selection engine's formats",
    )
    parser.add_argument("--model-hook", required=True, help="module:callable returning per-image outputs")
    parser.add_argument("--encoder-hook", help="module:callable returning one embedding per image")
    parser.add_argument("--images", required=True, help="directory of images (sorted by name)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--classes", required=True, help="comma-separated class names")
    parser.add_argument("--id-offset", type=int, default=0, help="first image id to assign")
    parser.add_argument("--pre-nms-cap", type=int, default=1000)
    parser.add_argument("--score-threshold", type=float, default=0.3)
    parser.add_argument("--nms-iou", type=float, default=0.5)
    args = parser.parse_args(argv)

    try:
        images_dir = Path(args.images)
        if not images_dir.is_dir():
            raise AdapterError(f"--images {images_dir} is not a directory")
        images = tuple(sorted(p for p in images_dir.iterdir() if p.is_file()))
        session = AdapterSession(
            images=images,
            out_dir=Path(args.out),
            classes=tuple(args.classes.split(",")),
            capture=CaptureSettings(
                pre_nms_cap=args.pre_nms_cap,
                score_threshold=args.score_threshold,
                nms_iou=args.nms_iou,
            ),
            id_offset=args.id_offset,
        )
        session.validate()

        model = load_entrypoint(args.model_hook)
        outputs = [model(image) for image in images]
        det_path, prop_path = export_detections(session, outputs)
        written = [det_path, prop_path]
        if args.encoder_hook:
            encoder = load_entrypoint(args.encoder_hook)
            written.append(export_embeddings(session, encoder))

        problems = validate_export_dir(session.out_dir)
        if args.encoder_hook is None:
            problems = [p for p in problems if "embeddings.bin" not in p]
        if problems:
            for problem in problems:
                print(f"invalid output: {problem}", file=sys.stderr)
            return 2
    except AdapterError as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return 3

    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
