"""Command-line entry points, one subcommand per pipeline stage.

Stages are composable so callers can substitute their own detector outputs
between them: match -> train-clc -> score for the instance path, select for
a whole round, simulate/report for synthetic campaigns. Exit codes: 0 ok,
1 usage error, 2 data/validation error, 3 internal error. The PAL_THREADS
environment variable caps worker processes for multi-strategy simulation.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import formats, simulator
from .engine import assign_features, run_round, score_instances, train_classifiers, update_pools
from .errors import DataError, PalError, UsageError
from .matching import label_tp_fp
from .records import DetectionRecord, SelectionConfig
from .scoring import FALLBACK_CLASS_ID, ClassifierModel


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep argparse from sys.exit(2); usage errors are code 1
        raise UsageError(message)


def _load_config(args) -> SelectionConfig:
    if getattr(args, "config", None):
        return formats.load_config(args.config)
    return SelectionConfig()


def _thread_cap() -> int:
    raw = os.environ.get("PAL_THREADS")
    if raw is None:
        return 1
    try:
        cap = int(raw)
    except ValueError as exc:
        raise UsageError(f"PAL_THREADS must be an integer, got '{raw}'") from exc
    if cap < 1:
        raise UsageError(f"PAL_THREADS must be >= 1, got {cap}")
    return cap


def _group_features(records: list[DetectionRecord], image_ids: tuple[int, ...]):
    by_image: dict[int, list[DetectionRecord]] = {iid: [] for iid in image_ids}
    for det in records:
        if det.image_id not in by_image:
            raise DataError(f"instance references image {det.image_id} outside the pool index")
        det.index = len(by_image[det.image_id])
        by_image[det.image_id].append(det)
    return by_image


def cmd_match(args) -> int:
    cfg = _load_config(args)
    detections = formats.load_detection_dump(args.detections)
    proposals = formats.load_detection_dump(args.proposals)
    dump = formats.merge_dumps(detections, proposals)
    assign_features(dump, cfg.iou_prenms)
    if args.gt:
        gt = formats.load_ground_truth(args.gt)
        label_tp_fp(dump.final_detections, gt, cfg.iou_tp)
    formats.write_features(dump.classes, dump.final_detections, args.out, dump.image_ids)
    if args.verbose:
        print(f"match: {len(dump.final_detections)} instances -> {args.out}", file=sys.stderr)
    return 0


def cmd_train_clc(args) -> int:
    cfg = _load_config(args)
    classes, _, records = formats.load_features(args.features)
    missing = sum(1 for det in records if det.tp_label is None)
    if missing:
        raise DataError(f"{missing} instances lack tp_label; run match with --gt first")
    models, fallback = train_classifiers(records, len(classes), cfg)
    models[FALLBACK_CLASS_ID] = fallback
    formats.write_models(classes, models, args.out)
    if args.verbose:
        trained = sum(1 for m in models.values() if m.trained)
        print(f"train-clc: {trained}/{len(models)} models trained -> {args.out}", file=sys.stderr)
    return 0


def cmd_score(args) -> int:
    classes, image_ids, records = formats.load_features(args.features)
    model_classes, models = formats.load_models(args.models)
    if model_classes != classes:
        raise DataError("features and models declare different category lists")
    fallback = models.pop(FALLBACK_CLASS_ID, None)
    if fallback is None:
        fallback = ClassifierModel(
            class_id=FALLBACK_CLASS_ID, beta0=0.0, beta1=0.0, beta2=0.0,
            feature_means=(0.0, 0.0), feature_stds=(1.0, 1.0), trained=False, fallback=True,
        )
    by_image = _group_features(records, image_ids)
    scores = score_instances(by_image, models, fallback)
    formats.write_instance_scores(classes, scores, args.out)
    if args.verbose:
        print(f"score: {len(scores)} instances -> {args.out}", file=sys.stderr)
    return 0


def cmd_select(args) -> int:
    cfg = _load_config(args)
    gt = formats.load_ground_truth(args.gt)
    labelled_dump = formats.load_detection_dump(args.labelled_dump)
    unlabelled_dump = formats.load_detection_dump(args.unlabelled_dump)
    if args.labelled_proposals:
        labelled_dump = formats.merge_dumps(labelled_dump, formats.load_detection_dump(args.labelled_proposals))
    if args.unlabelled_proposals:
        unlabelled_dump = formats.merge_dumps(unlabelled_dump, formats.load_detection_dump(args.unlabelled_proposals))
    embeddings = formats.load_embeddings(args.embeddings)
    state = formats.load_round_state(args.state)
    if args.budget is not None:
        if args.budget < 0:
            raise UsageError(f"--budget must be >= 0, got {args.budget}")
        state.budget = args.budget
    manifest = run_round(gt, labelled_dump, unlabelled_dump, embeddings, cfg, state)
    formats.write_selection_manifest(manifest, args.out)
    if args.state_out:
        formats.write_round_state(update_pools(state, manifest), args.state_out)
    if args.verbose:
        print(
            f"select: round {manifest.round}, {manifest.total_selected}/{state.budget}"
            f" images -> {args.out}",
            file=sys.stderr,
        )
    return 0


def _campaign_worker(payload):
    world, strategy, rounds, budget, seed, cfg, initial, dump_dir = payload
    return simulator.run_campaign(
        world, strategy, rounds, budget, seed,
        cfg=cfg, initial_labelled=initial, out_dir=dump_dir,
    )


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    params = simulator.WorldParams(
        num_images=args.images,
        num_classes=args.classes,
        freq_exponent=args.exponent,
    )
    world = simulator.generate_world(params, args.seed)
    strategies = list(simulator.STRATEGIES) if args.strategy == "all" else [args.strategy]
    jobs = []
    for strategy in strategies:
        dump_dir = None
        if args.dump_dir:
            dump_dir = str(Path(args.dump_dir) / strategy)
        jobs.append((world, strategy, args.rounds, args.budget, args.seed, cfg, args.initial, dump_dir))

    cap = min(_thread_cap(), len(jobs))
    if cap > 1:
        with ProcessPoolExecutor(max_workers=cap) as pool:
            reports = list(pool.map(_campaign_worker, jobs))
    else:
        reports = [_campaign_worker(job) for job in jobs]
    report = reports[0] if len(reports) == 1 else simulator.merge_reports(reports)
    simulator.write_campaign_report(report, args.out)
    if args.verbose:
        print(f"simulate: {len(strategies)} strategies x {args.rounds} rounds -> {args.out}", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    report = simulator.load_campaign_report(args.input)
    print(simulator.report_table(report))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="pal", description="Active-learning batch selection for object detection")
    parser.add_argument("--verbose", action="store_true", help="print stage summaries to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="assign pre-NMS counts and TP/FP labels to detections")
    p.add_argument("--gt", help="ground truth file; omit for unlabelled pools (no TP/FP labels)")
    p.add_argument("--detections", required=True)
    p.add_argument("--proposals", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("train-clc", help="fit per-class TP/FP classifiers from matched features")
    p.add_argument("--features", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_clc)

    p = sub.add_parser("score", help="entropy-score instances with trained classifiers")
    p.add_argument("--features", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("select", help="run one selection round and write the manifest")
    p.add_argument("--gt", required=True)
    p.add_argument("--labelled-dump", required=True)
    p.add_argument("--unlabelled-dump", required=True)
    p.add_argument("--labelled-proposals", help="merge proposals kept in a separate file")
    p.add_argument("--unlabelled-proposals", help="merge proposals kept in a separate file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--state", required=True)
    p.add_argument("--config")
    p.add_argument("--budget", type=int, help="override the state file's budget")
    p.add_argument("--out", required=True)
    p.add_argument("--state-out", help="write the post-selection round state here")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="run synthetic selection campaigns")
    p.add_argument("--strategy", choices=[*simulator.STRATEGIES, "all"], default="pal")
    p.add_argument("--rounds", type=int, default=4)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=2000)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--exponent", type=float, default=1.5)
    p.add_argument("--initial", type=int, help="initial labelled pool size (default: budget)")
    p.add_argument("--config")
    p.add_argument("--dump-dir", help="also write per-round artifact files under this directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="pretty-print a campaign report")
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except PalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
