#!/usr/bin/env python3
"""Regenerate the committed miniature fixture under tests/fixtures/mini/.

The golden manifest is produced by the exhaustive reference recomputation in
tests/oracle.py, not by the engine, so the committed bytes stay an
independent cross-check of the selection pipeline.
"""

import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from pal import formats, simulator  # noqa: E402
from pal.engine import run_round  # noqa: E402
from pal.records import (  # noqa: E402
    ClassSelection,
    RoundState,
    SelectedImage,
    SelectionConfig,
    SelectionManifest,
)
from tests.oracle import oracle_round  # noqa: E402

OUT = ROOT / "tests" / "fixtures" / "mini"


def manifest_from_oracle(expected, classes, state):
    per_class = []
    for class_id in sorted(expected["per_class"]):
        blk = expected["per_class"][class_id]
        selected = tuple(
            SelectedImage(
                image_id=image_id,
                lius=round(row["lius"], 6),
                cwie=round(row["cwie"], 6),
                rcdi=round(row["rcdi"], 6),
                rcsp=round(row["rcsp"], 6),
                score=round(row["score"], 6),
            )
            for image_id, row in sorted(blk["selected"].items())
        )
        per_class.append(ClassSelection(
            class_id=class_id, r_c=round(blk["r_c"], 6), b_c=blk["b_c"],
            deficit=blk["b_c"] - len(selected), selected=selected,
        ))
    return SelectionManifest(
        round=state.round, classes=classes, per_class=tuple(per_class),
        fill=tuple(expected["fill"]), budget=state.budget,
    )


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    params = simulator.WorldParams(
        num_images=24, num_classes=4, freq_exponent=1.2,
        embedding_dim=8, embedding_clusters=3,
    )
    world = simulator.generate_world(params, seed=2)
    rng = np.random.default_rng(99)
    labelled = set(int(i) for i in rng.choice(params.num_images, size=8, replace=False))
    unlabelled = set(range(params.num_images)) - labelled

    counts = np.bincount(
        [a.class_id for a in world.gt.annotations if a.image_id in labelled],
        minlength=params.num_classes,
    )
    skill = simulator.skill_from_counts(params, counts)
    labelled_dump = simulator.simulate_detector(world, skill, 5, sorted(labelled))
    unlabelled_dump = simulator.simulate_detector(world, skill, 6, sorted(unlabelled))

    cfg = SelectionConfig(budget_b=6)
    state = RoundState(round=1, budget=6, labelled=labelled, unlabelled=unlabelled)

    formats.write_ground_truth(world.gt, OUT / "gt.txt")
    formats.write_detection_dump(labelled_dump, OUT / "labelled_dump.txt")
    formats.write_detection_dump(unlabelled_dump, OUT / "unlabelled_dump.txt")
    formats.write_embeddings(world.embeddings, OUT / "embeddings.bin")
    formats.write_config(cfg, OUT / "config.json")
    formats.write_round_state(state, OUT / "state.txt")

    expected = oracle_round(world.gt, labelled_dump, unlabelled_dump, world.embeddings, cfg, state)
    golden = manifest_from_oracle(expected, world.gt.classes, state)
    formats.write_selection_manifest(golden, OUT / "golden_manifest.txt")

    # fresh loads so the check exercises the serialized artifacts end to end
    engine_manifest = run_round(
        formats.load_ground_truth(OUT / "gt.txt"),
        formats.load_detection_dump(OUT / "labelled_dump.txt"),
        formats.load_detection_dump(OUT / "unlabelled_dump.txt"),
        formats.load_embeddings(OUT / "embeddings.bin"),
        formats.load_config(OUT / "config.json"),
        formats.load_round_state(OUT / "state.txt"),
    )
    formats.write_selection_manifest(engine_manifest, OUT / "_engine_check.txt")
    golden_bytes = (OUT / "golden_manifest.txt").read_bytes()
    engine_bytes = (OUT / "_engine_check.txt").read_bytes()
    (OUT / "_engine_check.txt").unlink()
    if golden_bytes != engine_bytes:
        print("WARNING: engine output does not match the oracle golden", file=sys.stderr)
        return 1
    print(f"fixture written to {OUT} ({golden.total_selected} images selected)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
