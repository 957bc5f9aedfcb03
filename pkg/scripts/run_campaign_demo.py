#!/usr/bin/env python3
"""Compare the three selection strategies on one synthetic world.

Runs random, entropy, and the fused selector over a few rounds of the same
seeded world and prints the learning curves side by side. Keep the defaults
for a ~30 second desk run, or scale up with the flags.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from pal import simulator  # noqa: E402


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--images", type=int, default=500)
    parser.add_argument("--classes", type=int, default=6)
    parser.add_argument("--rounds", type=int, default=4)
    parser.add_argument("--budget", type=int, default=40)
    parser.add_argument("--initial", type=int, default=40)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="also write the merged report file here")
    args = parser.parse_args()

    params = simulator.WorldParams(num_images=args.images, num_classes=args.classes)
    world = simulator.generate_world(params, seed=args.seed)
    print(
        f"world: {args.images} images, {args.classes} classes,"
        f" {len(world.gt.annotations)} boxes, rarest class {world.rare_class}"
        f" ({world.class_counts[world.rare_class]} instances)"
    )

    reports = []
    for strategy in simulator.STRATEGIES:
        t0 = time.time()
        reports.append(simulator.run_campaign(
            world, strategy, rounds=args.rounds, budget=args.budget,
            seed=args.seed, initial_labelled=args.initial,
        ))
        print(f"{strategy}: {time.time() - t0:.1f}s")

    merged = simulator.merge_reports(reports)
    print()
    print(simulator.report_table(merged))
    if args.out:
        simulator.write_campaign_report(merged, args.out)
        print(f"\nreport written to {args.out}")


if __name__ == "__main__":
    main()
