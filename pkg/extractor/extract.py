#!/usr/bin/env python3
"""Dump VGG16 pool5 tensors for a dataset directory.

Examples:
    extract.py --dataset oxford --images img/ --gt gt/ --out out/oxford5k
    extract.py --dataset plain --images img/ --out out/misc --format dft
"""

import argparse
import logging
import sys
from pathlib import Path

from vgg_extractor import build_job, extract, load_backbone


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--dataset", choices=("oxford", "paris", "holidays", "plain"),
                        required=True)
    parser.add_argument("--images", required=True, help="directory of dataset images")
    parser.add_argument("--gt", help="ground-truth directory (oxford/paris layouts)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--format", choices=("npy", "dft"), default="npy")
    parser.add_argument("--weights", default="pretrained",
                        help="'pretrained', 'random', or a state-dict path")
    parser.add_argument("--max-side", type=int, default=1024)
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    try:
        job = build_job(args.dataset, Path(args.images),
                        Path(args.gt) if args.gt else None)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        backbone = load_backbone(args.weights, device=args.device)
    except Exception as exc:  # noqa: BLE001 - surface weight problems cleanly
        print(f"error: cannot load VGG16 weights ({exc}); pass --weights PATH "
              f"or --weights random", file=sys.stderr)
        return 3

    summary = extract(job, backbone, Path(args.out), fmt=args.format,
                      max_side=args.max_side, device=args.device)
    print(f"wrote {summary.written} tensors to {args.out} "
          f"({len(summary.skipped)} skipped)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
