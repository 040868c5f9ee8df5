"""synth: synthetic input trees and feature-level datasets."""

import argparse
import logging
import os

from src import synth
from src.commands.common import ensure_dir

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    p = subparsers.add_parser("synth", help="Write synthetic keypoints, event logs and labels.csv")
    p.add_argument("--output", required=True, help="Output root")
    p.add_argument("--participants", type=int, default=2)
    p.add_argument("--duration", type=float, default=20.0, help="Seconds per recording")
    p.add_argument("--fps", type=float, default=60.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset-windows", type=int, default=0,
                   help="Instead write a feature-level dataset with this many windows per condition")
    p.add_argument("--idiosyncrasy", type=float, default=0.0, help="Participant-specific class encoding, 0..1")
    p.set_defaults(func=cmd_synth)


def cmd_synth(args: argparse.Namespace, workers: int) -> None:
    out_dir = ensure_dir(args.output)
    if args.dataset_windows > 0:
        matrix, _ = synth.gen_participant_dataset(
            args.participants, args.dataset_windows, args.idiosyncrasy, seed=args.seed, fps=args.fps,
        )
        path = os.path.join(out_dir, "features.csv")
        matrix.to_csv(path, index=False)
        logger.info("Wrote %s: %d rows", path, len(matrix))
        return
    labels = synth.write_synthetic_tree(out_dir, args.participants, args.duration, args.fps, args.seed)
    logger.info("Wrote %d synthetic recordings under %s", len(labels), out_dir)
