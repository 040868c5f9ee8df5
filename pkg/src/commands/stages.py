"""ingest, preprocess, features and run: the keypoint-side stages."""

import argparse
import logging
import os

from src import ingest, pipeline
from src.commands.common import add_run_args, ensure_dir, load_run_config

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    p = subparsers.add_parser("ingest", help="Validate keypoint files and rewrite them as frame,id,x,y,c CSV")
    p.add_argument("--input", required=True, help="A keypoint file or a <participant>/<session>_<condition> tree")
    p.add_argument("--output", required=True, help="Output directory")
    p.add_argument("--fps", type=float, default=60.0)
    p.set_defaults(func=cmd_ingest)

    p = subparsers.add_parser("preprocess", help="Ingest and preprocess every recording (cached)")
    add_run_args(p)
    p.add_argument("--csv", action="store_true", help="Also write each preprocessed series as CSV")
    p.set_defaults(func=cmd_preprocess)

    p = subparsers.add_parser("features", help="Kinematic window features only (no RQA, no task performance)")
    add_run_args(p)
    p.set_defaults(func=cmd_features)

    p = subparsers.add_parser("run", help="Full pipeline: keypoints and event logs to features.csv")
    add_run_args(p)
    p.set_defaults(func=cmd_run)


def cmd_ingest(args: argparse.Namespace, workers: int) -> None:
    out_dir = ensure_dir(args.output)
    if os.path.isdir(args.input):
        targets = [
            (rec.path, os.path.join(rec.participant, f"{rec.session}_{rec.condition}.csv"))
            for rec in ingest.discover_recordings(args.input)
        ]
    else:
        targets = [(args.input, os.path.splitext(os.path.basename(args.input))[0] + ".csv")]
    for src_path, rel in targets:
        with pipeline.stage_errors("ingest", src_path):
            series = ingest.load_keypoints(src_path, args.fps)
        dest = os.path.join(out_dir, rel)
        ensure_dir(os.path.dirname(dest))
        ingest.write_series_csv(series, dest)
    logger.info("Ingested %d file(s) into %s", len(targets), out_dir)


def cmd_preprocess(args: argparse.Namespace, workers: int) -> None:
    config = load_run_config(args)
    recordings = pipeline.discover(config)
    series, _ = pipeline.preprocess_stage(config, recordings, pipeline.input_hashes(config, recordings), workers)
    if args.csv:
        for rec, s in series.items():
            dest = os.path.join(config.output_dir, "preprocess", rec.participant, f"{rec.session}_{rec.condition}.csv")
            ingest.write_series_csv(s, dest)
    logger.info("Preprocessed %d recording(s) into %s", len(series), config.output_dir)


def cmd_features(args: argparse.Namespace, workers: int) -> None:
    config = load_run_config(args).model_copy(update={"rqa_channels": [], "crqa_pairs": [], "events_dir": None})
    pipeline.run_pipeline(config, workers)


def cmd_run(args: argparse.Namespace, workers: int) -> None:
    result = pipeline.run_pipeline(load_run_config(args), workers)
    logger.info("features.csv: %d rows x %d columns (cached stages: %s)",
                result.n_rows, result.n_columns, ", ".join(result.cached_stages) or "none")
