import argparse
import logging
import os
import sys

from src.commands import COMMANDS
from src.pipeline import mark_partial
from src.settings import get_workers

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poseload",
        description="Facial-movement workload pipeline: keypoints to features, recurrence measures and classifiers.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("--workers", type=int, help="Worker processes (default: POSELOAD_WORKERS or 1)")
    sub = parser.add_subparsers(dest="command", required=True)
    for module in COMMANDS:
        module.register(sub)
    return parser


def _output_of(args: argparse.Namespace) -> str | None:
    for name in ("output_dir", "output"):
        path = getattr(args, name, None)
        if path and os.path.isdir(path):
            return path
    return None


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    workers = max(args.workers, 1) if args.workers is not None else get_workers()
    try:
        args.func(args, workers)
    except (ValueError, OSError) as e:  # PoseLoadError and ValidationError are ValueErrors
        logger.error("%s failed: %s", args.command, e)
        out = _output_of(args)
        if out:
            mark_partial(out)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
