"""perf: windowed task-battery accuracy and reaction time from one event log."""

import argparse
import logging

from src import taskperf
from src.commands.common import add_config_args, load_section
from src.pipeline import stage_errors
from src.schemas import WindowSpec

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    p = subparsers.add_parser("perf", help="Windowed task-performance metrics from an event log")
    add_config_args(p)
    p.add_argument("--input", required=True, help="Event log CSV (t,subtask,kind,payload)")
    p.add_argument("--output", required=True, help="Output CSV")
    p.add_argument("--duration", type=float, help="Session length in seconds (default: last event time)")
    p.set_defaults(func=cmd_perf)


def cmd_perf(args: argparse.Namespace, workers: int) -> None:
    spec = load_section(args, "window", WindowSpec)
    with stage_errors("taskperf", args.input):
        events = taskperf.read_event_log(args.input)
        table = taskperf.perf_frame(taskperf.windowed_perf(events, spec, duration_s=args.duration))
    table.to_csv(args.output, index=False)
    logger.info("Wrote %s (%d windows)", args.output, len(table))
