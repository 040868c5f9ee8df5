"""report: mean ± sd summary tables from a results directory."""

import argparse
import logging
import os
import pandas as pd

from src import report
from src.commands.common import ensure_dir

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    p = subparsers.add_parser("report", help="Summarise eval-split / eval-lopo / learning-curve outputs")
    p.add_argument("--results", required=True, help="Directory holding the harness CSVs")
    p.add_argument("--output", help="Output directory (default: the results directory)")
    p.add_argument("--xlsx", action="store_true", help="Also write summary.xlsx")
    p.set_defaults(func=cmd_report)


def cmd_report(args: argparse.Namespace, workers: int) -> None:
    out_dir = ensure_dir(args.output or args.results)
    summary = report.build_summary(args.results)
    report.export_table(summary, os.path.join(out_dir, "summary.csv"))
    if args.xlsx:
        report.export_table(summary, os.path.join(out_dir, "summary.xlsx"))
    for stem in ("eval_split", "eval_lopo"):
        path = os.path.join(args.results, f"{stem}_confusion.csv")
        if os.path.exists(path):
            report.export_table(report.confusion_report(pd.read_csv(path)), os.path.join(out_dir, f"{stem}_confusion_mean.csv"))
    for row in summary.itertuples(index=False):
        logger.info("%s %s %s: %s", row.protocol, row.feature_set, row.metric, row.formatted)
