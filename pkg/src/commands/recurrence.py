"""rqa: recurrence measures for one column (or a column pair) of a CSV series."""

import argparse
import logging
import numpy as np
import pandas as pd

from src import dynamics, features
from src.commands.common import add_config_args, load_section
from src.errors import EmptyInput
from src.models import RQA_COLUMNS
from src.schemas import AmiConfig, EmbeddingParams, FnnConfig, RqaConfig, WindowSpec

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    p = subparsers.add_parser("rqa", help="Auto or cross recurrence measures of CSV columns")
    add_config_args(p)
    p.add_argument("--input", required=True, help="CSV with one column per channel")
    p.add_argument("--column", required=True)
    p.add_argument("--cross-column", help="Second column; computes cross-recurrence")
    p.add_argument("--output", required=True, help="Output CSV")
    p.add_argument("--whole", action="store_true", help="One row for the whole series instead of windows")
    p.add_argument("--estimate", action="store_true", help="Pick tau by AMI and m by FNN first")
    p.add_argument("--plot", help="Also write the whole-series recurrence plot as run-length text")
    p.set_defaults(func=cmd_rqa)


def _estimate(values: np.ndarray, args: argparse.Namespace) -> EmbeddingParams:
    _, tau = dynamics.ami(values, load_section(args, "ami", AmiConfig))
    _, m = dynamics.fnn(values, tau, load_section(args, "fnn", FnnConfig))
    logger.info("Estimated embedding: tau=%d, m=%d", tau, m)
    return EmbeddingParams(tau=tau, m=m)


def cmd_rqa(args: argparse.Namespace, workers: int) -> None:
    frame = pd.read_csv(args.input)
    names = [args.column] + ([args.cross_column] if args.cross_column else [])
    missing = [n for n in names if n not in frame.columns]
    if missing:
        raise EmptyInput(f"{args.input}: no column(s) {missing}")
    channels = {n: frame[n].to_numpy(dtype=float) for n in names}
    params = _estimate(channels[args.column], args) if args.estimate else load_section(args, "embedding", EmbeddingParams)
    cfg = load_section(args, "rqa", RqaConfig)
    cross_cfg = load_section(args, "rqa_cross", RqaConfig, default=RqaConfig.cross_default)
    pairs = [(args.column, args.cross_column)] if args.cross_column else []
    auto = [] if args.cross_column else [args.column]

    if args.whole:
        if args.cross_column:
            m = dynamics.crqa(channels[args.column], channels[args.cross_column], params, cross_cfg)
            prefix = f"{args.column}__{args.cross_column}__crqa__"
        else:
            m = dynamics.rqa(channels[args.column], params, cfg)
            prefix = f"{args.column}__rqa__"
        table = pd.DataFrame([{prefix + k: v for k, v in m.as_dict().items()}], columns=[prefix + k for k in RQA_COLUMNS])
    else:
        spec = load_section(args, "window", WindowSpec)
        _, ok = features.valid_window_mask(list(channels.values()), spec)
        table = dynamics.window_rqa(channels, np.flatnonzero(ok).tolist(), spec, params, cfg, cross_cfg, auto, pairs)
    table.to_csv(args.output, index=False)
    logger.info("Wrote %s (%d rows)", args.output, len(table))

    if args.plot:
        a = dynamics.embed(dynamics.rescale_unit(channels[args.column]), params)
        b = dynamics.embed(dynamics.rescale_unit(channels[args.cross_column]), params) if args.cross_column else None
        plot = dynamics.recurrence_matrix(a, b, cross_cfg if b is not None else cfg)
        with open(args.plot, "w", encoding="utf-8") as fh:
            fh.write(dynamics.export_plot_rle(plot))
        logger.info("Wrote recurrence plot %s (%d x %d)", args.plot, *plot.shape)
