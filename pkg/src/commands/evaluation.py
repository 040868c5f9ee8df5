"""eval-split, eval-lopo and learning-curve: the three validation protocols."""

import argparse
import logging
import os
import pandas as pd

from src import ml, report
from src.commands.common import add_config_args, ensure_dir, load_section
from src.pipeline import load_feature_matrix
from src.schemas import FEATURE_SETS, FeatureSelectConfig, ForestConfig, HarnessConfig, LearningCurveConfig

logger = logging.getLogger(__name__)


def _common(p: argparse.ArgumentParser) -> None:
    add_config_args(p)
    p.add_argument("--features", required=True, help="features.csv from the run subcommand")
    p.add_argument("--output", required=True, help="Results directory")
    p.add_argument("--feature-set", choices=FEATURE_SETS)


def register(subparsers) -> None:
    p = subparsers.add_parser("eval-split", help="Repeated stratified 80/20 splits")
    _common(p)
    p.add_argument("--no-select", action="store_true", help="Skip filtering and backward elimination")
    p.set_defaults(func=cmd_eval_split)

    p = subparsers.add_parser("eval-lopo", help="Leave-one-participant-out validation")
    _common(p)
    p.set_defaults(func=cmd_eval_lopo)

    p = subparsers.add_parser("learning-curve", help="Participant-specific accuracy against training size")
    _common(p)
    p.add_argument("--baseline", action="store_true", help="Add baseline-session windows to every training set")
    p.set_defaults(func=cmd_learning_curve)


def _configs(args: argparse.Namespace) -> tuple[HarnessConfig, ForestConfig, FeatureSelectConfig]:
    harness = load_section(args, "harness", HarnessConfig)
    if args.feature_set:
        harness = harness.model_copy(update={"feature_set": args.feature_set})
    if getattr(args, "no_select", False):
        harness = harness.model_copy(update={"select_features": False})
    return harness, load_section(args, "forest", ForestConfig), load_section(args, "select", FeatureSelectConfig)


def _write(result: ml.HarnessResult, out_dir: str, stem: str, feature_set: str) -> None:
    table = result.table()
    table.insert(0, "feature_set", feature_set)
    table.to_csv(os.path.join(out_dir, f"{stem}.csv"), index=False)
    result.confusion_table().to_csv(os.path.join(out_dir, f"{stem}_confusion.csv"), index=False)
    pd.DataFrame({"feature": result.selected}).to_csv(os.path.join(out_dir, f"{stem}_features.csv"), index=False)


def cmd_eval_split(args: argparse.Namespace, workers: int) -> None:
    harness, forest, select = _configs(args)
    out_dir = ensure_dir(args.output)
    result = ml.random_split_eval(load_feature_matrix(args.features), harness, forest, select, workers)
    _write(result, out_dir, "eval_split", harness.feature_set)
    summary = report.split_summary(result.table(), harness.feature_set)
    logger.info("Random split (%s): %s", harness.feature_set, summary.loc[0, "formatted"])


def cmd_eval_lopo(args: argparse.Namespace, workers: int) -> None:
    harness, forest, _ = _configs(args)
    out_dir = ensure_dir(args.output)
    result = ml.lopo_eval(load_feature_matrix(args.features), harness, forest, workers)
    _write(result, out_dir, "eval_lopo", harness.feature_set)
    summary = report.lopo_summary(result.table(), harness.feature_set)
    logger.info("LOPO (%s): %s", harness.feature_set, summary.loc[0, "formatted"])


def cmd_learning_curve(args: argparse.Namespace, workers: int) -> None:
    harness, forest, select = _configs(args)
    cfg = load_section(args, "learning_curve", LearningCurveConfig)
    if args.baseline:
        cfg = cfg.model_copy(update={"include_baseline": True})
    out_dir = ensure_dir(args.output)
    curve = ml.learning_curve(load_feature_matrix(args.features), cfg, harness, forest, select, workers)
    curve.to_csv(os.path.join(out_dir, "learning_curve.csv"), index=False)
    summary = report.curve_report(ml.curve_summary(curve))
    summary.to_csv(os.path.join(out_dir, "learning_curve_summary.csv"), index=False)
    for row in summary.itertuples(index=False):
        logger.info("Training size %d: %s (%d participants)", row.train_size, row.formatted, row.n_participants)
