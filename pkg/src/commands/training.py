"""train: fit the forest on a feature CSV and save it with joblib."""

import argparse
import logging
import os
import pandas as pd

from src import ml
from src.commands.common import add_config_args, load_section
from src.pipeline import load_feature_matrix
from src.schemas import FEATURE_SETS, FeatureSelectConfig, ForestConfig, HarnessConfig

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    p = subparsers.add_parser("train", help="Train a random forest on experimental-session rows")
    add_config_args(p)
    p.add_argument("--features", required=True, help="features.csv from the run subcommand")
    p.add_argument("--model", required=True, help="Output model file (.joblib)")
    p.add_argument("--feature-set", choices=FEATURE_SETS)
    p.add_argument("--no-select", action="store_true", help="Skip filtering and backward elimination")
    p.set_defaults(func=cmd_train)


def cmd_train(args: argparse.Namespace, workers: int) -> None:
    harness = load_section(args, "harness", HarnessConfig)
    forest = load_section(args, "forest", ForestConfig)
    select = load_section(args, "select", FeatureSelectConfig)
    feature_set = args.feature_set or harness.feature_set
    rows, columns = ml.prepare_matrix(ml.training_rows(load_feature_matrix(args.features)), feature_set)
    y = rows["condition"].to_numpy()
    if not args.no_select and harness.select_features:
        columns = ml.select_features(rows[columns], y, forest, select, workers)
    model = ml.train_forest(rows[columns], y, forest, workers)
    ml.save_model(model, columns, args.model)
    pd.DataFrame({"feature": columns}).to_csv(os.path.splitext(args.model)[0] + "_features.csv", index=False)
    logger.info("Saved %s: %d rows, %d features", args.model, len(rows), len(columns))
