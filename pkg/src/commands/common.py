"""Config-file loading and flag overrides shared by every subcommand."""

import argparse
import json
import logging
import os
from typing import TypeVar
from pydantic import BaseModel

from src.schemas import RunConfig
from src.settings import DATA_DIR

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)


def add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (RunConfig layout)")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Override a config key, e.g. --set rqa.radius_frac=0.25 (repeatable)",
    )


def add_run_args(parser: argparse.ArgumentParser) -> None:
    add_config_args(parser)
    parser.add_argument("--keypoints-dir", help="Root of <participant>/<session>_<condition> keypoint files")
    parser.add_argument("--events-dir", help="Root of matching task event logs")
    parser.add_argument("--output-dir", help=f"Output root (default: {DATA_DIR})")
    parser.add_argument("--stabilization", choices=["global", "per-participant", "none"])


def parse_value(text: str):
    """JSON when it parses (numbers, booleans, lists), otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(data: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ValueError(f"Override must be KEY=VALUE, got {assignment!r}")
    key, value = assignment.split("=", 1)
    node = data
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ValueError(f"Cannot set {key!r}: {part!r} is not a section")
    node[parts[-1]] = parse_value(value.strip())


def config_data(args: argparse.Namespace) -> dict:
    """Config file contents with --set overrides applied."""
    data = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
    for assignment in getattr(args, "overrides", []):
        apply_override(data, assignment)
    return data


def load_run_config(args: argparse.Namespace) -> RunConfig:
    data = config_data(args)
    for flag, key in (("keypoints_dir", "keypoints_dir"), ("events_dir", "events_dir"),
                      ("output_dir", "output_dir"), ("stabilization", "stabilization")):
        value = getattr(args, flag, None)
        if value is not None:
            data[key] = value
    data.setdefault("output_dir", DATA_DIR)
    fps = data.get("fps")
    if fps is not None:
        data.setdefault("window", {}).setdefault("fps", fps)
    config = RunConfig.model_validate(data)
    logger.debug("Config %s", config.semantic_hash()[:12])
    return config


def load_section(args: argparse.Namespace, name: str, model: type[M], default=None) -> M:
    """One nested config section, validated on its own (no input paths needed).

    Keys missing from the section fall back to `default()` when given, else to the model defaults.
    """
    base = default().model_dump() if default is not None else {}
    return model.model_validate({**base, **config_data(args).get(name, {})})


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
