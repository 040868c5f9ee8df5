"""Mean ± sd summary tables over harness outputs, exported as CSV or .xlsx."""

import logging
import math
import os
import numpy as np
import pandas as pd

from src.errors import EmptyInput

logger = logging.getLogger(__name__)

SPLIT_CSV = "eval_split.csv"
LOPO_CSV = "eval_lopo.csv"
CURVE_CSV = "learning_curve.csv"
SUMMARY_COLUMNS = ["protocol", "feature_set", "metric", "mean", "sd", "n", "formatted"]
REPORT_METRICS = ("balanced_accuracy", "weighted_f1", "kappa")


def mean_sd(values) -> tuple[float, float]:
    """Mean and sample sd (ddof=1); a single value has sd 0."""
    x = np.asarray(values, dtype=float)
    if len(x) == 0:
        raise EmptyInput("No values to summarise")
    sd = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
    return float(np.mean(x)), sd


def format_mean_sd(mean: float, sd: float) -> str:
    """Fractions rendered as percentages, e.g. 0.852, 0.015 -> '85.2% ± 1.5%'."""
    if math.isnan(mean):
        return "n/a"
    return f"{mean * 100:.1f}% ± {sd * 100:.1f}%"


def _rows(protocol: str, feature_set: str, table: pd.DataFrame, metrics) -> list[dict]:
    rows = []
    for metric in metrics:
        if metric not in table.columns:
            continue
        m, s = mean_sd(table[metric])
        rows.append({
            "protocol": protocol, "feature_set": feature_set, "metric": metric,
            "mean": m, "sd": s, "n": int(len(table)), "formatted": format_mean_sd(m, s),
        })
    return rows


def split_summary(table: pd.DataFrame, feature_set: str = "all", metrics=REPORT_METRICS) -> pd.DataFrame:
    """One row per metric over the random-split seeds."""
    return pd.DataFrame(_rows("random-split", feature_set, table, metrics), columns=SUMMARY_COLUMNS)


def lopo_summary(table: pd.DataFrame, feature_set: str = "all", metrics=REPORT_METRICS) -> pd.DataFrame:
    """Seeds are averaged within each participant first; sd is across participants."""
    per_participant = table.groupby("participant", sort=True)[[m for m in metrics if m in table.columns]].mean()
    return pd.DataFrame(_rows("lopo", feature_set, per_participant, metrics), columns=SUMMARY_COLUMNS)


def curve_report(summary: pd.DataFrame) -> pd.DataFrame:
    """Learning-curve summary (train_size, mean, sd, n_participants) with a formatted column."""
    out = summary.copy()
    out["formatted"] = [format_mean_sd(m, s) for m, s in zip(out["mean"], out["sd"])]
    return out


def confusion_report(confusion: pd.DataFrame) -> pd.DataFrame:
    """Row-normalised confusion percentages averaged over folds."""
    pred_cols = [c for c in confusion.columns if c.startswith("pred__")]
    return confusion.groupby("true", sort=False)[pred_cols].mean().reset_index()


def build_summary(results_dir: str) -> pd.DataFrame:
    """Collect every harness table found in results_dir into one summary table."""
    parts = []
    for name, summarise in ((SPLIT_CSV, split_summary), (LOPO_CSV, lopo_summary)):
        path = os.path.join(results_dir, name)
        if not os.path.exists(path):
            continue
        table = pd.read_csv(path)
        if "feature_set" in table.columns:
            for fs, group in table.groupby("feature_set", sort=False):
                parts.append(summarise(group, fs))
        else:
            parts.append(summarise(table))
    if not parts:
        raise EmptyInput(f"No harness outputs ({SPLIT_CSV}, {LOPO_CSV}) in {results_dir}")
    return pd.concat(parts, ignore_index=True)


def _cell(value):
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def export_table(table: pd.DataFrame, path: str, sheet: str = "Summary") -> None:
    """Write CSV, or .xlsx when the path says so."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".csv":
        table.to_csv(path, index=False)
    elif ext == ".xlsx":
        import openpyxl
        wb = openpyxl.Workbook()
        ws = wb.active
        ws.title = sheet
        ws.append(list(table.columns))
        for row in table.itertuples(index=False):
            ws.append([_cell(v) for v in row])
        wb.save(path)
    else:
        raise ValueError(f"Format must be .csv or .xlsx, got {path!r}")
    logger.info("Wrote %s (%d rows)", path, len(table))
