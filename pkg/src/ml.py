"""Random-forest classifier and evaluation harness: filtering, backward elimination,
random-split and leave-one-participant-out validation, learning curves, metrics.

A feature matrix is a DataFrame with the meta columns participant, session, condition
and window_index, plus one numeric column per feature.
"""

import logging
import math
from dataclasses import dataclass, field
import joblib
import numpy as np
import pandas as pd
from sklearn.ensemble import RandomForestClassifier
from sklearn.inspection import permutation_importance as sk_permutation_importance
from sklearn.metrics import (
    balanced_accuracy_score,
    cohen_kappa_score,
    confusion_matrix,
    f1_score,
    precision_recall_fscore_support,
)
from sklearn.model_selection import LeaveOneGroupOut, StratifiedKFold, train_test_split
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler

from src.errors import (
    AllFeaturesDropped,
    ClassMissingInSplit,
    EmptyInput,
    InsufficientWindows,
    SingleClassTraining,
    SingleParticipant,
)
from src.models import EvalReport
from src.schemas import CONDITIONS, FeatureSelectConfig, ForestConfig, HarnessConfig, LearningCurveConfig

logger = logging.getLogger(__name__)

META_COLUMNS = ["participant", "session", "condition", "window_index"]
NON_FEATURE_COLUMNS = set(META_COLUMNS) | {"start_s"}
KINEMATIC_LEVELS = ("__value__", "__velocity__", "__acceleration__")


# --- feature matrix ---

def feature_names(matrix: pd.DataFrame) -> list[str]:
    return [c for c in matrix.columns if c not in NON_FEATURE_COLUMNS]


def select_feature_set(columns: list[str], feature_set: str) -> list[str]:
    """Columns belonging to one named feature family, in their original order."""
    def is_perf(c):
        return c.startswith("perf__")

    def is_kin(c):
        return any(level in c for level in KINEMATIC_LEVELS)

    def is_rqa(c):
        return "__rqa__" in c or "__crqa__" in c

    rules = {
        "performance": is_perf,
        "kinematic": is_kin,
        "rqa": is_rqa,
        "pose": lambda c: is_kin(c) or is_rqa(c),
        "combined": lambda c: is_kin(c) or is_perf(c),
        "all": lambda c: True,
    }
    if feature_set not in rules:
        raise ValueError(f"Unknown feature set: {feature_set!r}")
    return [c for c in columns if rules[feature_set](c)]


def training_rows(matrix: pd.DataFrame) -> pd.DataFrame:
    """Experimental-session rows when a session column is present, otherwise everything."""
    if "session" in matrix.columns and (matrix["session"] == "experimental").any():
        return matrix[matrix["session"] == "experimental"]
    return matrix


def prepare_matrix(matrix: pd.DataFrame, feature_set: str = "all") -> tuple[pd.DataFrame, list[str]]:
    """Rows usable for the feature set (no missing values in its columns) and its column list."""
    if matrix.empty:
        raise EmptyInput("Feature matrix has no rows")
    columns = select_feature_set(feature_names(matrix), feature_set)
    if not columns:
        raise AllFeaturesDropped(f"Feature set {feature_set!r} matches no columns")
    complete = matrix[columns].notna().all(axis=1)
    if not complete.all():
        logger.info("Dropping %d rows with missing %s features", int((~complete).sum()), feature_set)
    rows = matrix[complete].reset_index(drop=True)
    if rows.empty:
        raise EmptyInput(f"No complete rows for feature set {feature_set!r}")
    return rows, columns


def filter_features(matrix: pd.DataFrame, columns: list[str], cfg: FeatureSelectConfig | None = None) -> tuple[list[str], pd.DataFrame]:
    """Drop near-constant columns, then the later column of every highly correlated pair.

    Returns the kept columns and a removal log (feature, reason, partner).
    """
    cfg = cfg or FeatureSelectConfig()
    values = matrix[columns].to_numpy(dtype=float)
    log = []
    variances = values.var(axis=0)
    kept = []
    for name, var in zip(columns, variances):
        if var < cfg.var_threshold:
            log.append({"feature": name, "reason": "variance", "partner": ""})
        else:
            kept.append(name)

    if len(kept) > 1:
        corr = np.abs(np.corrcoef(matrix[kept].to_numpy(dtype=float), rowvar=False))
        dropped = np.zeros(len(kept), dtype=bool)
        for i in range(len(kept)):
            if dropped[i]:
                continue
            for j in range(i + 1, len(kept)):
                if not dropped[j] and corr[i, j] > cfg.corr_threshold:
                    dropped[j] = True
                    log.append({"feature": kept[j], "reason": "correlation", "partner": kept[i]})
        kept = [c for c, d in zip(kept, dropped) if not d]

    if not kept:
        raise AllFeaturesDropped("Every feature was removed by variance/correlation filtering")
    logger.info("Filtering kept %d of %d features", len(kept), len(columns))
    return kept, pd.DataFrame(log, columns=["feature", "reason", "partner"])


# --- model ---

def train_forest(X: pd.DataFrame | np.ndarray, y, cfg: ForestConfig | None = None, n_jobs: int = 1) -> Pipeline:
    """Standardise on the training rows, then fit a class-balanced random forest."""
    cfg = cfg or ForestConfig()
    labels = np.unique(np.asarray(y))
    if len(labels) < 2:
        raise SingleClassTraining(f"Training data holds a single class: {labels.tolist()!r}")
    model = Pipeline([
        ("scaler", StandardScaler()),
        ("forest", RandomForestClassifier(
            n_estimators=cfg.n_trees,
            class_weight=cfg.class_weighting,
            max_depth=cfg.max_depth,
            max_features=cfg.features_per_split,
            bootstrap=cfg.bootstrap,
            random_state=cfg.seed,
            n_jobs=n_jobs,
        )),
    ])
    model.fit(np.asarray(X, dtype=float), np.asarray(y))
    return model


def save_model(model: Pipeline, columns: list[str], path: str) -> None:
    joblib.dump({"model": model, "columns": columns}, path)


def load_model(path: str) -> tuple[Pipeline, list[str]]:
    bundle = joblib.load(path)
    return bundle["model"], bundle["columns"]


def permutation_importance(model: Pipeline, X, y, cfg: FeatureSelectConfig | None = None, seed: int = 0, n_jobs: int = 1) -> np.ndarray:
    """Mean balanced-accuracy drop when each column is shuffled, over perm_repeats shuffles."""
    cfg = cfg or FeatureSelectConfig()
    result = sk_permutation_importance(
        model, np.asarray(X, dtype=float), np.asarray(y),
        scoring="balanced_accuracy", n_repeats=cfg.perm_repeats, random_state=seed, n_jobs=n_jobs,
    )
    return result.importances_mean


def _folds(y: np.ndarray, n_folds: int, seed: int) -> StratifiedKFold:
    smallest = int(pd.Series(y).value_counts().min())
    k = min(n_folds, smallest)
    if k < 2:
        raise ClassMissingInSplit(f"Cross-validation needs two rows per class, smallest class has {smallest}")
    if k < n_folds:
        logger.debug("Using %d folds instead of %d (smallest class has %d rows)", k, n_folds, smallest)
    return StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)


def cv_importance(X: pd.DataFrame, y, forest: ForestConfig, cfg: FeatureSelectConfig, n_jobs: int = 1) -> np.ndarray:
    """Permutation importance averaged over cv_folds held-out folds."""
    Xa, ya = X.to_numpy(dtype=float), np.asarray(y)
    scores = []
    for train, test in _folds(ya, cfg.cv_folds, forest.seed).split(Xa, ya):
        model = train_forest(Xa[train], ya[train], forest, n_jobs)
        scores.append(permutation_importance(model, Xa[test], ya[test], cfg, seed=forest.seed, n_jobs=n_jobs))
    return np.mean(scores, axis=0)


def cv_score(X: pd.DataFrame, y, forest: ForestConfig, cfg: FeatureSelectConfig, n_jobs: int = 1) -> float:
    Xa, ya = X.to_numpy(dtype=float), np.asarray(y)
    scores = []
    for train, test in _folds(ya, cfg.cv_folds, forest.seed).split(Xa, ya):
        model = train_forest(Xa[train], ya[train], forest, n_jobs)
        scores.append(balanced_accuracy_score(ya[test], model.predict(Xa[test])))
    return float(np.mean(scores))


def backward_eliminate(X: pd.DataFrame, y, forest: ForestConfig | None = None, cfg: FeatureSelectConfig | None = None, n_jobs: int = 1) -> list[str]:
    """Repeatedly drop the least important elim_fraction of features.

    Stops before a step that would take cross-validated balanced accuracy more than
    `tolerance` below the best seen, or when min_features remain.
    """
    forest = forest or ForestConfig()
    cfg = cfg or FeatureSelectConfig()
    current = list(X.columns)
    best = cv_score(X[current], y, forest, cfg, n_jobs)
    while len(current) > cfg.min_features:
        importance = cv_importance(X[current], y, forest, cfg, n_jobs)
        n_drop = max(1, int(math.floor(len(current) * cfg.elim_fraction)))
        n_drop = min(n_drop, len(current) - cfg.min_features)
        order = np.argsort(importance, kind="stable")
        drop = {current[i] for i in order[:n_drop]}
        candidate = [c for c in current if c not in drop]
        score = cv_score(X[candidate], y, forest, cfg, n_jobs)
        logger.debug("Elimination %d -> %d features: %.4f (best %.4f)", len(current), len(candidate), score, best)
        if score < best - cfg.tolerance:
            break
        current = candidate
        best = max(best, score)
    logger.info("Backward elimination kept %d of %d features", len(current), X.shape[1])
    return current


def select_features(X: pd.DataFrame, y, forest: ForestConfig, cfg: FeatureSelectConfig, n_jobs: int = 1) -> list[str]:
    """Filtering followed by backward elimination, fitted on the rows given only."""
    kept, _ = filter_features(X, list(X.columns), cfg)
    return backward_eliminate(X[kept], y, forest, cfg, n_jobs)


# --- metrics ---

def eval_metrics(y_true, y_pred, labels: tuple[str, ...] = CONDITIONS) -> EvalReport:
    yt, yp = np.asarray(y_true), np.asarray(y_pred)
    if len(yt) == 0:
        raise EmptyInput("No predictions to evaluate")
    if len(yt) != len(yp):
        raise ValueError(f"{len(yt)} labels but {len(yp)} predictions")
    labels = tuple(labels)
    precision, recall, f1, _ = precision_recall_fscore_support(yt, yp, labels=list(labels), zero_division=0)
    return EvalReport(
        balanced_accuracy=float(balanced_accuracy_score(yt, yp)),
        weighted_f1=float(f1_score(yt, yp, labels=list(labels), average="weighted", zero_division=0)),
        kappa=float(cohen_kappa_score(yt, yp, labels=list(labels))),
        precision=dict(zip(labels, map(float, precision))),
        recall=dict(zip(labels, map(float, recall))),
        f1=dict(zip(labels, map(float, f1))),
        confusion=confusion_matrix(yt, yp, labels=list(labels), normalize="true") * 100,
        labels=labels,
        n_test=len(yt),
    )


@dataclass
class HarnessResult:
    """Per-fold reports with their identifiers and the features each fold used."""
    folds: list[dict] = field(default_factory=list)
    reports: list[EvalReport] = field(default_factory=list)
    selected: list[str] = field(default_factory=list)

    def add(self, report: EvalReport, **ident) -> None:
        self.folds.append(ident)
        self.reports.append(report)

    def table(self) -> pd.DataFrame:
        return pd.DataFrame([{**ident, **r.as_row()} for ident, r in zip(self.folds, self.reports)])

    def confusion_table(self) -> pd.DataFrame:
        rows = []
        for ident, r in zip(self.folds, self.reports):
            for i, true in enumerate(r.labels):
                rows.append({**ident, "true": true, **{f"pred__{p}": float(r.confusion[i, j]) for j, p in enumerate(r.labels)}})
        return pd.DataFrame(rows)


def _check_classes(y_train, y_test, labels) -> None:
    for name, ys in (("training", y_train), ("test", y_test)):
        missing = set(labels) - set(np.unique(ys))
        if missing:
            raise ClassMissingInSplit(f"Class(es) {sorted(missing)} absent from the {name} split")


# --- validation protocols ---

def random_split_eval(
    matrix: pd.DataFrame,
    harness: HarnessConfig | None = None,
    forest: ForestConfig | None = None,
    select: FeatureSelectConfig | None = None,
    n_jobs: int = 1,
) -> HarnessResult:
    """Stratified train/test splits, one per seed.

    Feature selection runs once, on the training rows of the first seed, and the chosen
    columns are reused for every seed. The forest seed follows the split seed.
    """
    harness = harness or HarnessConfig()
    forest = forest or ForestConfig()
    select = select or FeatureSelectConfig()
    rows, columns = prepare_matrix(training_rows(matrix), harness.feature_set)
    labels = tuple(c for c in CONDITIONS if c in set(rows["condition"]))
    X, y = rows[columns], rows["condition"].to_numpy()
    result = HarnessResult(selected=columns)

    for n, seed in enumerate(harness.split_seeds):
        try:
            train, test = train_test_split(np.arange(len(rows)), test_size=harness.test_size, stratify=y, random_state=seed)
        except ValueError as e:
            raise ClassMissingInSplit(f"Stratified split failed: {e}") from None
        _check_classes(y[train], y[test], labels)
        if n == 0 and harness.select_features:
            result.selected = select_features(X.iloc[train], y[train], forest, select, n_jobs)
        cols = result.selected
        model = train_forest(X.iloc[train][cols], y[train], forest.model_copy(update={"seed": seed}), n_jobs)
        report = eval_metrics(y[test], model.predict(X.iloc[test][cols].to_numpy(dtype=float)), labels)
        result.add(report, seed=seed)
        logger.info("Split seed %d: balanced accuracy %.3f", seed, report.balanced_accuracy)
    return result


def lopo_eval(
    matrix: pd.DataFrame,
    harness: HarnessConfig | None = None,
    forest: ForestConfig | None = None,
    n_jobs: int = 1,
) -> HarnessResult:
    """Leave-one-participant-out: train on everyone else with every feature, test on the held-out person.

    Each fold is repeated with lopo_seeds_per_participant forest seeds; fold membership
    itself is deterministic.
    """
    harness = harness or HarnessConfig()
    forest = forest or ForestConfig()
    rows, columns = prepare_matrix(training_rows(matrix), harness.feature_set)
    groups = rows["participant"].to_numpy()
    if len(np.unique(groups)) < 2:
        raise SingleParticipant("LOPO needs at least two participants")
    labels = tuple(c for c in CONDITIONS if c in set(rows["condition"]))
    X, y = rows[columns].to_numpy(dtype=float), rows["condition"].to_numpy()
    result = HarnessResult(selected=columns)

    for train, test in LeaveOneGroupOut().split(X, y, groups):
        held_out = str(groups[test][0])
        if len(np.unique(y[train])) < 2:
            raise SingleClassTraining(f"Training rows without participant {held_out} hold a single class")
        for seed in range(harness.lopo_seeds_per_participant):
            model = train_forest(X[train], y[train], forest.model_copy(update={"seed": seed}), n_jobs)
            report = eval_metrics(y[test], model.predict(X[test]), labels)
            result.add(report, participant=held_out, seed=seed)
        logger.info("LOPO %s done", held_out)
    return result


def participant_means(result: HarnessResult, metric: str = "balanced_accuracy") -> pd.Series:
    """Per-participant mean of a metric over forest seeds."""
    return result.table().groupby("participant", sort=True)[metric].mean()


def _check_windows(participant, size: int, per_cond: dict, base: pd.DataFrame, cfg: LearningCurveConfig) -> None:
    need = size + cfg.buffer + 1
    short = [c for c, g in per_cond.items() if len(g) < need]
    if short:
        raise InsufficientWindows(f"{participant}: size {size} needs {need} windows in {short}")
    if cfg.include_baseline:
        short_b = [c for c in CONDITIONS if (base["condition"] == c).sum() < cfg.baseline_windows_per_condition]
        if short_b:
            raise InsufficientWindows(f"{participant}: too few baseline windows in {short_b}")


def learning_curve(
    matrix: pd.DataFrame,
    cfg: LearningCurveConfig | None = None,
    harness: HarnessConfig | None = None,
    forest: ForestConfig | None = None,
    select: FeatureSelectConfig | None = None,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """Participant-specific accuracy against training windows per condition.

    For size N the first N experimental windows of each condition train the model (plus the
    first baseline windows when include_baseline), the next `buffer` windows are skipped and
    the rest are the test set. Feature selection runs once per participant at the largest
    size that participant supports. Returns one row per (participant, train_size, seed).
    """
    cfg = cfg or LearningCurveConfig()
    harness = harness or HarnessConfig()
    forest = forest or ForestConfig()
    select = select or FeatureSelectConfig()
    rows, columns = prepare_matrix(matrix, harness.feature_set)
    if "session" not in rows.columns:
        rows = rows.assign(session="experimental")
    sizes = [s for s in cfg.train_sizes if s > 0 or cfg.include_baseline]
    if len(sizes) < len(cfg.train_sizes):
        logger.warning("Training size 0 needs baseline windows; skipped")
    out = []

    for participant, prows in rows.groupby("participant", sort=True):
        exp = prows[prows["session"] == "experimental"].sort_values(["condition", "window_index"], kind="stable")
        base = prows[prows["session"] == "baseline"].sort_values(["condition", "window_index"], kind="stable")
        per_cond = {c: exp[exp["condition"] == c] for c in CONDITIONS}
        usable = []
        for size in sizes:
            try:
                _check_windows(participant, size, per_cond, base, cfg)
            except InsufficientWindows as e:
                logger.warning("%s; participant excluded at this size", e)
                continue
            usable.append(size)
        if not usable:
            continue

        def split(size: int) -> tuple[pd.DataFrame, pd.DataFrame]:
            train = [g.iloc[:size] for g in per_cond.values()]
            test = [g.iloc[size + cfg.buffer:] for g in per_cond.values()]
            if cfg.include_baseline:
                train += [base[base["condition"] == c].iloc[:cfg.baseline_windows_per_condition] for c in CONDITIONS]
            return pd.concat(train), pd.concat(test)

        cols = columns
        if harness.select_features:
            train_max, _ = split(max(usable))
            cols = select_features(train_max[columns], train_max["condition"].to_numpy(), forest, select, n_jobs)

        for size in usable:
            train, test = split(size)
            for seed in range(cfg.seeds_per_point):
                model = train_forest(train[cols], train["condition"].to_numpy(), forest.model_copy(update={"seed": seed}), n_jobs)
                pred = model.predict(test[cols].to_numpy(dtype=float))
                out.append({
                    "participant": participant,
                    "train_size": size,
                    "seed": seed,
                    "n_train": len(train),
                    "n_test": len(test),
                    "balanced_accuracy": balanced_accuracy_score(test["condition"], pred),
                })
        logger.info("Learning curve for %s: sizes %s", participant, usable)
    return pd.DataFrame(out, columns=["participant", "train_size", "seed", "n_train", "n_test", "balanced_accuracy"])


def curve_summary(curve: pd.DataFrame) -> pd.DataFrame:
    """Population mean and sd of per-participant accuracy at each training size."""
    per_participant = curve.groupby(["train_size", "participant"])["balanced_accuracy"].mean().reset_index()
    summary = per_participant.groupby("train_size")["balanced_accuracy"].agg(
        mean="mean", sd=lambda s: float(s.std(ddof=1)) if len(s) > 1 else 0.0, n_participants="count"
    )
    return summary.reset_index()
