"""Unit tests for feature families, filtering, the forest, selection, metrics and the harnesses."""

import logging
import numpy as np
import pandas as pd
import pytest

from src.errors import (
    AllFeaturesDropped,
    EmptyInput,
    SingleClassTraining,
    SingleParticipant,
)
from src.ml import (
    HarnessResult,
    backward_eliminate,
    curve_summary,
    eval_metrics,
    filter_features,
    learning_curve,
    load_model,
    lopo_eval,
    participant_means,
    permutation_importance,
    prepare_matrix,
    random_split_eval,
    save_model,
    select_feature_set,
    train_forest,
    training_rows,
)
from src.schemas import CONDITIONS, FeatureSelectConfig, LearningCurveConfig
from src.synth import gen_participant_dataset

COLUMNS = ["blink__value__rms", "tx__velocity__sd", "blink__rqa__rr", "tx__pupil_x__crqa__det", "perf__sysmon__acc"]


def blobs(n_per_class: int, n_informative: int, n_noise: int, seed: int = 0, spread: float = 0.3) -> tuple[pd.DataFrame, np.ndarray]:
    """Three classes whose means differ on the informative columns only."""
    rng = np.random.default_rng(seed)
    y = np.repeat(np.array(CONDITIONS), n_per_class)
    level = np.repeat(np.arange(3), n_per_class)
    cols = {}
    for k in range(n_informative):
        cols[f"inf{k}"] = level * 2.0 + rng.normal(0, spread, len(y))
    for k in range(n_noise):
        cols[f"noise{k}"] = rng.normal(size=len(y))
    return pd.DataFrame(cols), y


@pytest.fixture(scope="module")
def dataset():
    matrix, _ = gen_participant_dataset(n_participants=3, windows_per_condition=8, baseline_windows=3, seed=1)
    return matrix


# --- feature families ---

@pytest.mark.parametrize("feature_set,expected", [
    ("performance", ["perf__sysmon__acc"]),
    ("kinematic", ["blink__value__rms", "tx__velocity__sd"]),
    ("rqa", ["blink__rqa__rr", "tx__pupil_x__crqa__det"]),
    ("pose", ["blink__value__rms", "tx__velocity__sd", "blink__rqa__rr", "tx__pupil_x__crqa__det"]),
    ("combined", ["blink__value__rms", "tx__velocity__sd", "perf__sysmon__acc"]),
    ("all", COLUMNS),
])
def test_feature_families(feature_set, expected):
    assert select_feature_set(COLUMNS, feature_set) == expected


def test_unknown_feature_family():
    with pytest.raises(ValueError):
        select_feature_set(COLUMNS, "gaze")


def test_training_rows_prefer_experimental(dataset):
    rows = training_rows(dataset)
    assert set(rows["session"]) == {"experimental"}
    assert len(rows) == 3 * 3 * 8


def test_prepare_matrix_drops_incomplete_rows():
    matrix = pd.DataFrame({
        "participant": ["P01", "P01", "P02"],
        "condition": ["Low", "High", "Low"],
        "window_index": [0, 1, 0],
        "perf__tracking__acc": [0.9, np.nan, 0.8],
        "blink__value__mean": [1.0, 2.0, 3.0],
    })
    rows, cols = prepare_matrix(matrix, "performance")
    assert cols == ["perf__tracking__acc"]
    assert rows["participant"].tolist() == ["P01", "P02"]
    rows, _ = prepare_matrix(matrix, "kinematic")
    assert len(rows) == 3


def test_prepare_matrix_errors():
    with pytest.raises(EmptyInput):
        prepare_matrix(pd.DataFrame())
    matrix = pd.DataFrame({"participant": ["P01"], "condition": ["Low"], "blink__value__mean": [1.0]})
    with pytest.raises(AllFeaturesDropped):
        prepare_matrix(matrix, "rqa")


# --- filtering ---

def test_filter_drops_constant_and_correlated():
    rng = np.random.default_rng(0)
    a = rng.normal(size=200)
    a = (a - a.mean()) / a.std()
    z = rng.normal(size=200)
    z -= z.mean()
    z -= (z @ a) / (a @ a) * a
    z /= z.std()
    b = 0.96 * a + 0.28 * z
    c = rng.normal(size=200)
    frame = pd.DataFrame({"a": a, "const": np.full(200, 4.0), "b": b, "dup": a.copy(), "c": c})
    kept, log = filter_features(frame, list(frame.columns))
    assert kept == ["a", "c"]
    assert log.set_index("feature")["reason"].to_dict() == {"const": "variance", "b": "correlation", "dup": "correlation"}
    assert log.set_index("feature").loc["b", "partner"] == "a"


def test_filter_everything_constant():
    frame = pd.DataFrame({"x": np.ones(5), "y": np.zeros(5)})
    with pytest.raises(AllFeaturesDropped):
        filter_features(frame, ["x", "y"])


# --- forest ---

def test_forest_separates_blobs(small_forest):
    X, y = blobs(40, 2, 2)
    model = train_forest(X, y, small_forest)
    assert (model.predict(X.to_numpy()) == y).all()


def test_forest_single_class(small_forest):
    with pytest.raises(SingleClassTraining):
        train_forest(np.zeros((4, 2)), ["Low"] * 4, small_forest)


def test_forest_is_deterministic(small_forest):
    X, y = blobs(30, 2, 3, spread=1.5)
    Xt, _ = blobs(20, 2, 3, seed=9, spread=1.5)
    first = train_forest(X, y, small_forest).predict_proba(Xt.to_numpy())
    second = train_forest(X, y, small_forest).predict_proba(Xt.to_numpy())
    np.testing.assert_array_equal(first, second)


def test_model_file_keeps_columns(tmp_path, small_forest):
    X, y = blobs(20, 2, 1)
    model = train_forest(X, y, small_forest)
    path = tmp_path / "model.joblib"
    save_model(model, list(X.columns), str(path))
    loaded, columns = load_model(str(path))
    assert columns == ["inf0", "inf1", "noise0"]
    np.testing.assert_array_equal(loaded.predict(X.to_numpy()), model.predict(X.to_numpy()))


def test_permutation_importance_ranks_the_informative_feature(small_forest):
    X, y = blobs(100, 1, 3)
    Xt, yt = blobs(100, 1, 3, seed=5)
    model = train_forest(X, y, small_forest.model_copy(update={"n_trees": 100}))
    scores = permutation_importance(model, Xt, yt, FeatureSelectConfig(perm_repeats=5), seed=0)
    assert int(np.argmax(scores)) == 0
    assert np.all(np.abs(scores[1:]) < 0.05)


# --- backward elimination ---

def test_elimination_keeps_informative_features(small_forest, fast_select):
    X, y = blobs(80, 5, 15, spread=2.0)
    select = fast_select.model_copy(update={"min_features": 5})
    kept = backward_eliminate(X, y, small_forest, select)
    assert len(kept) >= 5
    assert sum(c.startswith("inf") for c in kept) >= 4


def test_elimination_stops_at_min_features(small_forest, fast_select):
    X, y = blobs(30, 3, 2)
    select = fast_select.model_copy(update={"min_features": 5})
    assert backward_eliminate(X, y, small_forest, select) == list(X.columns)


def test_elimination_is_deterministic(small_forest, fast_select):
    X, y = blobs(30, 3, 6, spread=1.0)
    assert backward_eliminate(X, y, small_forest, fast_select) == backward_eliminate(X, y, small_forest, fast_select)


# --- metrics ---

def test_perfect_predictions():
    y = ["Low", "Moderate", "High"] * 4
    r = eval_metrics(y, y)
    assert r.balanced_accuracy == 1.0 and r.kappa == 1.0
    np.testing.assert_array_equal(np.diag(r.confusion), [100.0, 100.0, 100.0])


def test_constant_predictor():
    y = ["Low", "Moderate", "High"] * 4
    r = eval_metrics(y, ["Low"] * 12)
    assert r.balanced_accuracy == pytest.approx(1 / 3)
    assert r.kappa == pytest.approx(0.0)
    assert r.recall == {"Low": 1.0, "Moderate": 0.0, "High": 0.0}


def test_kappa_by_hand():
    y_true = ["Low"] * 4 + ["Moderate"] * 4 + ["High"] * 4
    y_pred = ["Low", "Low", "Low", "Moderate",
              "Moderate", "Moderate", "High", "Low",
              "High", "High", "High", "Moderate"]
    r = eval_metrics(y_true, y_pred)
    assert r.kappa == pytest.approx(0.5)
    assert r.balanced_accuracy == pytest.approx(8 / 12)
    np.testing.assert_allclose(r.confusion[1], [25.0, 50.0, 25.0])


def test_metrics_input_errors():
    with pytest.raises(EmptyInput):
        eval_metrics([], [])
    with pytest.raises(ValueError):
        eval_metrics(["Low"], ["Low", "High"])


def test_result_tables():
    result = HarnessResult()
    y = ["Low", "Moderate", "High"]
    result.add(eval_metrics(y, y), seed=3)
    table = result.table()
    assert table.loc[0, "seed"] == 3
    assert {"balanced_accuracy", "weighted_f1", "kappa", "n_test", "recall__High"} <= set(table.columns)
    confusion = result.confusion_table()
    assert confusion["true"].tolist() == list(CONDITIONS)
    assert list(confusion.columns) == ["seed", "true", "pred__Low", "pred__Moderate", "pred__High"]


# --- harnesses ---

def test_random_split_runs_one_fold_per_seed(dataset, quick_harness, small_forest, fast_select):
    result = random_split_eval(dataset, quick_harness, small_forest, fast_select)
    table = result.table()
    assert table["seed"].tolist() == [0, 1, 2]
    assert (table["n_test"] == 15).all()
    assert result.selected == prepare_matrix(dataset, "all")[1]


def test_random_split_is_deterministic(dataset, quick_harness, small_forest, fast_select):
    first = random_split_eval(dataset, quick_harness, small_forest, fast_select).table()
    second = random_split_eval(dataset, quick_harness, small_forest, fast_select).table()
    pd.testing.assert_frame_equal(first, second)


def test_random_split_with_selection(dataset, quick_harness, small_forest, fast_select):
    harness = quick_harness.model_copy(update={"select_features": True, "split_seeds": [0]})
    result = random_split_eval(dataset, harness, small_forest, fast_select)
    everything = prepare_matrix(dataset, "all")[1]
    assert len(result.selected) >= 3
    assert set(result.selected) <= set(everything)


def test_lopo_one_fold_per_participant(dataset, quick_harness, small_forest):
    result = lopo_eval(dataset, quick_harness, small_forest)
    table = result.table()
    assert table["participant"].tolist() == ["P01", "P01", "P02", "P02", "P03", "P03"]
    assert (table["n_test"] == 24).all()
    assert participant_means(result).index.tolist() == ["P01", "P02", "P03"]


def test_lopo_two_participants_two_folds(quick_harness, small_forest):
    matrix, _ = gen_participant_dataset(n_participants=2, windows_per_condition=4, seed=2)
    harness = quick_harness.model_copy(update={"lopo_seeds_per_participant": 1})
    assert len(lopo_eval(matrix, harness, small_forest).reports) == 2


def test_lopo_needs_two_participants(quick_harness, small_forest):
    matrix, _ = gen_participant_dataset(n_participants=1, windows_per_condition=4)
    with pytest.raises(SingleParticipant):
        lopo_eval(matrix, quick_harness, small_forest)


# --- learning curve ---

def test_learning_curve_training_sizes(dataset, quick_harness, small_forest):
    cfg = LearningCurveConfig(train_sizes=[0, 2], seeds_per_point=1, include_baseline=True)
    curve = learning_curve(dataset, cfg, quick_harness, small_forest)
    assert len(curve) == 3 * 2
    assert set(zip(curve["train_size"], curve["n_train"])) == {(0, 9), (2, 15)}
    assert (curve.loc[curve["train_size"] == 2, "n_test"] == 3 * (8 - 2 - 1)).all()


def test_learning_curve_without_baseline_skips_size_zero(dataset, quick_harness, small_forest, caplog):
    cfg = LearningCurveConfig(train_sizes=[0, 2], seeds_per_point=1)
    with caplog.at_level(logging.WARNING, logger="src.ml"):
        curve = learning_curve(dataset, cfg, quick_harness, small_forest)
    assert curve["train_size"].unique().tolist() == [2]
    assert (curve["n_train"] == 6).all()
    assert "size 0" in caplog.text


def test_learning_curve_excludes_sizes_without_test_windows(dataset, quick_harness, small_forest):
    cfg = LearningCurveConfig(train_sizes=[2, 7], seeds_per_point=1)
    curve = learning_curve(dataset, cfg, quick_harness, small_forest)
    assert curve["train_size"].unique().tolist() == [2]


def test_curve_summary():
    curve = pd.DataFrame({
        "participant": ["P01", "P01", "P02", "P02", "P01"],
        "train_size": [2, 2, 2, 2, 3],
        "seed": [0, 1, 0, 1, 0],
        "n_train": 6, "n_test": 3,
        "balanced_accuracy": [0.4, 0.6, 0.8, 0.8, 0.9],
    })
    summary = curve_summary(curve)
    assert summary["train_size"].tolist() == [2, 3]
    assert summary.loc[0, "mean"] == pytest.approx(0.65)
    assert summary.loc[0, "sd"] == pytest.approx(np.std([0.5, 0.8], ddof=1))
    assert summary.loc[1, "sd"] == 0.0
    assert summary["n_participants"].tolist() == [2, 1]
