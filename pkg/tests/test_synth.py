"""Unit tests for the synthetic generators and the brute-force recurrence oracle."""

import json
import math
import os
import numpy as np
import pytest

from src.align import procrustes_fit
from src.dynamics import recurrence_matrix, rqa_metrics
from src.errors import EmptyTrajectory, InvalidParams, TooLarge
from src.ingest import discover_recordings, load_keypoints
from src.models import Template
from src.schemas import CONDITIONS, RegimeSegment, RegimeSpec, RqaConfig
from src.synth import (
    base_face,
    brute_force_rqa,
    gen_event_log,
    gen_keypoint_session,
    gen_participant_dataset,
    gen_signal,
    write_synthetic_tree,
)
from src.taskperf import read_event_log


# --- signals ---

def test_sine_reaches_its_amplitude():
    x = gen_signal(RegimeSpec(kind="sine", amplitude=1.0, frequency=1.0), 600, fps=60)
    assert x.max() == pytest.approx(1.0, abs=1e-9)
    assert x.min() == pytest.approx(-1.0, abs=1e-9)


def test_ar1_without_memory_is_white():
    x = gen_signal(RegimeSpec(kind="ar1", ar_coef=0.0, seed=3), 10000)
    assert abs(np.corrcoef(x[:-1], x[1:])[0, 1]) < 0.05


def test_ar1_memory_shows_in_autocorrelation():
    x = gen_signal(RegimeSpec(kind="ar1", ar_coef=0.9, seed=3), 10000)
    assert np.corrcoef(x[:-1], x[1:])[0, 1] == pytest.approx(0.9, abs=0.03)


def test_same_seed_same_series():
    spec = RegimeSpec(kind="white-noise", seed=11)
    np.testing.assert_array_equal(gen_signal(spec, 500), gen_signal(spec, 500))
    assert not np.array_equal(gen_signal(spec, 500), gen_signal(spec.model_copy(update={"seed": 12}), 500))


def test_jitter_only_affects_noisy_sine():
    clean = gen_signal(RegimeSpec(kind="sine"), 300)
    noisy = gen_signal(RegimeSpec(kind="sine", jitter_sd=0.1, seed=1), 300)
    assert 0.05 < np.std(noisy - clean) < 0.15


def test_switching_cycles_its_schedule():
    sine = RegimeSpec(kind="sine", frequency=2.0)
    spec = RegimeSpec(kind="switching", seed=5, schedule=[
        RegimeSegment(n=100, spec=sine),
        RegimeSegment(n=50, spec=RegimeSpec(kind="white-noise", amplitude=0.0)),
    ])
    x = gen_signal(spec, 320)
    assert len(x) == 320
    np.testing.assert_allclose(x[:100], gen_signal(sine, 100))
    assert np.all(x[100:150] == 0.0)
    np.testing.assert_allclose(x[150:250], gen_signal(sine, 100))


@pytest.mark.parametrize("spec,n", [
    (RegimeSpec(kind="sine", frequency=30.0), 100),
    (RegimeSpec(kind="sum-of-sines", frequencies=[1.0, 31.0]), 100),
    (RegimeSpec(kind="sine"), 0),
])
def test_invalid_signal_params(spec, n):
    with pytest.raises(InvalidParams):
        gen_signal(spec, n, fps=60)


def test_switching_needs_a_schedule():
    with pytest.raises(ValueError):
        RegimeSpec(kind="switching")


# --- feature-level datasets ---

def test_dataset_layout():
    matrix, labels = gen_participant_dataset(n_participants=2, windows_per_condition=3, baseline_windows=2, seed=4)
    assert len(matrix) == 2 * 3 * (3 + 2)
    assert list(matrix.columns[:4]) == ["participant", "session", "condition", "window_index"]
    assert sorted(matrix["participant"].unique()) == ["P01", "P02"]
    exp = matrix[matrix["session"] == "experimental"]
    assert exp["condition"].value_counts().to_dict() == {c: 6 for c in CONDITIONS}
    assert (labels == matrix["condition"]).all()
    assert len([c for c in matrix.columns if c.startswith("perf__")]) == 6
    assert len([c for c in matrix.columns if "__value__" in c]) == 4 * 9


def test_dataset_is_seed_deterministic():
    a, _ = gen_participant_dataset(2, 2, seed=8)
    b, _ = gen_participant_dataset(2, 2, seed=8)
    assert a.equals(b)


def test_dataset_with_recurrence_columns():
    matrix, _ = gen_participant_dataset(1, 1, with_rqa=True, with_perf=False)
    rqa_cols = [c for c in matrix.columns if "__rqa__" in c]
    assert len(rqa_cols) == 11
    assert all(c.startswith("blink__rqa__") for c in rqa_cols)
    assert not any(c.startswith("perf__") for c in matrix.columns)


@pytest.mark.parametrize("kwargs", [
    {"n_participants": 0, "windows_per_condition": 2},
    {"n_participants": 2, "windows_per_condition": 0},
    {"n_participants": 2, "windows_per_condition": 2, "idiosyncrasy": 1.5},
])
def test_dataset_invalid_params(kwargs):
    with pytest.raises(InvalidParams):
        gen_participant_dataset(**kwargs)


# --- brute-force oracle ---

def test_oracle_alternating_series():
    traj = [[1.0], [2.0], [1.0], [2.0], [1.0], [2.0]]
    assert brute_force_rqa(traj, cfg=RqaConfig(theiler=2)).rr == pytest.approx(0.6)


def test_oracle_constant_series():
    m = brute_force_rqa(np.zeros((40, 2)))
    assert m.rr == 1.0
    assert m.det > 0.9


def test_oracle_without_recurrence():
    m = brute_force_rqa([0.0, 1.0], [10.0, 20.0], RqaConfig(cross_theiler=0))
    assert m.rr == 0.0 and m.det == 0.0
    assert m.flags == ("no_recurrent_points",)


def test_oracle_limits():
    with pytest.raises(EmptyTrajectory):
        brute_force_rqa([])
    with pytest.raises(TooLarge):
        brute_force_rqa(np.zeros(2001))


def test_oracle_agrees_on_a_noisy_sine():
    rng = np.random.default_rng(0)
    x = np.sin(np.arange(120) / 4) + rng.normal(0, 0.1, 120)
    traj = np.column_stack([x[:-3], x[3:]])
    cfg = RqaConfig(l_min=3, v_min=2)
    fast = rqa_metrics(recurrence_matrix(traj, cfg=cfg), cfg)
    slow = brute_force_rqa(traj, cfg=cfg)
    assert (fast.lmax, fast.vmax) == (slow.lmax, slow.vmax)
    for name, value in fast.values().items():
        assert value == pytest.approx(getattr(slow, name), rel=1e-12, abs=1e-12), name


# --- keypoint sessions ---

def test_keypoint_session_shape_and_truth(landmarks):
    series, poses = gen_keypoint_session("Moderate", 90, seed=2)
    assert series.data.shape == (90, 70, 3)
    assert len(poses) == 90
    ids = list(landmarks.template_ids)
    template = Template(landmark_ids=tuple(ids), coords=base_face()[ids])
    for i in (0, 45, 89):
        fitted, _ = procrustes_fit(series.xy[i, ids], template)
        assert fitted.tx == pytest.approx(poses[i].tx, abs=1.5)
        assert fitted.theta == pytest.approx(poses[i].theta, abs=0.02)


def test_keypoint_session_dropouts():
    series, _ = gen_keypoint_session("Low", 600, seed=1, dropout_rate_hz=2.0)
    assert (series.confidence == 0.1).any()
    clean, _ = gen_keypoint_session("Low", 600, seed=1, dropout_rate_hz=0.0)
    assert clean.confidence.min() >= 0.85


def test_keypoint_session_unknown_condition():
    with pytest.raises(InvalidParams):
        gen_keypoint_session("Extreme", 10)


# --- event logs ---

def test_event_log_is_sorted_and_deterministic():
    events = gen_event_log("Low", 120, seed=3)
    assert [e.t for e in events] == sorted(e.t for e in events)
    assert events == gen_event_log("Low", 120, seed=3)
    assert all(0 <= e.t < 120 for e in events)


def test_higher_load_means_more_signals():
    def signals(condition):
        return sum(e.kind == "signal" for e in gen_event_log(condition, 1800, seed=0))

    assert signals("High") > signals("Low")


def test_event_log_invalid_params():
    with pytest.raises(InvalidParams):
        gen_event_log("Low", 0)
    with pytest.raises(InvalidParams):
        gen_event_log("None", 10)


# --- input trees ---

def test_synthetic_tree(tmp_path):
    labels = write_synthetic_tree(str(tmp_path), n_participants=1, duration_s=2, seed=1)
    assert len(labels) == 6
    found = discover_recordings(str(tmp_path / "keypoints"))
    assert [r.key for r in found] == [(p, s, c) for p, s, c in labels[["participant", "session", "condition"]].itertuples(index=False)]
    series = load_keypoints(found[0].path)
    assert series.length == 120
    events = read_event_log(str(tmp_path / labels.loc[0, "events"]))
    assert all(e.t < 2 for e in events)
    meta = json.loads((tmp_path / "synth.json").read_text())
    assert meta["seed"] == 1
    assert os.path.exists(tmp_path / "labels.csv")
    assert math.isclose(meta["duration_s"], 2)
