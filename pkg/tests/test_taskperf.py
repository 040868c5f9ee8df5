"""Unit tests for event-log parsing, response matching and windowed task performance."""

import math
import pytest

from src.errors import MalformedRow, UnknownSubtask
from src.models import Event
from src.schemas import WindowSpec
from src.synth import gen_event_log
from src.taskperf import (
    PERF_COLUMNS,
    comms_accuracy,
    match_responses,
    parse_event_log,
    perf_frame,
    reaction_times,
    read_event_log,
    resman_accuracy,
    sysmon_accuracy,
    tracking_accuracy,
    windowed_perf,
    write_event_log,
)

WHOLE = (0.0, 1e9)


def ev(t: float, subtask: str, kind: str, **payload) -> Event:
    return Event(t=t, subtask=subtask, kind=kind, payload={k: str(v) for k, v in payload.items()})


# --- parsing ---

def test_parse_sorts_by_time():
    text = "t,subtask,kind,payload\n5.0,sysmon,signal,channel=F1\n1.5,tracking,sample,in_target=1\n"
    events = parse_event_log(text)
    assert [e.t for e in events] == [1.5, 5.0]
    assert events[0].payload == {"in_target": "1"}
    assert events[1].payload["channel"] == "F1"


def test_parse_empty_body():
    assert parse_event_log("t,subtask,kind,payload\n") == []


def test_parse_empty_payload():
    events = parse_event_log("t,subtask,kind,payload\n2,comms,response,\n")
    assert events[0].payload == {}


def test_parse_unknown_subtask_names_the_row():
    with pytest.raises(UnknownSubtask, match="Row 3"):
        parse_event_log("t,subtask,kind,payload\n1,tracking,sample,\n2,radar,sample,\n")


def test_parse_invalid_kind():
    with pytest.raises(MalformedRow, match="not valid for sysmon"):
        parse_event_log("t,subtask,kind,payload\n1,sysmon,prompt,\n")


@pytest.mark.parametrize("t", ["abc", "-1", "inf"])
def test_parse_bad_time(t):
    with pytest.raises(MalformedRow, match="Row 2"):
        parse_event_log(f"t,subtask,kind,payload\n{t},tracking,sample,\n")


def test_parse_bad_header():
    with pytest.raises(MalformedRow, match="header"):
        parse_event_log("time,subtask,kind,payload\n1,tracking,sample,\n")
    with pytest.raises(MalformedRow, match="header"):
        parse_event_log("")


def test_parse_bad_payload_entry():
    with pytest.raises(MalformedRow, match="key=value"):
        parse_event_log("t,subtask,kind,payload\n1,tracking,sample,in_target\n")


def test_event_log_file_round_trip(tmp_path):
    events = gen_event_log("High", duration_s=30, seed=2)
    path = tmp_path / "events.csv"
    write_event_log(events, str(path))
    assert read_event_log(str(path)) == events


# --- continuous subtasks ---

@pytest.mark.parametrize("flags,expected", [([1, 1, 1, 1], 1.0), ([0, 0, 0, 0], 0.0), ([1, 1, 0, 1], 0.75)])
def test_tracking_accuracy(flags, expected):
    events = [ev(i, "tracking", "sample", in_target=f) for i, f in enumerate(flags)]
    assert tracking_accuracy(events, WHOLE) == expected


def test_tracking_without_samples_is_absent():
    assert tracking_accuracy([ev(1, "sysmon", "signal")], WHOLE) is None


def test_resman_needs_both_tanks():
    half = [ev(0, "resman", "sample", a_in=1, b_in=1), ev(1, "resman", "sample", a_in=1, b_in=0)]
    assert resman_accuracy(half, WHOLE) == 0.5
    a_only = [ev(i, "resman", "sample", a_in=1, b_in=0) for i in range(3)]
    assert resman_accuracy(a_only, WHOLE) == 0.0


# --- discrete subtasks ---

def test_sysmon_all_hits():
    events = []
    for k in range(5):
        events += [ev(20 * k, "sysmon", "signal"), ev(20 * k + 2, "sysmon", "response", correct=1)]
    assert sysmon_accuracy(events, WHOLE) == 1.0


def test_sysmon_false_alarms_can_go_negative():
    events = [ev(20 * k, "sysmon", "signal") for k in range(5)]
    events += [ev(15, "sysmon", "response", correct=0), ev(55, "sysmon", "response", correct=0)]
    assert sysmon_accuracy(sorted(events, key=lambda e: e.t), WHOLE) == pytest.approx(-0.4)


def test_sysmon_response_after_deadline_is_a_false_alarm():
    events = [ev(0, "sysmon", "signal"), ev(10.5, "sysmon", "response", correct=1)]
    assert sysmon_accuracy(events, WHOLE) == -1.0


def test_sysmon_channel_must_match():
    events = [ev(0, "sysmon", "signal", channel="F1"), ev(1, "sysmon", "response", channel="F2", correct=1)]
    assert sysmon_accuracy(events, WHOLE) == -1.0


def test_sysmon_false_alarm_flood_stays_bounded():
    events = [ev(1, "sysmon", "signal", channel="F1")]
    events += [ev(t, "sysmon", "response", channel="F2", correct=0) for t in (5, 20, 40)]
    assert sysmon_accuracy(events, (0, 60)) == -1.0


@pytest.mark.parametrize("own_answered,other_answered", [(0, 3), (2, 0), (1, 2), (0, 0)])
def test_comms_accuracy_bounded(own_answered, other_answered):
    events = []
    for k in range(2):
        events.append(ev(40 * k, "comms", "prompt", own=1))
        if k < own_answered:
            events.append(ev(40 * k + 2, "comms", "response"))
    for k in range(3):
        events.append(ev(40 * k + 20, "comms", "prompt", own=0))
        if k < other_answered:
            events.append(ev(40 * k + 22, "comms", "response"))
    acc = comms_accuracy(sorted(events, key=lambda e: e.t), WHOLE)
    assert -1.0 <= acc <= 1.0


def test_comms_own_answered_other_ignored():
    events = []
    for k in range(4):
        events += [ev(40 * k, "comms", "prompt", own=1), ev(40 * k + 3, "comms", "response")]
        events.append(ev(40 * k + 20, "comms", "prompt", own=0))
    assert comms_accuracy(sorted(events, key=lambda e: e.t), WHOLE) == 1.0


def test_comms_response_just_after_deadline_is_not_counted():
    events = [ev(0, "comms", "prompt", own=1), ev(15.01, "comms", "response")]
    assert comms_accuracy(events, WHOLE) == 0.0


def test_comms_answered_other_prompt_is_subtracted():
    events = [
        ev(0, "comms", "prompt", own=1), ev(2, "comms", "response"),
        ev(30, "comms", "prompt", own=0), ev(31, "comms", "response"),
    ]
    assert comms_accuracy(events, WHOLE) == 0.0


def test_comms_without_own_prompts_is_absent():
    assert comms_accuracy([ev(0, "comms", "prompt", own=0)], WHOLE) is None


def test_reaction_times():
    events = [
        ev(0, "sysmon", "signal"), ev(1.2, "sysmon", "response", correct=1),
        ev(30, "sysmon", "signal"), ev(45, "sysmon", "response", correct=1),
        ev(60, "comms", "prompt", own=1), ev(62, "comms", "response"),
        ev(90, "comms", "prompt", own=1), ev(94, "comms", "response"),
    ]
    sys_rt, comms_rt = reaction_times(events, WHOLE)
    assert sys_rt == pytest.approx(1.2)
    assert comms_rt == pytest.approx(3.0)


def test_reaction_times_absent_without_pairs():
    assert reaction_times([ev(0, "sysmon", "signal")], WHOLE) == (None, None)


def test_each_response_matches_one_onset():
    onsets = [ev(0, "comms", "prompt"), ev(1, "comms", "prompt")]
    responses = [ev(2, "comms", "response")]
    matches, leftover = match_responses(onsets, responses, 15.0)
    assert matches[0].response is responses[0]
    assert matches[1].response is None
    assert leftover == []
    assert matches[0].latency == 2.0


# --- windows ---

@pytest.fixture
def spec10():
    return WindowSpec(length_s=10, overlap=0, fps=1)


def test_windowed_tracking(spec10):
    events = [ev(float(t), "tracking", "sample", in_target=int(t % 2 == 0)) for t in range(30)]
    windows = windowed_perf(events, spec10, duration_s=29)
    assert [(w.start, w.end) for w in windows] == [(0, 10), (10, 20), (20, 30)]
    assert all(w.tracking_acc == 0.5 for w in windows)
    assert all(w.sysmon_acc is None for w in windows)


def test_boundary_event_goes_to_later_window(spec10):
    events = [ev(0.0, "tracking", "sample", in_target=0), ev(10.0, "tracking", "sample", in_target=1)]
    windows = windowed_perf(events, spec10, duration_s=19)
    assert windows[0].tracking_acc == 0.0
    assert windows[1].tracking_acc == 1.0


def test_disjoint_windows_partition_the_session(spec10):
    events = gen_event_log("Moderate", duration_s=60, seed=4)
    windows = windowed_perf(events, spec10, duration_s=59.99)
    samples = [e for e in events if e.subtask == "tracking"]
    per_window = []
    for w in windows:
        n = sum(w.start <= e.t < w.end for e in samples)
        per_window.append(round(w.tracking_acc * n) if n else 0)
    assert sum(per_window) == sum(e.flag("in_target") for e in samples if e.t < windows[-1].end)


def test_windowed_perf_shorter_than_a_window(spec10):
    assert windowed_perf([ev(1, "tracking", "sample")], spec10, duration_s=5) == []


def test_perf_frame_uses_nan_for_absent(spec10):
    windows = windowed_perf([ev(1, "tracking", "sample", in_target=1)], spec10, duration_s=12)
    frame = perf_frame(windows)
    assert list(frame.columns) == ["window_index"] + PERF_COLUMNS
    assert frame.loc[0, "perf__tracking__acc"] == 1.0
    assert math.isnan(frame.loc[0, "perf__sysmon__rt"])
