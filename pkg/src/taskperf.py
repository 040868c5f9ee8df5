"""Task-battery event logs: parsing, signal/response matching and windowed accuracy and reaction time.

Canonical log layout, one event per row:

    t,subtask,kind,payload
    12.5,sysmon,signal,channel=F1
    14.1,sysmon,response,channel=F1;correct=1

payload is a `;`-separated list of key=value pairs and may be empty.
"""

import io
import logging
import math
from dataclasses import dataclass
import numpy as np
import pandas as pd

from src.errors import MalformedRow, UnknownSubtask
from src.features import window_starts
from src.models import Event, PerfWindow
from src.schemas import WindowSpec

logger = logging.getLogger(__name__)

HEADER = ["t", "subtask", "kind", "payload"]
KINDS = {
    "tracking": ("sample",),
    "resman": ("sample",),
    "sysmon": ("signal", "response"),
    "comms": ("prompt", "response"),
}
SYSMON_DEADLINE_S = 10.0
COMMS_DEADLINE_S = 15.0
PERF_COLUMNS = [
    "perf__tracking__acc",
    "perf__resman__acc",
    "perf__sysmon__acc",
    "perf__comms__acc",
    "perf__sysmon__rt",
    "perf__comms__rt",
]


def _parse_payload(text: str, row_no: int) -> dict[str, str]:
    payload = {}
    if not text:
        return payload
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise MalformedRow(f"Row {row_no}: payload entry {part!r} is not key=value")
        key, value = part.split("=", 1)
        payload[key.strip()] = value.strip()
    return payload


def parse_event_log(text: str) -> list[Event]:
    """Parse a canonical log; events come back sorted by time, ties in file order."""
    try:
        df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise MalformedRow("Row 1: missing header") from None
    except pd.errors.ParserError as e:
        raise MalformedRow(f"Unreadable event log: {e}") from None
    df = df.fillna("")
    if list(df.columns) != HEADER:
        raise MalformedRow(f"Row 1: expected header {','.join(HEADER)}, got {','.join(df.columns)}")
    events = []
    for i, rec in enumerate(df.itertuples(index=False), start=2):
        try:
            t = float(rec.t)
        except ValueError:
            raise MalformedRow(f"Row {i}: time {rec.t!r} is not a number") from None
        if not math.isfinite(t) or t < 0:
            raise MalformedRow(f"Row {i}: time {rec.t!r} must be finite and non-negative")
        subtask = rec.subtask.strip()
        if subtask not in KINDS:
            raise UnknownSubtask(f"Row {i}: unknown subtask {subtask!r}")
        kind = rec.kind.strip()
        if kind not in KINDS[subtask]:
            raise MalformedRow(f"Row {i}: kind {kind!r} is not valid for {subtask}")
        events.append(Event(t=t, subtask=subtask, kind=kind, payload=_parse_payload(rec.payload, i)))
    events.sort(key=lambda e: e.t)
    return events


def read_event_log(path: str) -> list[Event]:
    with open(path, encoding="utf-8") as fh:
        events = parse_event_log(fh.read())
    logger.info("Loaded %s: %d events", path, len(events))
    return events


def write_event_log(events: list[Event], path: str) -> None:
    rows = [
        {"t": repr(float(e.t)), "subtask": e.subtask, "kind": e.kind, "payload": ";".join(f"{k}={v}" for k, v in e.payload.items())}
        for e in events
    ]
    pd.DataFrame(rows, columns=HEADER).to_csv(path, index=False)


# --- matching ---

@dataclass
class Match:
    onset: Event
    response: Event | None

    @property
    def latency(self) -> float | None:
        return None if self.response is None else self.response.t - self.onset.t


def match_responses(onsets: list[Event], responses: list[Event], deadline_s: float, accept=None) -> tuple[list[Match], list[Event]]:
    """Pair each onset, in time order, with the first unconsumed response inside [t, t + deadline].

    `accept(onset, response)` can veto a pairing. Returns the matches (one per onset) and
    the responses left unconsumed.
    """
    used = [False] * len(responses)
    matches = []
    for onset in onsets:
        found = None
        for j, r in enumerate(responses):
            if used[j] or r.t < onset.t:
                continue
            if r.t - onset.t > deadline_s:
                break
            if accept is None or accept(onset, r):
                used[j] = True
                found = r
                break
        matches.append(Match(onset=onset, response=found))
    leftover = [r for j, r in enumerate(responses) if not used[j]]
    return matches, leftover


def _sysmon_accept(signal: Event, response: Event) -> bool:
    if not response.flag("correct"):
        return False
    a, b = signal.payload.get("channel"), response.payload.get("channel")
    return a is None or b is None or a == b


def _select(events: list[Event], subtask: str, kind: str) -> list[Event]:
    return [e for e in events if e.subtask == subtask and e.kind == kind]


@dataclass
class SessionMatches:
    sysmon: list[Match]
    sysmon_false_alarms: list[Event]
    comms: list[Match]

    @classmethod
    def from_events(cls, events: list[Event]) -> "SessionMatches":
        sysmon, leftover = match_responses(
            _select(events, "sysmon", "signal"), _select(events, "sysmon", "response"), SYSMON_DEADLINE_S, _sysmon_accept
        )
        comms, _ = match_responses(_select(events, "comms", "prompt"), _select(events, "comms", "response"), COMMS_DEADLINE_S)
        return cls(sysmon=sysmon, sysmon_false_alarms=leftover, comms=comms)


def _in(t: float, window: tuple[float, float]) -> bool:
    return window[0] <= t < window[1]


# --- metrics ---

def _sample_fraction(events: list[Event], subtask: str, keys: tuple[str, ...], window) -> float | None:
    samples = [e for e in _select(events, subtask, "sample") if _in(e.t, window)]
    if not samples:
        return None
    hits = sum(all(e.flag(k) for k in keys) for e in samples)
    return hits / len(samples)


def tracking_accuracy(events: list[Event], window: tuple[float, float]) -> float | None:
    """Fraction of tracking samples with the cursor in the target; None without samples."""
    return _sample_fraction(events, "tracking", ("in_target",), window)


def resman_accuracy(events: list[Event], window: tuple[float, float]) -> float | None:
    """Fraction of samples with both tanks (A and B) inside tolerance."""
    return _sample_fraction(events, "resman", ("a_in", "b_in"), window)


def _sysmon_accuracy(matches: SessionMatches, window) -> float | None:
    signals = [m for m in matches.sysmon if _in(m.onset.t, window)]
    if not signals:
        return None
    hits = sum(m.response is not None for m in signals)
    false_alarms = sum(_in(r.t, window) for r in matches.sysmon_false_alarms)
    # capped at the signal count so the score stays in [-1, 1]
    return (hits - min(false_alarms, len(signals))) / len(signals)


def sysmon_accuracy(events: list[Event], window: tuple[float, float]) -> float | None:
    """(hits - false alarms) / signals. Signals count by onset, false alarms by response time."""
    return _sysmon_accuracy(SessionMatches.from_events(events), window)


def _comms_accuracy(matches: SessionMatches, window) -> float | None:
    prompts = [m for m in matches.comms if _in(m.onset.t, window)]
    own = [m for m in prompts if m.onset.flag("own")]
    other = [m for m in prompts if not m.onset.flag("own")]
    if not own:
        return None
    acc = sum(m.response is not None for m in own) / len(own)
    if other:
        acc -= sum(m.response is not None for m in other) / len(other)
    return acc


def comms_accuracy(events: list[Event], window: tuple[float, float]) -> float | None:
    """Answered own prompts / own prompts minus answered other prompts / other prompts."""
    return _comms_accuracy(SessionMatches.from_events(events), window)


def _reaction_times(matches: SessionMatches, window) -> tuple[float | None, float | None]:
    def mean_latency(ms: list[Match]) -> float | None:
        lat = [m.latency for m in ms if m.response is not None and _in(m.onset.t, window)]
        return float(np.mean(lat)) if lat else None

    return mean_latency(matches.sysmon), mean_latency([m for m in matches.comms if m.onset.flag("own")])


def reaction_times(events: list[Event], window: tuple[float, float]) -> tuple[float | None, float | None]:
    """Mean onset-to-response latency of matched system-monitoring hits and answered own prompts."""
    return _reaction_times(SessionMatches.from_events(events), window)


def windowed_perf(events: list[Event], spec: WindowSpec, duration_s: float | None = None) -> list[PerfWindow]:
    """Metrics for the same window positions the keypoint features use.

    duration_s defaults to the last event time. Windows are [start, end).
    """
    if duration_s is None:
        duration_s = events[-1].t if events else 0.0
    n_samples = int(math.floor(duration_s * spec.fps + 1e-9)) + 1
    if n_samples < spec.length:
        return []
    matches = SessionMatches.from_events(events)
    out = []
    for k, s in enumerate(window_starts(n_samples, spec)):
        start = s / spec.fps
        win = (start, start + spec.length_s)
        sys_rt, comms_rt = _reaction_times(matches, win)
        out.append(PerfWindow(
            window_index=k,
            start=win[0],
            end=win[1],
            tracking_acc=tracking_accuracy(events, win),
            resman_acc=resman_accuracy(events, win),
            sysmon_acc=_sysmon_accuracy(matches, win),
            comms_acc=_comms_accuracy(matches, win),
            sysmon_rt=sys_rt,
            comms_rt=comms_rt,
        ))
    return out


def perf_frame(windows: list[PerfWindow]) -> pd.DataFrame:
    """window_index plus the perf__* columns; absent values are NaN."""
    rows = [
        {
            "window_index": w.window_index,
            "perf__tracking__acc": w.tracking_acc,
            "perf__resman__acc": w.resman_acc,
            "perf__sysmon__acc": w.sysmon_acc,
            "perf__comms__acc": w.comms_acc,
            "perf__sysmon__rt": w.sysmon_rt,
            "perf__comms__rt": w.comms_rt,
        }
        for w in windows
    ]
    return pd.DataFrame(rows, columns=["window_index"] + PERF_COLUMNS).astype({c: float for c in PERF_COLUMNS})
