"""Face-keypoint parsing and fixed-rate series assembly. No filtering, no alignment."""

import json
import logging
import math
import os
import re
import numpy as np
import pandas as pd

from src.errors import DuplicateFrame, MalformedRecord, NonMonotonicIndex
from src.models import FrameKeypoints, KeypointSeries, Recording
from src.schemas import CONDITIONS, N_LANDMARKS, SESSIONS

logger = logging.getLogger(__name__)

FACE_KEY = "face_keypoints_2d"
N_VALUES = N_LANDMARKS * 3
CSV_COLUMNS = ["frame", "id", "x", "y", "c"]
KEYPOINT_EXTENSIONS = (".jsonl", ".json", ".csv")

_RECORDING_RE = re.compile(r"^(?P<session>[A-Za-z]+)_(?P<condition>[A-Za-z]+)$")


def _to_float(value, frame_index) -> float:
    if value is None:
        return math.nan
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedRecord(f"Frame {frame_index}: non-numeric keypoint value {value!r}", frame=frame_index)
    return float(value)


def parse_frame(record: str | dict | list, frame_index: int | None = None) -> FrameKeypoints:
    """Parse one frame of face-model output.

    Accepts the canonical record {"frame": i, "face_keypoints_2d": [210 numbers]}, a bare list of
    the 210 numbers (frame_index required) or a raw pose-estimator document
    {"people": [{"face_keypoints_2d": [...]}, ...]}, in which case the first person is used and an empty people
    list yields a fully missing frame. `null` coordinates are read as missing.
    """
    if isinstance(record, (str, bytes)):
        try:
            record = json.loads(record)
        except json.JSONDecodeError as e:
            raise MalformedRecord(f"Frame {frame_index}: not valid JSON ({e.msg})", frame=frame_index) from e
    if isinstance(record, list):
        record = {FACE_KEY: record}
    if not isinstance(record, dict):
        raise MalformedRecord(f"Frame {frame_index}: expected an object, got {type(record).__name__}", frame=frame_index)

    if "frame" in record:
        idx = record["frame"]
        if isinstance(idx, bool) or not isinstance(idx, int) or idx < 0:
            raise MalformedRecord(f"Invalid frame index: {idx!r}")
        frame_index = idx
    if frame_index is None:
        raise MalformedRecord("Record has no frame index")

    if "people" in record and FACE_KEY not in record:
        people = record["people"]
        if not isinstance(people, list):
            raise MalformedRecord(f"Frame {frame_index}: 'people' must be a list", frame=frame_index)
        if not people:
            points = np.full((N_LANDMARKS, 3), math.nan)
            points[:, 2] = 0.0
            return FrameKeypoints(frame_index=frame_index, points=points)
        record = people[0]

    values = record.get(FACE_KEY)
    if not isinstance(values, list):
        raise MalformedRecord(f"Frame {frame_index}: missing '{FACE_KEY}' list", frame=frame_index)
    if len(values) != N_VALUES:
        raise MalformedRecord(f"Frame {frame_index}: expected {N_VALUES} numbers, got {len(values)}", frame=frame_index)

    points = np.array([_to_float(v, frame_index) for v in values]).reshape(N_LANDMARKS, 3)
    conf = points[:, 2]
    if np.any(np.isnan(conf)) or np.any((conf < 0) | (conf > 1)):
        raise MalformedRecord(f"Frame {frame_index}: confidence outside [0, 1]", frame=frame_index)
    if np.any(np.isinf(points[:, :2])):
        raise MalformedRecord(f"Frame {frame_index}: infinite coordinate", frame=frame_index)
    return FrameKeypoints(frame_index=frame_index, points=points)


def _canonical(v: float) -> int | float | None:
    if math.isnan(v):
        return None
    return int(v) if float(v).is_integer() else float(v)


def serialize_frame(frame: FrameKeypoints) -> str:
    """Canonical compact JSON for one frame.

    Missing coordinates become null and integral values are written as integer literals,
    so serialize_frame(parse_frame(text)) == text for any canonical record.
    """
    values = [_canonical(v) for v in frame.points.reshape(-1)]
    return json.dumps({"frame": frame.frame_index, FACE_KEY: values}, separators=(",", ":"))


def assemble_series(frames: list[FrameKeypoints], fps: float = 60.0) -> KeypointSeries:
    """Stack frames into a fixed-rate series; skipped indices become missing samples.

    Length is max(frame_index) + 1. Frames before the first index are missing too.
    """
    if not frames:
        return KeypointSeries(fps=fps, data=np.zeros((0, N_LANDMARKS, 3)))
    prev = None
    for f in frames:
        if prev is not None:
            if f.frame_index == prev:
                raise DuplicateFrame(f"Frame {f.frame_index} appears twice", frame=f.frame_index)
            if f.frame_index < prev:
                raise NonMonotonicIndex(f"Frame {f.frame_index} follows frame {prev}", frame=f.frame_index)
        prev = f.frame_index

    length = frames[-1].frame_index + 1
    data = np.full((length, N_LANDMARKS, 3), math.nan)
    data[:, :, 2] = 0.0
    for f in frames:
        data[f.frame_index] = f.points
    n_missing = length - len(frames)
    if n_missing:
        logger.debug("Assembled %d frames with %d missing", length, n_missing)
    return KeypointSeries(fps=fps, data=data)


def read_keypoint_json(path: str) -> list[FrameKeypoints]:
    """One JSON record per line, or a single JSON array of records.

    A record without a "frame" key (including a bare value list) takes its position as the index.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("["):
        try:
            records = json.loads(stripped)
        except json.JSONDecodeError as e:
            # several bare value lists, one per line
            if e.msg != "Extra data":
                raise MalformedRecord(f"{path}: not valid JSON ({e.msg})") from e
        else:
            if all(isinstance(r, (dict, list)) for r in records):
                return [parse_frame(r, frame_index=i) for i, r in enumerate(records)]
    frames = []
    for i, line in enumerate(l for l in text.splitlines() if l.strip()):
        frames.append(parse_frame(line, frame_index=i))
    return frames


def read_keypoint_csv(path: str) -> list[FrameKeypoints]:
    """Long layout frame,id,x,y,c with one row per landmark; absent landmarks are missing."""
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        return []
    if list(df.columns) != CSV_COLUMNS:
        raise MalformedRecord(f"{path}: expected header {','.join(CSV_COLUMNS)}, got {','.join(map(str, df.columns))}")
    if df.empty:
        return []
    for col in CSV_COLUMNS:
        if not pd.api.types.is_numeric_dtype(df[col]):
            raise MalformedRecord(f"{path}: non-numeric values in column '{col}'")
    if df[["frame", "id", "c"]].isna().any().any():
        raise MalformedRecord(f"{path}: frame, id and c must be present on every row")
    if not np.all(df["frame"] == df["frame"].round()) or not np.all(df["id"] == df["id"].round()):
        raise MalformedRecord(f"{path}: frame and id must be integers")
    df = df.astype({"frame": int, "id": int})
    bad_ids = df.loc[(df["id"] < 0) | (df["id"] >= N_LANDMARKS), "id"]
    if not bad_ids.empty:
        raise MalformedRecord(f"{path}: landmark id {int(bad_ids.iloc[0])} outside 0..{N_LANDMARKS - 1}")
    if ((df["c"] < 0) | (df["c"] > 1)).any():
        raise MalformedRecord(f"{path}: confidence outside [0, 1]")

    # Frame order is checked on first appearance; rows within a frame may come in any order.
    order = df["frame"].drop_duplicates().to_numpy()
    if np.any(np.diff(order) <= 0):
        bad = int(np.argmax(np.diff(order) <= 0)) + 1
        raise NonMonotonicIndex(f"{path}: frame {order[bad]} follows frame {order[bad - 1]}")
    dup = df.duplicated(subset=["frame", "id"])
    if dup.any():
        row = df[dup].iloc[0]
        raise DuplicateFrame(f"{path}: landmark {row['id']} listed twice in frame {row['frame']}")

    frames = []
    for frame_index, group in df.groupby("frame", sort=True):
        points = np.full((N_LANDMARKS, 3), math.nan)
        points[:, 2] = 0.0
        points[group["id"].to_numpy()] = group[["x", "y", "c"]].to_numpy(dtype=float)
        frames.append(FrameKeypoints(frame_index=int(frame_index), points=points))
    return frames


def write_series_csv(series: KeypointSeries, path: str) -> None:
    """Write the long frame,id,x,y,c layout; fully missing landmarks are omitted."""
    n = series.length
    frame = np.repeat(np.arange(n), N_LANDMARKS)
    ids = np.tile(np.arange(N_LANDMARKS), n)
    flat = series.data.reshape(-1, 3)
    df = pd.DataFrame({"frame": frame, "id": ids, "x": flat[:, 0], "y": flat[:, 1], "c": flat[:, 2]})
    df = df[~(df["x"].isna() & df["y"].isna() & (df["c"] == 0))]
    df.to_csv(path, index=False, float_format="%.17g")


def load_keypoints(path: str, fps: float = 60.0) -> KeypointSeries:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".csv":
        frames = read_keypoint_csv(path)
    elif ext in (".json", ".jsonl"):
        frames = read_keypoint_json(path)
    else:
        raise MalformedRecord(f"Unsupported keypoint file type: {path}")
    series = assemble_series(frames, fps=fps)
    logger.info("Loaded %s: %d frames (%d present)", path, series.length, len(frames))
    return series


def parse_recording_path(root: str, path: str) -> Recording | None:
    """Recognise <participant>/<session>_<condition>.<ext>; anything else returns None."""
    rel = os.path.relpath(path, root)
    parts = rel.split(os.sep)
    if len(parts) != 2:
        return None
    stem = os.path.splitext(parts[1])[0]
    m = _RECORDING_RE.match(stem)
    if not m or m["session"] not in SESSIONS or m["condition"] not in CONDITIONS:
        return None
    return Recording(participant=parts[0], session=m["session"], condition=m["condition"], path=path)


def discover_recordings(root: str, extensions: tuple[str, ...] = KEYPOINT_EXTENSIONS) -> list[Recording]:
    """Every recording under root, sorted by (participant, session, condition)."""
    found = []
    for participant in sorted(os.listdir(root)):
        pdir = os.path.join(root, participant)
        if not os.path.isdir(pdir):
            continue
        for name in sorted(os.listdir(pdir)):
            if os.path.splitext(name)[1].lower() not in extensions:
                continue
            rec = parse_recording_path(root, os.path.join(pdir, name))
            if rec is None:
                logger.warning("Skipping unrecognised file name: %s", os.path.join(pdir, name))
                continue
            found.append(rec)
    return sorted(found, key=lambda r: (r.participant, SESSIONS.index(r.session), CONDITIONS.index(r.condition)))
