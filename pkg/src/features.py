"""Facial channels, kinematic derivatives, windowing and the nine window statistics."""

import logging
from dataclasses import dataclass
import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from src.align import HeadChannels
from src.errors import SeriesTooShort
from src.models import KeypointSeries, SummaryStats
from src.schemas import LandmarkMap, WindowSpec

logger = logging.getLogger(__name__)

FACIAL_CHANNELS = ("blink", "mouth", "pupil_x", "pupil_y", "pupil_mag")
HEAD_CHANNELS = ("tx", "ty", "t_mag", "rotation", "sx", "sy", "head_motion_mag")
CHANNELS = FACIAL_CHANNELS + HEAD_CHANNELS
LEVELS = ("value", "velocity", "acceleration")
FLAG_ZERO_VARIANCE = "zero_variance"


@dataclass
class Window:
    index: int
    start: int
    values: np.ndarray


def _mean_point(series: KeypointSeries, ids) -> np.ndarray:
    """(frames, 2) mean of the given landmarks; missing if any of them is missing."""
    return series.xy[:, list(ids), :].mean(axis=1)


def _distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.hypot(a[:, 0] - b[:, 0], a[:, 1] - b[:, 1])


def blink_aperture(aligned: KeypointSeries, landmarks: LandmarkMap | None = None) -> np.ndarray:
    """Mean over both eyes of the upper-to-lower eyelid distance."""
    lm = landmarks or LandmarkMap()
    left = _distance(_mean_point(aligned, lm.left_upper_lid), _mean_point(aligned, lm.left_lower_lid))
    right = _distance(_mean_point(aligned, lm.right_upper_lid), _mean_point(aligned, lm.right_lower_lid))
    return (left + right) / 2


def mouth_aperture(aligned: KeypointSeries, landmarks: LandmarkMap | None = None) -> np.ndarray:
    lm = landmarks or LandmarkMap()
    return _distance(aligned.xy[:, lm.mouth_upper, :], aligned.xy[:, lm.mouth_lower, :])


def pupil_displacement(aligned: KeypointSeries, landmarks: LandmarkMap | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pupil offset from each eye-contour centroid, averaged over both eyes.

    mag is the mean of the per-eye offset norms, not the norm of the mean offset.
    """
    lm = landmarks or LandmarkMap()
    left = aligned.xy[:, lm.left_pupil, :] - _mean_point(aligned, lm.left_eye)
    right = aligned.xy[:, lm.right_pupil, :] - _mean_point(aligned, lm.right_eye)
    mean = (left + right) / 2
    mag = (np.hypot(left[:, 0], left[:, 1]) + np.hypot(right[:, 0], right[:, 1])) / 2
    return mean[:, 0], mean[:, 1], mag


def channel_set(aligned: KeypointSeries, head: HeadChannels, landmarks: LandmarkMap | None = None) -> dict[str, np.ndarray]:
    """All twelve base channels in canonical order."""
    px, py, pmag = pupil_displacement(aligned, landmarks)
    channels = {
        "blink": blink_aperture(aligned, landmarks),
        "mouth": mouth_aperture(aligned, landmarks),
        "pupil_x": px,
        "pupil_y": py,
        "pupil_mag": pmag,
    }
    channels.update(head.as_dict())
    lengths = {len(v) for v in channels.values()}
    if len(lengths) != 1:
        raise ValueError(f"Channel lengths differ: {sorted(lengths)}")
    return {name: channels[name] for name in CHANNELS}


def derivatives(series: np.ndarray, fps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value, forward-difference velocity and second-difference acceleration, all the same length.

    The trailing samples a difference cannot reach repeat the last computed value.
    """
    x = np.asarray(series, dtype=float)
    n = len(x)
    velocity = np.zeros(n)
    acceleration = np.zeros(n)
    if n >= 2:
        velocity[:-1] = np.diff(x) * fps
        velocity[-1] = velocity[-2]
    if n >= 3:
        acceleration[:-2] = np.diff(x, n=2) * fps ** 2
        acceleration[-2:] = acceleration[-3]
    return x, velocity, acceleration


def window_starts(n: int, spec: WindowSpec) -> np.ndarray:
    if n < spec.length:
        raise SeriesTooShort(f"Series of {n} samples is shorter than one {spec.length}-sample window")
    return np.arange(0, n - spec.length + 1, spec.hop)


def window(series: np.ndarray, spec: WindowSpec) -> list[Window]:
    """Fixed-length windows at the window hop; windows with any missing value are dropped.

    Window indices count every position, so dropped windows leave gaps in the numbering.
    """
    x = np.asarray(series, dtype=float)
    starts = window_starts(len(x), spec)
    views = sliding_window_view(x, spec.length)[starts]
    return [
        Window(index=k, start=int(s), values=views[k].copy())
        for k, s in enumerate(starts)
        if np.all(np.isfinite(views[k]))
    ]


def summarize(values: np.ndarray) -> SummaryStats:
    x = np.asarray(values, dtype=float)
    if len(x) == 0 or not np.all(np.isfinite(x)):
        raise ValueError("summarize needs a non-empty window without missing values")
    p25, median, p75 = np.percentile(x, [25, 50, 75], method="linear")
    flags: tuple[str, ...] = ()
    a, b = x[:-1], x[1:]
    if len(x) < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        ac1 = 0.0
        flags = (FLAG_ZERO_VARIANCE,)
    else:
        ac1 = float(np.clip(np.corrcoef(a, b)[0, 1], -1.0, 1.0))
    return SummaryStats(
        rms=float(np.sqrt(np.mean(x ** 2))),
        mean=float(np.mean(x)),
        sd=float(np.std(x)),
        median=float(median),
        min=float(np.min(x)),
        max=float(np.max(x)),
        p25=float(p25),
        p75=float(p75),
        ac1=ac1,
        flags=flags,
    )


def feature_columns(channels=CHANNELS) -> list[str]:
    return [f"{ch}__{level}__{stat}" for ch in channels for level in LEVELS for stat in SummaryStats.STAT_NAMES]


def valid_window_mask(columns: list[np.ndarray], spec: WindowSpec) -> tuple[np.ndarray, np.ndarray]:
    """Window starts and a mask of those where every column is fully finite."""
    n = len(columns[0])
    starts = window_starts(n, spec)
    ok = np.ones(len(starts), dtype=bool)
    for col in columns:
        finite = np.isfinite(col).astype(np.int64)
        csum = np.concatenate(([0], np.cumsum(finite)))
        ok &= (csum[starts + spec.length] - csum[starts]) == spec.length
    return starts, ok


def window_features(channels: dict[str, np.ndarray], fps: float, spec: WindowSpec) -> pd.DataFrame:
    """One row per window that is complete in every channel and derivative level.

    Columns: window_index, start_s, then `<channel>__<level>__<stat>` in canonical order.
    """
    levels = {}
    for name, series in channels.items():
        for level, values in zip(LEVELS, derivatives(series, fps)):
            levels[(name, level)] = values
    starts, ok = valid_window_mask(list(levels.values()), spec)
    n_dropped = int((~ok).sum())
    if n_dropped:
        logger.info("Dropped %d of %d windows with missing samples", n_dropped, len(starts))

    rows = []
    n_flat = 0
    for k in np.flatnonzero(ok):
        s = starts[k]
        row = {"window_index": int(k), "start_s": s / fps}
        for (name, level), values in levels.items():
            stats = summarize(values[s:s + spec.length])
            if stats.flags:
                n_flat += 1
                logger.debug("Window %d %s/%s: %s", k, name, level, ",".join(stats.flags))
            for stat, v in stats.as_dict().items():
                row[f"{name}__{level}__{stat}"] = v
        rows.append(row)
    if n_flat:
        logger.warning("%d window series had zero variance; ac1 reported as 0", n_flat)
    columns = ["window_index", "start_s"] + feature_columns(list(channels))
    return pd.DataFrame(rows, columns=columns)
