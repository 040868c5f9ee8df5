"""Landmark retention, confidence masking, gap interpolation, zero-phase filtering and screen normalisation.

Stages run in a fixed order: retain -> mask -> interpolate -> filter -> normalise.
"""

import logging
import numpy as np
from scipy.signal import butter, filtfilt

from src.errors import SegmentTooShort
from src.models import KeypointSeries
from src.schemas import N_LANDMARKS, PreprocessConfig

logger = logging.getLogger(__name__)

FLAG_UNFILTERED = "unfiltered_segment"
FLAG_OFFSCREEN = "off_screen"


def _mark_missing(data: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = data.copy()
    out[mask, 0] = np.nan
    out[mask, 1] = np.nan
    return out


def retain_landmarks(series: KeypointSeries, ids: list[int]) -> KeypointSeries:
    """Mark every landmark outside `ids` missing. Idempotent."""
    drop = np.ones(N_LANDMARKS, dtype=bool)
    drop[list(ids)] = False
    mask = np.zeros((series.length, N_LANDMARKS), dtype=bool)
    mask[:, drop] = True
    return series.with_data(_mark_missing(series.data, mask))


def mask_low_confidence(series: KeypointSeries, cfg: PreprocessConfig) -> KeypointSeries:
    """Samples with confidence strictly below the threshold become missing."""
    mask = series.confidence < cfg.conf_threshold
    n = int(np.count_nonzero(mask & ~series.missing))
    if n:
        logger.debug("Masked %d low-confidence samples", n)
    return series.with_data(_mark_missing(series.data, mask))


def missing_runs(missing: np.ndarray) -> list[tuple[int, int]]:
    """[start, end) index pairs of consecutive True values."""
    padded = np.concatenate(([False], missing, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist()))


def valid_segments(values: np.ndarray) -> list[tuple[int, int]]:
    """[start, end) index pairs of contiguous finite samples."""
    return missing_runs(np.isfinite(values))


def interpolate_1d(values: np.ndarray, max_gap: int) -> np.ndarray:
    """Linearly fill interior NaN runs of length <= max_gap; edge runs stay NaN."""
    out = np.array(values, dtype=float)
    n = len(out)
    for start, end in missing_runs(np.isnan(out)):
        if start == 0 or end == n or end - start > max_gap:
            continue
        left, right = out[start - 1], out[end]
        steps = np.arange(1, end - start + 1) / (end - start + 1)
        out[start:end] = left + (right - left) * steps
    return out


def interpolate_gaps(series: KeypointSeries, cfg: PreprocessConfig) -> KeypointSeries:
    """Fill short gaps per landmark. Valid samples are never altered."""
    data = series.data.copy()
    for lid in range(N_LANDMARKS):
        for axis in (0, 1):
            col = data[:, lid, axis]
            if np.isnan(col).any():
                data[:, lid, axis] = interpolate_1d(col, cfg.max_gap)
    return series.with_data(data)


def butter_lowpass(cfg: PreprocessConfig, fps: float) -> tuple[np.ndarray, np.ndarray]:
    """Digital Butterworth coefficients via bilinear transform with pre-warping."""
    return butter(cfg.filter_order, cfg.cutoff, btype="low", fs=fps)


def lowpass_zero_phase(
    signal: np.ndarray,
    fps: float,
    cfg: PreprocessConfig,
    flags: list[str] | None = None,
    strict: bool = False,
) -> np.ndarray:
    """Forward-backward Butterworth filter applied to each contiguous finite segment.

    Segments shorter than the configured minimum are passed through unchanged, logged and,
    when `flags` is given, recorded there; with strict=True they raise SegmentTooShort.
    Missing samples stay missing.
    """
    x = np.asarray(signal, dtype=float)
    out = x.copy()
    b, a = butter_lowpass(cfg, fps)
    padlen = cfg.effective_padlen
    need = max(cfg.effective_min_segment, padlen + 1)
    for start, end in valid_segments(x):
        if end - start < need:
            msg = f"Segment [{start}, {end}) has {end - start} samples, need {need}"
            if strict:
                raise SegmentTooShort(msg)
            logger.warning("%s; passed through unfiltered", msg)
            if flags is not None:
                flags.append(f"{FLAG_UNFILTERED}:{start}:{end}")
            continue
        out[start:end] = filtfilt(b, a, x[start:end], padtype="odd", padlen=padlen)
    return out


def filter_series(series: KeypointSeries, cfg: PreprocessConfig) -> KeypointSeries:
    data = series.data.copy()
    flags: list[str] = []
    for lid in range(N_LANDMARKS):
        for axis in (0, 1):
            col = data[:, lid, axis]
            if np.isfinite(col).any():
                seg_flags: list[str] = []
                data[:, lid, axis] = lowpass_zero_phase(col, series.fps, cfg, seg_flags)
                flags.extend(f"{f}:landmark={lid}" for f in seg_flags)
    return series.with_data(data, *flags)


def normalize_screen(series: KeypointSeries, cfg: PreprocessConfig) -> KeypointSeries:
    """x / screen_w, y / screen_h. Off-screen values are kept and flagged."""
    data = series.data.copy()
    data[:, :, 0] = data[:, :, 0] / cfg.screen_w
    data[:, :, 1] = data[:, :, 1] / cfg.screen_h
    xy = data[:, :, :2]
    with np.errstate(invalid="ignore"):
        off = np.isfinite(xy) & ((xy < 0) | (xy > 1))
    new_flags = []
    if off.any():
        n = int(np.count_nonzero(off.any(axis=2)))
        new_flags.append(f"{FLAG_OFFSCREEN}:{n}")
        logger.debug("%d samples fall outside the screen", n)
    return series.with_data(data, *new_flags)


def preprocess_series(series: KeypointSeries, cfg: PreprocessConfig, retain_ids: list[int] | None = None) -> KeypointSeries:
    if retain_ids is not None:
        series = retain_landmarks(series, retain_ids)
    series = mask_low_confidence(series, cfg)
    series = interpolate_gaps(series, cfg)
    series = filter_series(series, cfg)
    return normalize_screen(series, cfg)
