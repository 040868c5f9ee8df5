"""Delay embedding, embedding-parameter estimation and (cross-)recurrence quantification.

Recurrence conventions used throughout:

- A cell (i, j) is excluded when |i - j| < theiler. theiler=0 excludes nothing and
  theiler=1 removes only the main diagonal. Excluded cells are never recurrent.
- The radius is radius_frac times the mean distance over the non-excluded cells.
- Diagonal and vertical lines are maximal runs of recurrent cells over the whole
  matrix; runs cut by the border still count.
"""

import logging
import math
from dataclasses import dataclass
import numpy as np
import pandas as pd
from scipy.ndimage import uniform_filter1d
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from sklearn.metrics import mutual_info_score

from src.errors import EmptyTrajectory, SeriesTooShort
from src.models import RQA_COLUMNS, RqaMetrics
from src.schemas import AmiConfig, EmbeddingParams, FnnConfig, RqaConfig, WindowSpec

logger = logging.getLogger(__name__)

FLAG_CONSTANT = "constant_series"
FLAG_NO_RECURRENCE = "no_recurrent_points"


@dataclass
class RecurrencePlot:
    matrix: np.ndarray
    mode: str
    theiler: int
    epsilon: float
    mean_distance: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def valid_mask(self) -> np.ndarray:
        return band_mask(*self.matrix.shape, self.theiler)

    def n_valid(self) -> int:
        return int(band_mask_count(*self.matrix.shape, self.theiler))


def band_mask(n_rows: int, n_cols: int, theiler: int, row_start: int = 0) -> np.ndarray:
    """True where |i - j| >= theiler, rows numbered from row_start."""
    i = np.arange(row_start, row_start + n_rows)[:, None]
    j = np.arange(n_cols)[None, :]
    return np.abs(i - j) >= theiler


def band_mask_count(n_rows: int, n_cols: int, theiler: int) -> int:
    if theiler <= 0:
        return n_rows * n_cols
    excluded = 0
    for k in range(-(theiler - 1), theiler):
        excluded += _diag_len(n_rows, n_cols, k)
    return n_rows * n_cols - excluded


def _diag_len(n_rows: int, n_cols: int, k: int) -> int:
    """Number of cells on diagonal j - i = k."""
    if k >= 0:
        return max(0, min(n_rows, n_cols - k))
    return max(0, min(n_rows + k, n_cols))


# --- preparation ---

def rescale_unit(series: np.ndarray, flags: list[str] | None = None) -> np.ndarray:
    """Map to [0, 1]. A constant series becomes all zeros and is flagged."""
    x = np.asarray(series, dtype=float)
    if len(x) == 0 or not np.all(np.isfinite(x)):
        raise ValueError("rescale_unit needs a non-empty finite series")
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        if flags is not None:
            flags.append(FLAG_CONSTANT)
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def embed(series: np.ndarray, params: EmbeddingParams) -> np.ndarray:
    """Delay vectors (x_i, x_{i+tau}, ..., x_{i+(m-1)tau}), one row per point."""
    x = np.asarray(series, dtype=float)
    span = (params.m - 1) * params.tau
    n_points = len(x) - span
    if n_points < 1:
        raise SeriesTooShort(f"Series of {len(x)} samples cannot be embedded with m={params.m}, tau={params.tau}")
    return np.column_stack([x[k * params.tau:k * params.tau + n_points] for k in range(params.m)])


# --- embedding-parameter estimation ---

def mutual_information(a: np.ndarray, b: np.ndarray, n_bins: int) -> float:
    """Histogram mutual information in bits, equal-width bins over [0, 1]."""
    hist, _, _ = np.histogram2d(a, b, bins=n_bins, range=[[0.0, 1.0], [0.0, 1.0]])
    return float(mutual_info_score(None, None, contingency=hist)) / math.log(2)


def ami(series: np.ndarray, cfg: AmiConfig | None = None) -> tuple[np.ndarray, int]:
    """MI(x_t; x_{t+k}) for k = 1..max_lag and the lag where the curve first levels off.

    The curve is smoothed by a centred moving average of plateau_len lags; the chosen lag
    is the first k from which the relative change stays below plateau_tol for plateau_len
    consecutive lags. Without such a run, the first local minimum is used, then the global one.
    """
    cfg = cfg or AmiConfig()
    x = rescale_unit(series)
    if len(x) <= 2 * cfg.max_lag:
        raise SeriesTooShort(f"AMI up to lag {cfg.max_lag} needs more than {2 * cfg.max_lag} samples, got {len(x)}")
    curve = np.array([mutual_information(x[:-k], x[k:], cfg.n_bins) for k in range(1, cfg.max_lag + 1)])

    smooth = uniform_filter1d(curve, size=cfg.plateau_len, mode="nearest")
    denom = np.maximum(np.abs(smooth[:-1]), 1e-12)
    flat = np.abs(np.diff(smooth)) / denom < cfg.plateau_tol
    run = 0
    for k, is_flat in enumerate(flat):
        run = run + 1 if is_flat else 0
        if run >= cfg.plateau_len:
            return curve, k - cfg.plateau_len + 2
    for k in range(1, len(curve) - 1):
        if curve[k] < curve[k - 1] and curve[k] <= curve[k + 1]:
            return curve, k + 1
    return curve, int(np.argmin(curve)) + 1


def fnn(series: np.ndarray, tau: int, cfg: FnnConfig | None = None) -> tuple[np.ndarray, int]:
    """False-nearest-neighbour fraction for m = 1..max_m and the smallest m below threshold.

    A neighbour is false when adding the next delay coordinate stretches the pair by more
    than rtol times their distance, or leaves it further apart than atol times the series sd.
    Coincident pairs are left out of the fraction.
    """
    cfg = cfg or FnnConfig()
    x = rescale_unit(series)
    n_points = len(x) - cfg.max_m * tau
    if n_points < 10:
        raise SeriesTooShort(f"FNN up to m={cfg.max_m} with tau={tau} needs more samples than {len(x)}")
    sd = float(np.std(x))
    fractions = np.zeros(cfg.max_m)
    for m in range(1, cfg.max_m + 1):
        points = embed(x, EmbeddingParams(tau=tau, m=m))[:n_points]
        dist, idx = cKDTree(points).query(points, k=2)
        r_m = dist[:, 1]
        nn = idx[:, 1]
        step = np.abs(x[np.arange(n_points) + m * tau] - x[nn + m * tau])
        ok = r_m > 0
        if not ok.any():
            fractions[m - 1] = 0.0
            continue
        r_next = np.sqrt(r_m[ok] ** 2 + step[ok] ** 2)
        false = (step[ok] / r_m[ok] > cfg.rtol) | (r_next / sd > cfg.atol if sd > 0 else False)
        fractions[m - 1] = float(np.mean(false))
    below = np.flatnonzero(fractions < cfg.threshold)
    selected = int(below[0]) + 1 if len(below) else cfg.max_m
    return fractions, selected


# --- recurrence ---

def _row_blocks(n: int, size: int):
    for start in range(0, n, size):
        yield start, min(n, start + size)


def recurrence_matrix(traj_a: np.ndarray, traj_b: np.ndarray | None = None, cfg: RqaConfig | None = None) -> RecurrencePlot:
    """Thresholded Euclidean distance matrix; auto mode when traj_b is omitted.

    Auto mode uses cfg.theiler, cross mode cfg.cross_theiler. Distances are computed in
    row blocks, so memory stays bounded by block_rows x n_cols floats.
    """
    cfg = cfg or RqaConfig()
    a = np.atleast_2d(np.asarray(traj_a, dtype=float).T).T
    mode = "auto" if traj_b is None else "cross"
    b = a if traj_b is None else np.atleast_2d(np.asarray(traj_b, dtype=float).T).T
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptyTrajectory("Recurrence needs non-empty trajectories")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"Trajectory dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    theiler = cfg.theiler if mode == "auto" else cfg.cross_theiler
    na, nb = a.shape[0], b.shape[0]
    n_valid = band_mask_count(na, nb, theiler)

    sums = []
    for lo, hi in _row_blocks(na, cfg.block_rows):
        d = cdist(a[lo:hi], b)
        if theiler > 0:
            d = np.where(band_mask(hi - lo, nb, theiler, lo), d, 0.0)
        sums.append(float(d.sum()))
    mean_distance = math.fsum(sums) / n_valid if n_valid else 0.0
    eps = cfg.radius_frac * mean_distance

    matrix = np.zeros((na, nb), dtype=bool)
    for lo, hi in _row_blocks(na, cfg.block_rows):
        block = cdist(a[lo:hi], b) <= eps
        if theiler > 0:
            block &= band_mask(hi - lo, nb, theiler, lo)
        matrix[lo:hi] = block
    return RecurrencePlot(matrix=matrix, mode=mode, theiler=theiler, epsilon=eps, mean_distance=mean_distance)


def _runs(mask: np.ndarray) -> np.ndarray:
    """Lengths of runs of True along the last axis, in row-major order."""
    m = np.atleast_2d(mask).astype(np.int8)
    pad = np.zeros((m.shape[0], 1), dtype=np.int8)
    d = np.diff(np.hstack([pad, m, pad]), axis=1)
    starts = np.nonzero(d == 1)[1]
    ends = np.nonzero(d == -1)[1]
    return ends - starts


def diagonal_lines(matrix: np.ndarray) -> np.ndarray:
    na, nb = matrix.shape
    lengths = [_runs(np.diagonal(matrix, k)) for k in range(-(na - 1), nb)]
    return np.concatenate(lengths) if lengths else np.zeros(0, dtype=int)


def vertical_lines(matrix: np.ndarray) -> np.ndarray:
    return _runs(matrix.T)


def _trend(plot: RecurrencePlot, l_min: int) -> float:
    """Least-squares slope of recurrence density against diagonal offset.

    Offsets run from the first non-excluded diagonal to N - 2*l_min, pooling the
    diagonals above and below the main one.
    """
    na, nb = plot.shape
    n = min(na, nb)
    first = max(plot.theiler, 0)
    offsets = np.arange(first, n - 2 * l_min + 1)
    if len(offsets) < 2:
        return 0.0
    density = np.empty(len(offsets))
    for idx, k in enumerate(offsets):
        if k == 0:
            hits = int(np.count_nonzero(np.diagonal(plot.matrix, 0)))
            cells = _diag_len(na, nb, 0)
        else:
            hits = int(np.count_nonzero(np.diagonal(plot.matrix, k))) + int(np.count_nonzero(np.diagonal(plot.matrix, -k)))
            cells = _diag_len(na, nb, k) + _diag_len(na, nb, -k)
        density[idx] = hits / cells if cells else 0.0
    k = offsets.astype(float)
    dk = k - k.mean()
    return float(np.sum(dk * (density - density.mean())) / np.sum(dk ** 2))


def _line_stats(lengths: np.ndarray, minimum: int) -> tuple[np.ndarray, int]:
    kept = lengths[lengths >= minimum]
    return kept, int(kept.sum())


def rqa_metrics(plot: RecurrencePlot, cfg: RqaConfig | None = None) -> RqaMetrics:
    cfg = cfg or RqaConfig()
    na, nb = plot.shape
    n_rec = int(np.count_nonzero(plot.matrix))
    denom = plot.n_valid() if (plot.theiler > 0 and cfg.rr_exclude_theiler) else na * nb
    rr = n_rec / denom if denom else 0.0
    trend = _trend(plot, cfg.l_min)
    if n_rec == 0:
        return RqaMetrics(rr=0.0, trend=trend, flags=(FLAG_NO_RECURRENCE,))

    diag = diagonal_lines(plot.matrix)
    vert = vertical_lines(plot.matrix)
    lmax = int(diag.max())
    vmax = int(vert.max())
    diag_kept, diag_points = _line_stats(diag, cfg.l_min)
    vert_kept, vert_points = _line_stats(vert, cfg.v_min)

    entropy = 0.0
    if len(diag_kept):
        counts = np.bincount(diag_kept)
        counts = counts[counts > 0]
        p = counts / counts.sum()
        entropy = float(-np.sum(p * np.log2(p)))
        entropy = max(entropy, 0.0)
    if len(diag_kept) == 0:
        complexity = 0.0
    elif cfg.complexity_max == "realizable":
        complexity = math.log2(lmax - cfg.l_min + 1) - entropy
    else:
        complexity = math.log2(len(np.unique(diag_kept))) - entropy

    return RqaMetrics(
        rr=rr,
        det=diag_points / n_rec,
        l_mean=float(diag_kept.mean()) if len(diag_kept) else 0.0,
        l_sd=float(diag_kept.std()) if len(diag_kept) else 0.0,
        lmax=lmax,
        entropy=entropy,
        complexity=complexity,
        divergence=1.0 / lmax,
        trend=trend,
        lam=vert_points / n_rec,
        tt=float(vert_kept.mean()) if len(vert_kept) else 0.0,
        vmax=vmax,
    )


def rqa(series: np.ndarray, params: EmbeddingParams, cfg: RqaConfig | None = None) -> RqaMetrics:
    """Auto-recurrence measures of one series: rescale, embed, threshold, quantify."""
    cfg = cfg or RqaConfig()
    if len(series) < cfg.min_window_warn:
        logger.warning("RQA on %d samples; stable recurrence measures need at least %d", len(series), cfg.min_window_warn)
    flags: list[str] = []
    traj = embed(rescale_unit(series, flags), params)
    metrics = rqa_metrics(recurrence_matrix(traj, cfg=cfg), cfg)
    metrics.flags = tuple(flags) + metrics.flags
    return metrics


def crqa(series_a: np.ndarray, series_b: np.ndarray, params: EmbeddingParams, cfg: RqaConfig | None = None) -> RqaMetrics:
    """Cross-recurrence measures; each series is rescaled on its own."""
    cfg = cfg or RqaConfig.cross_default()
    if len(series_a) < cfg.min_window_warn:
        logger.warning("CRQA on %d samples; stable recurrence measures need at least %d", len(series_a), cfg.min_window_warn)
    flags: list[str] = []
    traj_a = embed(rescale_unit(series_a, flags), params)
    traj_b = embed(rescale_unit(series_b, flags), params)
    metrics = rqa_metrics(recurrence_matrix(traj_a, traj_b, cfg), cfg)
    metrics.flags = tuple(flags) + metrics.flags
    return metrics


def rqa_columns(channels: list[str], pairs: list[tuple[str, str]]) -> list[str]:
    cols = [f"{ch}__rqa__{m}" for ch in channels for m in RQA_COLUMNS]
    cols += [f"{a}__{b}__crqa__{m}" for a, b in pairs for m in RQA_COLUMNS]
    return cols


def window_rqa(
    channels: dict[str, np.ndarray],
    window_indices: list[int],
    spec: WindowSpec,
    params: EmbeddingParams,
    cfg: RqaConfig,
    cross_cfg: RqaConfig,
    rqa_channels: list[str],
    crqa_pairs: list[tuple[str, str]],
) -> pd.DataFrame:
    """RQA and CRQA columns for the given window positions, one row each."""
    rows = []
    for k in window_indices:
        s = k * spec.hop
        row: dict[str, float] = {"window_index": int(k)}
        for ch in rqa_channels:
            m = rqa(channels[ch][s:s + spec.length], params, cfg)
            row.update({f"{ch}__rqa__{name}": v for name, v in m.as_dict().items()})
        for a, b in crqa_pairs:
            m = crqa(channels[a][s:s + spec.length], channels[b][s:s + spec.length], params, cross_cfg)
            row.update({f"{a}__{b}__crqa__{name}": v for name, v in m.as_dict().items()})
        logger.debug("RQA window %d done", k)
        rows.append(row)
    return pd.DataFrame(rows, columns=["window_index"] + rqa_columns(rqa_channels, crqa_pairs))


def export_plot_rle(plot: RecurrencePlot) -> str:
    """Run-length text: a header, then one line per row of `start:length` runs."""
    na, nb = plot.shape
    lines = [f"# rows={na} cols={nb} mode={plot.mode} theiler={plot.theiler} epsilon={float(plot.epsilon)!r}"]
    padded = np.zeros((na, nb + 2), dtype=np.int8)
    padded[:, 1:-1] = plot.matrix
    d = np.diff(padded, axis=1)
    for i in range(na):
        starts = np.flatnonzero(d[i] == 1)
        ends = np.flatnonzero(d[i] == -1)
        lines.append(" ".join(f"{s}:{e - s}" for s, e in zip(starts, ends)))
    return "\n".join(lines) + "\n"


def parse_plot_rle(text: str) -> np.ndarray:
    lines = text.splitlines()
    header = dict(tok.split("=", 1) for tok in lines[0].lstrip("# ").split())
    na, nb = int(header["rows"]), int(header["cols"])
    matrix = np.zeros((na, nb), dtype=bool)
    for i, line in enumerate(lines[1:na + 1]):
        for run in line.split():
            s, length = map(int, run.split(":"))
            matrix[i, s:s + length] = True
    return matrix
