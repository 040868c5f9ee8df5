"""Synthetic signals, feature matrices, keypoint sessions and event logs, plus a brute-force RQA oracle.

Everything here is seed-deterministic. `brute_force_rqa` is written against plain Python
lists and loops only; it shares no code with `src.dynamics`.
"""

import json
import logging
import math
import os
import numpy as np
import pandas as pd

from src.dynamics import rqa
from src.errors import EmptyTrajectory, InvalidParams, TooLarge
from src.features import derivatives, summarize
from src.ingest import serialize_frame
from src.models import Event, FrameKeypoints, HeadPose, KeypointSeries, RqaMetrics
from src.schemas import CONDITIONS, N_LANDMARKS, SESSIONS, EmbeddingParams, LandmarkMap, RegimeSpec, RqaConfig
from src.taskperf import write_event_log

logger = logging.getLogger(__name__)

ORACLE_MAX_POINTS = 2000
DATASET_CHANNELS = ("blink", "mouth", "pupil_x", "tx")
FREQ_BASE_HZ = 1.0
NOISE_BASE = 0.15


# --- signals ---

def _check_frequencies(spec: RegimeSpec, fps: float) -> None:
    freqs = {"sine": [spec.frequency], "sum-of-sines": spec.frequencies}.get(spec.kind, [])
    for f in freqs:
        if f >= fps / 2:
            raise InvalidParams(f"Frequency {f} Hz is not below Nyquist ({fps / 2} Hz)")
    for segment in spec.schedule:
        _check_frequencies(segment.spec, fps)


def gen_signal(spec: RegimeSpec, n: int, fps: float = 60.0) -> np.ndarray:
    """n samples of the regime at fps. A switching regime cycles through its schedule until n samples exist."""
    if n < 1:
        raise InvalidParams(f"n must be at least 1, got {n}")
    if fps <= 0:
        raise InvalidParams(f"fps must be positive, got {fps}")
    _check_frequencies(spec, fps)
    rng = np.random.default_rng(spec.seed)
    t = np.arange(n) / fps

    if spec.kind == "sine":
        x = spec.amplitude * np.sin(2 * np.pi * spec.frequency * t + spec.phase)
    elif spec.kind == "sum-of-sines":
        x = spec.amplitude * sum(np.sin(2 * np.pi * f * t + spec.phase) for f in spec.frequencies)
    elif spec.kind == "white-noise":
        return spec.amplitude * rng.normal(0.0, spec.noise_sd, n)
    elif spec.kind == "ar1":
        e = rng.normal(0.0, spec.noise_sd, n)
        x = np.empty(n)
        x[0] = e[0] / math.sqrt(1 - spec.ar_coef ** 2)
        for i in range(1, n):
            x[i] = spec.ar_coef * x[i - 1] + e[i]
        return spec.amplitude * x
    else:
        parts, total, j = [], 0, 0
        while total < n:
            segment = spec.schedule[j % len(spec.schedule)]
            seed = int(np.random.SeedSequence([spec.seed, segment.spec.seed, j]).generate_state(1)[0])
            parts.append(gen_signal(segment.spec.model_copy(update={"seed": seed}), segment.n, fps))
            total += segment.n
            j += 1
        return np.concatenate(parts)[:n]

    if spec.jitter_sd > 0:
        x = x + rng.normal(0.0, spec.jitter_sd, n)
    return x


# --- feature-level datasets ---

def _level(condition_idx: int, permuted_idx: int, idiosyncrasy: float) -> float:
    """Effective load level in [0, 2]: the shared class level blended toward a participant-specific one."""
    return (1 - idiosyncrasy) * condition_idx + idiosyncrasy * permuted_idx


def _window_row(rng, levels: dict[str, float], offsets: dict[str, float], gains: dict[str, float],
                separation: float, window_jitter: float, n: int, fps: float, rqa_cfg: RqaConfig | None) -> dict[str, float]:
    row = {}
    for ch in DATASET_CHANNELS:
        spread = 2.0 ** (separation * (levels[ch] - 1))
        freq = FREQ_BASE_HZ * spread * math.exp(rng.normal(0, window_jitter))
        noise = NOISE_BASE * spread * math.exp(rng.normal(0, window_jitter))
        spec = RegimeSpec(kind="sine", amplitude=gains[ch], frequency=min(freq, fps / 2 - 1e-6),
                          phase=float(rng.uniform(0, 2 * np.pi)), jitter_sd=noise,
                          seed=int(rng.integers(0, 2 ** 31 - 1)))
        x = gen_signal(spec, n, fps) + offsets[ch]
        for level, values in zip(("value", "velocity", "acceleration"), derivatives(x, fps)):
            for stat, v in summarize(values).as_dict().items():
                row[f"{ch}__{level}__{stat}"] = v
        if rqa_cfg is not None and ch == DATASET_CHANNELS[0]:
            m = rqa(x, EmbeddingParams(tau=5, m=2), rqa_cfg)
            row.update({f"{ch}__rqa__{k}": v for k, v in m.as_dict().items()})
    return row


def _perf_row(rng, level: float, offset: float, separation: float) -> dict[str, float]:
    def acc(base: float) -> float:
        return float(np.clip(base - 0.1 * separation * level + offset + rng.normal(0, 0.03), -1.0, 1.0))

    return {
        "perf__tracking__acc": acc(0.92),
        "perf__resman__acc": acc(0.90),
        "perf__sysmon__acc": acc(0.85),
        "perf__comms__acc": acc(0.88),
        "perf__sysmon__rt": 2.0 + 0.5 * separation * level + rng.normal(0, 0.2),
        "perf__comms__rt": 4.0 + 0.8 * separation * level + rng.normal(0, 0.3),
    }


def gen_participant_dataset(
    n_participants: int,
    windows_per_condition: int,
    idiosyncrasy: float = 0.0,
    seed: int = 0,
    baseline_windows: int = 0,
    separation: float = 1.0,
    window_jitter: float = 0.05,
    window_s: float = 4.0,
    fps: float = 60.0,
    with_perf: bool = True,
    with_rqa: bool = False,
) -> tuple[pd.DataFrame, pd.Series]:
    """A feature matrix whose three load conditions differ in signal frequency and noise level.

    Each condition maps to a load level that scales every channel's frequency and noise by
    2**(separation * (level - 1)). With idiosyncrasy > 0 each participant's level for a class
    is blended toward a per-participant, per-channel permutation of the levels, and the
    participant gets channel offsets and gains; at idiosyncrasy 1 the class encoding is fully
    participant-specific. Returns the matrix and its condition labels (balanced exactly).
    """
    if n_participants < 1 or windows_per_condition < 1 or baseline_windows < 0:
        raise InvalidParams("Participant and window counts must be positive")
    if not 0 <= idiosyncrasy <= 1:
        raise InvalidParams(f"idiosyncrasy must be in [0, 1], got {idiosyncrasy}")
    n = int(round(window_s * fps))
    rqa_cfg = RqaConfig(min_window_warn=1) if with_rqa else None
    rows = []
    for p, child in enumerate(np.random.SeedSequence(seed).spawn(n_participants)):
        rng = np.random.default_rng(child)
        participant = f"P{p + 1:02d}"
        perms = {ch: rng.permutation(3) for ch in DATASET_CHANNELS + ("perf",)}
        offsets = {ch: idiosyncrasy * 3.0 * rng.normal() for ch in DATASET_CHANNELS}
        gains = {ch: math.exp(idiosyncrasy * 0.5 * rng.normal()) for ch in DATASET_CHANNELS}
        perf_offset = idiosyncrasy * 0.05 * rng.normal()
        for session, count in (("baseline", baseline_windows), ("experimental", windows_per_condition)):
            for c, condition in enumerate(CONDITIONS):
                levels = {ch: _level(c, int(perms[ch][c]), idiosyncrasy) for ch in DATASET_CHANNELS}
                for w in range(count):
                    row = {"participant": participant, "session": session, "condition": condition, "window_index": w}
                    row.update(_window_row(rng, levels, offsets, gains, separation, window_jitter, n, fps, rqa_cfg))
                    if with_perf:
                        row.update(_perf_row(rng, _level(c, int(perms["perf"][c]), idiosyncrasy), perf_offset, separation))
                    rows.append(row)
    matrix = pd.DataFrame(rows)
    logger.info("Synthetic dataset: %d participants, %d rows, %d features",
                n_participants, len(matrix), matrix.shape[1] - 4)
    return matrix, matrix["condition"].copy()


# --- brute-force recurrence oracle ---

def _as_points(traj) -> list[tuple[float, ...]]:
    arr = np.asarray(traj, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return [tuple(float(v) for v in row) for row in arr.tolist()]


def _run_lengths(cells: list[bool]) -> list[int]:
    runs, current = [], 0
    for cell in cells:
        if cell:
            current += 1
        elif current:
            runs.append(current)
            current = 0
    if current:
        runs.append(current)
    return runs


def brute_force_rqa(traj_a, traj_b=None, cfg: RqaConfig | None = None) -> RqaMetrics:
    """Recurrence measures by explicit enumeration of every cell, diagonal and column."""
    cfg = cfg or (RqaConfig() if traj_b is None else RqaConfig.cross_default())
    a = _as_points(traj_a)
    b = a if traj_b is None else _as_points(traj_b)
    na, nb = len(a), len(b)
    if na == 0 or nb == 0:
        raise EmptyTrajectory("Recurrence needs non-empty trajectories")
    if max(na, nb) > ORACLE_MAX_POINTS:
        raise TooLarge(f"Oracle scan is limited to {ORACLE_MAX_POINTS} points, got {max(na, nb)}")
    w = cfg.theiler if traj_b is None else cfg.cross_theiler

    dist = [[math.dist(a[i], b[j]) for j in range(nb)] for i in range(na)]
    valid = [[abs(i - j) >= w for j in range(nb)] for i in range(na)]
    n_valid = sum(sum(row) for row in valid)
    total = math.fsum(dist[i][j] for i in range(na) for j in range(nb) if valid[i][j])
    eps = cfg.radius_frac * (total / n_valid if n_valid else 0.0)
    rec = [[valid[i][j] and dist[i][j] <= eps for j in range(nb)] for i in range(na)]
    n_rec = sum(sum(row) for row in rec)

    denom = n_valid if (w > 0 and cfg.rr_exclude_theiler) else na * nb
    rr = n_rec / denom if denom else 0.0

    # trend: density per offset, diagonals above and below pooled
    n = min(na, nb)
    offsets = list(range(max(w, 0), n - 2 * cfg.l_min + 1))
    trend = 0.0
    if len(offsets) >= 2:
        density = []
        for k in offsets:
            hits = cells = 0
            for kk in {k, -k}:
                for i in range(na):
                    j = i + kk
                    if 0 <= j < nb:
                        cells += 1
                        hits += rec[i][j]
            density.append(hits / cells if cells else 0.0)
        k_mean = math.fsum(offsets) / len(offsets)
        d_mean = math.fsum(density) / len(density)
        num = math.fsum((k - k_mean) * (d - d_mean) for k, d in zip(offsets, density))
        den = math.fsum((k - k_mean) ** 2 for k in offsets)
        trend = num / den

    if n_rec == 0:
        return RqaMetrics(rr=0.0, trend=trend, flags=("no_recurrent_points",))

    diag = []
    for k in range(-(na - 1), nb):
        diag += _run_lengths([rec[i][i + k] for i in range(na) if 0 <= i + k < nb])
    vert = []
    for j in range(nb):
        vert += _run_lengths([rec[i][j] for i in range(na)])

    lmax, vmax = max(diag), max(vert)
    d_kept = [x for x in diag if x >= cfg.l_min]
    v_kept = [x for x in vert if x >= cfg.v_min]

    entropy = complexity = l_mean = l_sd = 0.0
    if d_kept:
        counts: dict[int, int] = {}
        for x in d_kept:
            counts[x] = counts.get(x, 0) + 1
        entropy = max(-math.fsum((c / len(d_kept)) * math.log2(c / len(d_kept)) for c in counts.values()), 0.0)
        top = (lmax - cfg.l_min + 1) if cfg.complexity_max == "realizable" else len(counts)
        complexity = math.log2(top) - entropy
        l_mean = sum(d_kept) / len(d_kept)
        l_sd = math.sqrt(math.fsum((x - l_mean) ** 2 for x in d_kept) / len(d_kept))

    return RqaMetrics(
        rr=rr,
        det=sum(d_kept) / n_rec,
        l_mean=l_mean,
        l_sd=l_sd,
        lmax=lmax,
        entropy=entropy,
        complexity=complexity,
        divergence=1.0 / lmax,
        trend=trend,
        lam=sum(v_kept) / n_rec,
        tt=sum(v_kept) / len(v_kept) if v_kept else 0.0,
        vmax=vmax,
    )


# --- keypoint sessions ---

EYE_HALF_WIDTH = 25.0
LID_HALF_HEIGHT = 10.0
FACE_CENTRE = np.array([1280.0, 720.0])
LOAD_PARAMS = {
    # blink rate (Hz), head-jitter sd (px), mouth oscillation (Hz)
    "Low": (0.20, 1.0, 0.3),
    "Moderate": (0.30, 2.0, 0.5),
    "High": (0.45, 3.5, 0.8),
}


def _eye(base: np.ndarray, ids, upper, lower, centre) -> None:
    corners = [i for i in ids if i not in upper and i not in lower]
    for k, lid in enumerate(corners):
        base[lid] = centre + np.array([(-1) ** k * EYE_HALF_WIDTH, 0.0])
    for group, dy in ((upper, -LID_HALF_HEIGHT), (lower, LID_HALF_HEIGHT)):
        for k, lid in enumerate(group):
            dx = -8.0 + 16.0 * k / max(len(group) - 1, 1)
            base[lid] = centre + np.array([dx, dy])


def base_face(landmarks: LandmarkMap | None = None) -> np.ndarray:
    """Neutral (70, 2) face in screen pixels; unreferenced landmarks sit on an outline ellipse."""
    lm = landmarks or LandmarkMap()
    angles = 2 * np.pi * np.arange(N_LANDMARKS) / N_LANDMARKS
    base = FACE_CENTRE + np.column_stack([150 * np.cos(angles), 190 * np.sin(angles)])
    left_c, right_c = np.array([-60.0, -40.0]), np.array([60.0, -40.0])
    _eye(base, lm.left_eye, lm.left_upper_lid, lm.left_lower_lid, FACE_CENTRE + left_c)
    _eye(base, lm.right_eye, lm.right_upper_lid, lm.right_lower_lid, FACE_CENTRE + right_c)
    eye_ids = set(lm.left_eye) | set(lm.right_eye)
    for k, lid in enumerate(i for i in lm.template_ids if i not in eye_ids):
        base[lid] = FACE_CENTRE + np.array([0.0, 10.0 + 25.0 * k])
    base[lm.mouth_upper] = FACE_CENTRE + np.array([0.0, 75.0])
    base[lm.mouth_lower] = FACE_CENTRE + np.array([0.0, 85.0])
    base[lm.left_pupil] = FACE_CENTRE + left_c
    base[lm.right_pupil] = FACE_CENTRE + right_c
    return base


def _blink_openness(rng, n: int, fps: float, rate_hz: float) -> np.ndarray:
    openness = np.ones(n)
    half = max(int(round(0.075 * fps)), 1)
    t = rng.exponential(1 / rate_hz)
    while t * fps < n:
        mid = int(t * fps)
        for d in range(-half, half + 1):
            if 0 <= mid + d < n:
                openness[mid + d] = min(openness[mid + d], 0.1 + 0.9 * abs(d) / half)
        t += rng.exponential(1 / rate_hz)
    return openness


def gen_keypoint_session(
    condition: str,
    n_frames: int,
    fps: float = 60.0,
    seed: int = 0,
    landmarks: LandmarkMap | None = None,
    dropout_rate_hz: float = 0.05,
) -> tuple[KeypointSeries, list[HeadPose]]:
    """Render a moving face: known head pose per frame, blinks, mouth and pupil motion, confidence dropouts.

    Returns the series in screen pixels and the ground-truth pose of every frame, relative
    to the neutral face's reference-point centroid.
    """
    if condition not in LOAD_PARAMS:
        raise InvalidParams(f"Unknown condition: {condition!r}")
    if n_frames < 1:
        raise InvalidParams(f"n_frames must be at least 1, got {n_frames}")
    lm = landmarks or LandmarkMap()
    rng = np.random.default_rng(seed)
    blink_hz, jitter_px, mouth_hz = LOAD_PARAMS[condition]
    t = np.arange(n_frames) / fps
    phase = rng.uniform(0, 2 * np.pi, 6)

    base = base_face(lm)
    centre = base[list(lm.template_ids)].mean(axis=0)
    openness = _blink_openness(rng, n_frames, fps, blink_hz)
    mouth_h = 10.0 + 6.0 * np.sin(2 * np.pi * mouth_hz * t + phase[0])
    pupil = np.column_stack([6.0 * np.sin(2 * np.pi * 0.3 * t + phase[1]), 3.0 * np.sin(2 * np.pi * 0.2 * t + phase[2])])

    tx = 40 * np.sin(2 * np.pi * 0.05 * t + phase[3]) + np.cumsum(rng.normal(0, jitter_px / 10, n_frames))
    ty = 25 * np.sin(2 * np.pi * 0.07 * t + phase[4]) + np.cumsum(rng.normal(0, jitter_px / 10, n_frames))
    theta = 0.08 * np.sin(2 * np.pi * 0.04 * t + phase[5])
    sx = 1 + 0.05 * np.sin(2 * np.pi * 0.03 * t)
    sy = 1 + 0.04 * np.cos(2 * np.pi * 0.025 * t)

    lid_sets = [
        (lm.left_upper_lid, lm.left_lower_lid), (lm.right_upper_lid, lm.right_lower_lid),
    ]
    eye_centres = [base[list(lm.left_eye)].mean(axis=0), base[list(lm.right_eye)].mean(axis=0)]
    data = np.empty((n_frames, N_LANDMARKS, 3))
    poses = []
    for i in range(n_frames):
        face = base.copy()
        for (upper, lower), ec in zip(lid_sets, eye_centres):
            for group in (upper, lower):
                face[list(group), 1] = ec[1] + (base[list(group), 1] - ec[1]) * openness[i]
        face[lm.mouth_upper, 1] = base[lm.mouth_upper, 1] + 5.0 - mouth_h[i] / 2
        face[lm.mouth_lower, 1] = base[lm.mouth_upper, 1] + 5.0 + mouth_h[i] / 2
        face[lm.left_pupil] = eye_centres[0] + pupil[i]
        face[lm.right_pupil] = eye_centres[1] + pupil[i]
        pose = HeadPose(tx=float(tx[i]), ty=float(ty[i]), theta=float(theta[i]), sx=float(sx[i]), sy=float(sy[i]))
        data[i, :, :2] = pose.apply(face, centre) + rng.normal(0, 0.3, (N_LANDMARKS, 2))
        poses.append(pose)
    data[:, :, 2] = np.clip(0.9 + rng.uniform(-0.05, 0.05, (n_frames, N_LANDMARKS)), 0.0, 1.0)

    start = rng.exponential(1 / dropout_rate_hz) if dropout_rate_hz > 0 else math.inf
    while start * fps < n_frames:
        s = int(start * fps)
        data[s:s + int(rng.integers(3, 21)), :, 2] = 0.1
        start += rng.exponential(1 / dropout_rate_hz)
    return KeypointSeries(fps=fps, data=data), poses


# --- event logs ---

EVENT_PARAMS = {
    # tracking p, resman p, sysmon interval s, sysmon hit p, comms interval s, comms answer p, error p
    "Low": (0.92, 0.95, 20.0, 0.95, 25.0, 0.95, 0.05),
    "Moderate": (0.82, 0.85, 12.0, 0.85, 15.0, 0.85, 0.10),
    "High": (0.68, 0.72, 7.0, 0.70, 10.0, 0.70, 0.20),
}


def _ms(t: float) -> float:
    return float(round(t, 3))


def gen_event_log(condition: str, duration_s: float, seed: int = 0) -> list[Event]:
    """Canonical task-battery log whose event rates and success probabilities follow the load condition."""
    if condition not in EVENT_PARAMS:
        raise InvalidParams(f"Unknown condition: {condition!r}")
    if duration_s <= 0:
        raise InvalidParams(f"duration_s must be positive, got {duration_s}")
    p_track, p_res, sys_every, p_hit, com_every, p_answer, p_err = EVENT_PARAMS[condition]
    rng = np.random.default_rng(seed)
    events = []

    for t in np.arange(0.0, duration_s, 0.5):
        events.append(Event(_ms(t), "tracking", "sample", {"in_target": str(int(rng.random() < p_track))}))
    for t in np.arange(0.0, duration_s, 1.0):
        events.append(Event(_ms(t), "resman", "sample", {
            "a_in": str(int(rng.random() < p_res)), "b_in": str(int(rng.random() < p_res)),
        }))

    t = rng.exponential(sys_every)
    while t < duration_s:
        channel = f"F{int(rng.integers(1, 7))}"
        events.append(Event(_ms(t), "sysmon", "signal", {"channel": channel}))
        if rng.random() < p_hit:
            events.append(Event(_ms(t + rng.uniform(1.0, 5.0)), "sysmon", "response", {"channel": channel, "correct": "1"}))
        if rng.random() < p_err:
            events.append(Event(_ms(t + rng.uniform(0.5, 8.0)), "sysmon", "response",
                                {"channel": f"F{int(rng.integers(1, 7))}", "correct": "0"}))
        t += rng.exponential(sys_every)

    t = rng.exponential(com_every)
    while t < duration_s:
        own = rng.random() < 0.5
        events.append(Event(_ms(t), "comms", "prompt", {"own": "1" if own else "0"}))
        if rng.random() < (p_answer if own else p_err):
            events.append(Event(_ms(t + rng.uniform(2.0, 8.0)), "comms", "response", {}))
        t += rng.exponential(com_every)

    events = [e for e in events if e.t < duration_s]
    events.sort(key=lambda e: e.t)
    return events


# --- input trees ---

def write_keypoint_jsonl(series: KeypointSeries, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(series.length):
            fh.write(serialize_frame(FrameKeypoints(frame_index=i, points=series.data[i])) + "\n")


def write_synthetic_tree(
    root: str,
    n_participants: int = 2,
    duration_s: float = 20.0,
    fps: float = 60.0,
    seed: int = 0,
    sessions: tuple[str, ...] = SESSIONS,
    landmarks: LandmarkMap | None = None,
) -> pd.DataFrame:
    """Write keypoints/<p>/<session>_<condition>.jsonl, events/<p>/<session>_<condition>.csv and labels.csv.

    Returns the labels table (participant, session, condition, keypoints, events).
    """
    n_frames = int(round(duration_s * fps))
    labels = []
    for p in range(n_participants):
        participant = f"P{p + 1:02d}"
        for s_idx, session in enumerate(sessions):
            for c_idx, condition in enumerate(CONDITIONS):
                key_seed, event_seed = np.random.SeedSequence([seed, p, s_idx, c_idx]).generate_state(2)
                kp_dir = os.path.join(root, "keypoints", participant)
                ev_dir = os.path.join(root, "events", participant)
                os.makedirs(kp_dir, exist_ok=True)
                os.makedirs(ev_dir, exist_ok=True)
                kp_path = os.path.join(kp_dir, f"{session}_{condition}.jsonl")
                ev_path = os.path.join(ev_dir, f"{session}_{condition}.csv")
                series, _ = gen_keypoint_session(condition, n_frames, fps, int(key_seed), landmarks)
                write_keypoint_jsonl(series, kp_path)
                write_event_log(gen_event_log(condition, duration_s, int(event_seed)), ev_path)
                labels.append({
                    "participant": participant, "session": session, "condition": condition,
                    "keypoints": os.path.relpath(kp_path, root), "events": os.path.relpath(ev_path, root),
                })
                logger.info("Wrote synthetic %s %s %s (%d frames)", participant, session, condition, n_frames)
    table = pd.DataFrame(labels, columns=["participant", "session", "condition", "keypoints", "events"])
    table.to_csv(os.path.join(root, "labels.csv"), index=False)
    with open(os.path.join(root, "synth.json"), "w", encoding="utf-8") as fh:
        json.dump({"n_participants": n_participants, "duration_s": duration_s, "fps": fps, "seed": seed}, fh, indent=2)
    return table
