"""Batch orchestration: ingest -> preprocess -> align -> features -> dynamics -> taskperf merge -> feature CSV.

Output layout under RunConfig.output_dir:

    preprocess/<participant>/<session>_<condition>.npy     preprocessed (frames, 70, 3) series
    preprocess/<participant>/<session>_<condition>.json    its flags
    align/template.txt | align/<participant>/template.txt  reference templates
    features/<participant>/<session>_<condition>.csv       per-recording feature rows
    features/<participant>/<session>_<condition>_pose.csv  per-frame head pose
    features.csv                                           the merged feature matrix

Every stage directory carries a manifest.json with the config hash and the sha256 of each input
file; a stage whose manifest matches is not recomputed. `.partial` marks a run or stage in progress.
"""

import hashlib
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src import align, dynamics, features, ingest, preprocess, taskperf
from src.errors import EmptyInput, PoseLoadError, SeriesTooShort, StageError
from src.models import HeadPose, KeypointSeries, Recording, Template
from src.schemas import EmbeddingParams, RunConfig

logger = logging.getLogger(__name__)

PARTIAL = ".partial"
MANIFEST = "manifest.json"
FEATURES_CSV = "features.csv"
POSE_COLUMNS = ["frame", "tx", "ty", "theta", "sx", "sy", "residual"]


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@contextmanager
def stage_errors(stage: str, path: str | None = None):
    """Re-raise any pipeline error as a StageError naming the stage and file."""
    try:
        yield
    except StageError:
        raise
    except PoseLoadError as e:
        raise StageError(stage, str(e), path=path, frame=e.frame) from e


def mark_partial(directory: str) -> str:
    os.makedirs(directory, exist_ok=True)
    marker = os.path.join(directory, PARTIAL)
    with open(marker, "w", encoding="utf-8") as fh:
        fh.write("incomplete\n")
    return marker


def clear_partial(directory: str) -> None:
    marker = os.path.join(directory, PARTIAL)
    if os.path.exists(marker):
        os.remove(marker)


@dataclass
class StageCache:
    root: str
    stage: str
    config_hash: str

    @property
    def directory(self) -> str:
        return os.path.join(self.root, self.stage)

    def is_fresh(self, inputs: dict[str, str]) -> bool:
        path = os.path.join(self.directory, MANIFEST)
        if not os.path.exists(path) or os.path.exists(os.path.join(self.directory, PARTIAL)):
            return False
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        return manifest.get("config_hash") == self.config_hash and manifest.get("inputs") == inputs

    def begin(self) -> None:
        mark_partial(self.directory)

    def commit(self, inputs: dict[str, str]) -> None:
        with open(os.path.join(self.directory, MANIFEST), "w", encoding="utf-8") as fh:
            json.dump({"stage": self.stage, "config_hash": self.config_hash, "inputs": inputs}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        clear_partial(self.directory)


@dataclass
class RunResult:
    features_csv: str
    n_rows: int
    n_columns: int
    recordings: list[Recording] = field(default_factory=list)
    cached_stages: list[str] = field(default_factory=list)


def _recording_path(stage_dir: str, rec: Recording, suffix: str) -> str:
    return os.path.join(stage_dir, rec.participant, f"{rec.session}_{rec.condition}{suffix}")


def _events_path(config: RunConfig, rec: Recording) -> str | None:
    if config.events_dir is None:
        return None
    return os.path.join(config.events_dir, rec.participant, f"{rec.session}_{rec.condition}.csv")


def _by_participant(recordings: list[Recording]) -> dict[str, list[Recording]]:
    groups: dict[str, list[Recording]] = {}
    for rec in recordings:
        groups.setdefault(rec.participant, []).append(rec)
    return groups


def input_hashes(config: RunConfig, recordings: list[Recording]) -> dict[str, str]:
    hashes = {}
    for rec in recordings:
        hashes[os.path.relpath(rec.path, config.keypoints_dir)] = file_sha256(rec.path)
        ev = _events_path(config, rec)
        if ev is not None and os.path.exists(ev):
            hashes["events/" + os.path.relpath(ev, config.events_dir)] = file_sha256(ev)
    return dict(sorted(hashes.items()))


def discover(config: RunConfig) -> list[Recording]:
    recordings = ingest.discover_recordings(config.keypoints_dir)
    if not recordings:
        raise StageError("ingest", "no <participant>/<session>_<condition> keypoint files found", path=config.keypoints_dir)
    return recordings


# --- preprocess ---

def _preprocess_participant(recs: list[Recording], config: RunConfig, stage_dir: str) -> list[KeypointSeries]:
    out = []
    retain = config.landmarks.referenced_ids()
    for rec in recs:
        with stage_errors("ingest", rec.path):
            raw = ingest.load_keypoints(rec.path, config.fps)
        with stage_errors("preprocess", rec.path):
            series = preprocess.preprocess_series(raw, config.preprocess, retain_ids=retain)
        os.makedirs(os.path.join(stage_dir, rec.participant), exist_ok=True)
        np.save(_recording_path(stage_dir, rec, ".npy"), series.data)
        with open(_recording_path(stage_dir, rec, ".json"), "w", encoding="utf-8") as fh:
            json.dump({"fps": series.fps, "flags": series.flags}, fh)
        logger.info("Preprocessed %s %s %s: %d frames, %d flags",
                    rec.participant, rec.session, rec.condition, series.length, len(series.flags))
        out.append(series)
    return out


def load_preprocessed(stage_dir: str, rec: Recording) -> KeypointSeries:
    with open(_recording_path(stage_dir, rec, ".json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    return KeypointSeries(fps=meta["fps"], data=np.load(_recording_path(stage_dir, rec, ".npy")), flags=meta["flags"])


def preprocess_stage(config: RunConfig, recordings: list[Recording], inputs: dict[str, str], workers: int = 1) -> tuple[dict[Recording, KeypointSeries], bool]:
    """Preprocessed series per recording, and whether they came from the cache."""
    cache = StageCache(config.output_dir, "preprocess", config.semantic_hash("preprocess"))
    if cache.is_fresh(inputs):
        logger.info("preprocess: cached")
        return {rec: load_preprocessed(cache.directory, rec) for rec in recordings}, True
    cache.begin()
    groups = _by_participant(recordings)
    results = Parallel(n_jobs=workers)(
        delayed(_preprocess_participant)(recs, config, cache.directory) for recs in groups.values()
    )
    out = {}
    for recs, series_list in zip(groups.values(), results):
        out.update(zip(recs, series_list))
    cache.commit(inputs)
    return out, False


# --- align ---

def align_stage(config: RunConfig, series: dict[Recording, KeypointSeries]) -> dict[str, Template]:
    """Reference templates keyed by participant, "" for the global one.

    The global template is always built: "none" stabilisation still takes its head channels
    from the global fit.
    """
    stage_dir = os.path.join(config.output_dir, "align")
    mark_partial(stage_dir)
    ids = config.landmarks.template_ids
    with stage_errors("align", config.keypoints_dir):
        templates = {"": align.build_template(list(series.values()), ids, "global")}
    align.save_template(templates[""], os.path.join(stage_dir, "template.txt"))
    if config.stabilization == "per-participant":
        for participant, recs in _by_participant(list(series)).items():
            with stage_errors("align", os.path.join(config.keypoints_dir, participant)):
                templates[participant] = align.build_template([series[r] for r in recs], ids, participant)
            os.makedirs(os.path.join(stage_dir, participant), exist_ok=True)
            align.save_template(templates[participant], os.path.join(stage_dir, participant, "template.txt"))
    clear_partial(stage_dir)
    logger.info("align: %d template(s), mode %s", len(templates), config.stabilization)
    return templates


# --- features, dynamics, task performance ---

def _embedding_for(channels: dict[str, np.ndarray], config: RunConfig) -> EmbeddingParams:
    """Median AMI lag and largest FNN dimension over the analysed channels' longest finite stretch."""
    if not config.estimate_embedding:
        return config.embedding
    taus, dims = [], []
    for ch in config.rqa_channels:
        values = channels[ch]
        segments = preprocess.valid_segments(values)
        if not segments:
            continue
        start, end = max(segments, key=lambda s: s[1] - s[0])
        try:
            _, tau = dynamics.ami(values[start:end], config.ami)
            _, m = dynamics.fnn(values[start:end], tau, config.fnn)
        except SeriesTooShort as e:
            logger.warning("Embedding estimate for %s skipped: %s", ch, e)
            continue
        taus.append(tau)
        dims.append(m)
    if not taus:
        return config.embedding
    return EmbeddingParams(tau=int(np.median(taus)), m=max(dims))


def pose_frame(poses: list[HeadPose]) -> pd.DataFrame:
    return pd.DataFrame(
        [(i, p.tx, p.ty, p.theta, p.sx, p.sy, p.residual) for i, p in enumerate(poses)], columns=POSE_COLUMNS
    )


def recording_features(rec: Recording, series: KeypointSeries, templates: dict[str, Template], config: RunConfig) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Feature rows for one recording plus its per-frame pose table."""
    template = templates.get(rec.participant, templates[""]) if config.stabilization == "per-participant" else templates[""]
    with stage_errors("align", rec.path):
        aligned, poses = align.align_series(series, template)
    facial_source = series if config.stabilization == "none" else aligned

    with stage_errors("features", rec.path):
        channels = features.channel_set(facial_source, align.head_channels(poses), config.landmarks)
        table = features.window_features(channels, config.fps, config.window)

    if config.rqa_channels or config.crqa_pairs:
        with stage_errors("dynamics", rec.path):
            params = _embedding_for(channels, config)
            rqa_table = dynamics.window_rqa(
                channels, table["window_index"].tolist(), config.window, params,
                config.rqa, config.rqa_cross, config.rqa_channels, config.crqa_pairs,
            )
        table = table.merge(rqa_table, on="window_index", how="left")

    events = _events_path(config, rec)
    if events is not None:
        if os.path.exists(events):
            with stage_errors("taskperf", events):
                log = taskperf.read_event_log(events)
                duration = (series.length - 1) / config.fps
                perf = taskperf.perf_frame(taskperf.windowed_perf(log, config.window, duration_s=duration))
        else:
            logger.warning("No event log for %s; performance columns left empty", rec.path)
            perf = pd.DataFrame(columns=["window_index"] + taskperf.PERF_COLUMNS)
        table = table.merge(perf.astype({"window_index": int}), on="window_index", how="left")

    table.insert(0, "condition", rec.condition)
    table.insert(0, "session", rec.session)
    table.insert(0, "participant", rec.participant)
    logger.info("Features %s %s %s: %d windows, %d columns",
                rec.participant, rec.session, rec.condition, len(table), table.shape[1])
    return table, pose_frame(poses)


def _features_participant(recs, series_list, templates, config: RunConfig, stage_dir: str) -> list[pd.DataFrame]:
    out = []
    for rec, series in zip(recs, series_list):
        table, poses = recording_features(rec, series, templates, config)
        os.makedirs(os.path.join(stage_dir, rec.participant), exist_ok=True)
        table.to_csv(_recording_path(stage_dir, rec, ".csv"), index=False)
        poses.to_csv(_recording_path(stage_dir, rec, "_pose.csv"), index=False)
        out.append(table)
    return out


def cached_tables(cache: StageCache, recordings: list[Recording]) -> list[pd.DataFrame]:
    return [
        pd.read_csv(_recording_path(cache.directory, rec, ".csv"), float_precision="round_trip",
                    dtype={"participant": str, "session": str, "condition": str})
        for rec in recordings
    ]


def features_stage(config: RunConfig, series: dict[Recording, KeypointSeries], templates: dict[str, Template],
                   inputs: dict[str, str], workers: int = 1) -> tuple[list[pd.DataFrame], bool]:
    cache = StageCache(config.output_dir, "features", config.semantic_hash("features"))
    recordings = list(series)
    if cache.is_fresh(inputs):
        logger.info("features: cached")
        return cached_tables(cache, recordings), True
    cache.begin()
    groups = _by_participant(recordings)
    results = Parallel(n_jobs=workers)(
        delayed(_features_participant)(recs, [series[r] for r in recs], templates, config, cache.directory)
        for recs in groups.values()
    )
    cache.commit(inputs)
    return [table for tables in results for table in tables], False


def run_pipeline(config: RunConfig, workers: int = 1) -> RunResult:
    """Run every stage in order and write features.csv. Unchanged inputs and config reuse cached stages."""
    os.makedirs(config.output_dir, exist_ok=True)
    mark_partial(config.output_dir)
    recordings = discover(config)
    inputs = input_hashes(config, recordings)
    logger.info("Run %s: %d recordings, %d worker(s)", config.semantic_hash()[:12], len(recordings), workers)

    cached = []
    feature_cache = StageCache(config.output_dir, "features", config.semantic_hash("features"))
    if feature_cache.is_fresh(inputs):
        logger.info("features: cached")
        tables = cached_tables(feature_cache, recordings)
        cached = ["preprocess", "align", "features"]
    else:
        series, pre_cached = preprocess_stage(config, recordings, inputs, workers)
        if pre_cached:
            cached.append("preprocess")
        templates = align_stage(config, series)
        tables, _ = features_stage(config, series, templates, inputs, workers)

    tables = [t for t in tables if not t.empty]
    if not tables:
        raise StageError("features", "no complete windows in any recording", path=config.keypoints_dir)
    matrix = pd.concat(tables, ignore_index=True)
    path = os.path.join(config.output_dir, FEATURES_CSV)
    matrix.to_csv(path, index=False)
    clear_partial(config.output_dir)
    logger.info("Wrote %s: %d rows x %d columns", path, len(matrix), matrix.shape[1])
    return RunResult(features_csv=path, n_rows=len(matrix), n_columns=matrix.shape[1],
                     recordings=recordings, cached_stages=cached)


def load_feature_matrix(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise EmptyInput(f"Feature matrix not found: {path}")
    matrix = pd.read_csv(path, float_precision="round_trip", dtype={"participant": str, "session": str, "condition": str})
    if matrix.empty:
        raise EmptyInput(f"Feature matrix is empty: {path}")
    return matrix
