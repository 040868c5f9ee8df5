"""Record types shared between pipeline stages."""

import math
from dataclasses import dataclass, field, fields
import numpy as np

from src.schemas import N_LANDMARKS


@dataclass
class FrameKeypoints:
    """One frame of face-model output: 70 rows of (x, y, confidence).

    Missing coordinates are NaN.
    """
    frame_index: int
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.shape != (N_LANDMARKS, 3):
            raise ValueError(f"Expected {N_LANDMARKS}x3 points, got {self.points.shape}")


@dataclass
class KeypointSeries:
    """Fixed-rate landmark traces, shape (frames, 70, 3) as (x, y, confidence).

    A flagged-missing sample has NaN x and y.
    """
    fps: float
    data: np.ndarray
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 3 or self.data.shape[1:] != (N_LANDMARKS, 3):
            raise ValueError(f"Expected (frames, {N_LANDMARKS}, 3) data, got {self.data.shape}")

    @property
    def length(self) -> int:
        return self.data.shape[0]

    @property
    def xy(self) -> np.ndarray:
        return self.data[:, :, :2]

    @property
    def confidence(self) -> np.ndarray:
        return self.data[:, :, 2]

    @property
    def missing(self) -> np.ndarray:
        """Boolean (frames, 70): x or y is missing."""
        return np.isnan(self.data[:, :, 0]) | np.isnan(self.data[:, :, 1])

    def landmark(self, landmark_id: int) -> np.ndarray:
        return self.data[:, landmark_id, :]

    def landmarks(self) -> dict[int, np.ndarray]:
        return {i: self.data[:, i, :] for i in range(N_LANDMARKS)}

    def with_data(self, data: np.ndarray, *new_flags: str) -> "KeypointSeries":
        return KeypointSeries(fps=self.fps, data=data, flags=[*self.flags, *new_flags])


@dataclass
class Template:
    landmark_ids: tuple[int, ...]
    coords: np.ndarray
    scope: str = "global"

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if len(set(self.landmark_ids)) != len(self.landmark_ids):
            raise ValueError(f"Template ids must be distinct: {self.landmark_ids!r}")
        if self.coords.shape != (len(self.landmark_ids), 2) or not np.all(np.isfinite(self.coords)):
            raise ValueError("Template coordinates must be finite (n_ids, 2)")

    @property
    def centroid(self) -> np.ndarray:
        return self.coords.mean(axis=0)


@dataclass
class HeadPose:
    """Head displacement from the template: P(q) = S R(theta) (q - c) + c + t."""
    tx: float = 0.0
    ty: float = 0.0
    theta: float = 0.0
    sx: float = 1.0
    sy: float = 1.0
    residual: float = 0.0

    @classmethod
    def missing(cls) -> "HeadPose":
        nan = float("nan")
        return cls(nan, nan, nan, nan, nan, nan)

    @property
    def is_missing(self) -> bool:
        return math.isnan(self.tx)

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def apply(self, points: np.ndarray, centre: np.ndarray) -> np.ndarray:
        """Map template-frame points to image-frame points."""
        m = np.diag([self.sx, self.sy]) @ self.rotation()
        return (points - centre) @ m.T + centre + np.array([self.tx, self.ty])

    def invert(self, points: np.ndarray, centre: np.ndarray) -> np.ndarray:
        """Map image-frame points back onto the template frame."""
        inv = self.rotation().T @ np.diag([1.0 / self.sx, 1.0 / self.sy])
        return (points - centre - np.array([self.tx, self.ty])) @ inv.T + centre


@dataclass
class SummaryStats:
    rms: float
    mean: float
    sd: float
    median: float
    min: float
    max: float
    p25: float
    p75: float
    ac1: float
    flags: tuple[str, ...] = ()

    STAT_NAMES = ("rms", "mean", "sd", "median", "min", "max", "p25", "p75", "ac1")

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in self.STAT_NAMES}


# Columns emitted per analysed channel; lmax only feeds divergence.
RQA_COLUMNS = ("rr", "det", "l_mean", "l_sd", "entropy", "complexity", "divergence", "trend", "lam", "tt", "vmax")


@dataclass
class RqaMetrics:
    rr: float = 0.0
    det: float = 0.0
    l_mean: float = 0.0
    l_sd: float = 0.0
    lmax: int = 0
    entropy: float = 0.0
    complexity: float = 0.0
    divergence: float = 0.0
    trend: float = 0.0
    lam: float = 0.0
    tt: float = 0.0
    vmax: int = 0
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in RQA_COLUMNS}

    def values(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "flags"}


@dataclass
class Event:
    t: float
    subtask: str
    kind: str
    payload: dict[str, str] = field(default_factory=dict)

    def flag(self, key: str) -> bool:
        return self.payload.get(key, "0").strip().lower() in ("1", "true", "yes")


@dataclass
class PerfWindow:
    window_index: int
    start: float
    end: float
    tracking_acc: float | None = None
    resman_acc: float | None = None
    sysmon_acc: float | None = None
    comms_acc: float | None = None
    sysmon_rt: float | None = None
    comms_rt: float | None = None


@dataclass
class EvalReport:
    balanced_accuracy: float
    weighted_f1: float
    kappa: float
    precision: dict[str, float]
    recall: dict[str, float]
    f1: dict[str, float]
    confusion: np.ndarray
    labels: tuple[str, ...]
    n_test: int = 0

    def as_row(self) -> dict[str, float]:
        row = {
            "balanced_accuracy": self.balanced_accuracy,
            "weighted_f1": self.weighted_f1,
            "kappa": self.kappa,
            "n_test": self.n_test,
        }
        for label in self.labels:
            row[f"precision__{label}"] = self.precision[label]
            row[f"recall__{label}"] = self.recall[label]
            row[f"f1__{label}"] = self.f1[label]
        return row


@dataclass(frozen=True)
class Recording:
    """One input file laid out as <participant>/<session>_<condition>.<ext>."""
    participant: str
    session: str
    condition: str
    path: str

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.participant, self.session, self.condition)
