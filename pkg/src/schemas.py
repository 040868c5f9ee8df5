import hashlib
import json
import os
from typing import Literal, Optional
from pydantic import BaseModel, Field, field_validator, model_validator

N_LANDMARKS = 70
CONDITIONS = ("Low", "Moderate", "High")
SESSIONS = ("baseline", "experimental")
STABILIZATION_MODES = ("global", "per-participant", "none")
FEATURE_SETS = ("performance", "kinematic", "rqa", "pose", "combined", "all")


def _validate_landmark_id(v: int) -> int:
    if not 0 <= v < N_LANDMARKS:
        raise ValueError(f"Invalid landmark id: {v!r}; expected 0..{N_LANDMARKS - 1}")
    return v


class LandmarkMap(BaseModel):
    """Which face-model landmarks feed each feature.

    Defaults use the ids as written for the 70-point face model, with the two
    pupils at 68 (left) and 69 (right). `one_based()` shifts every id by -1.
    """

    template_ids: tuple[int, int, int, int] = (30, 31, 37, 46)
    left_upper_lid: tuple[int, ...] = (38, 39)
    left_lower_lid: tuple[int, ...] = (41, 42)
    right_upper_lid: tuple[int, ...] = (44, 45)
    right_lower_lid: tuple[int, ...] = (47, 48)
    left_eye: tuple[int, ...] = (37, 38, 39, 40, 41, 42)
    right_eye: tuple[int, ...] = (43, 44, 45, 46, 47, 48)
    mouth_upper: int = 63
    mouth_lower: int = 67
    left_pupil: int = 68
    right_pupil: int = 69

    @field_validator(
        "template_ids", "left_upper_lid", "left_lower_lid", "right_upper_lid",
        "right_lower_lid", "left_eye", "right_eye",
    )
    @classmethod
    def validate_groups(cls, v):
        if len(v) == 0:
            raise ValueError("Landmark group cannot be empty")
        for i in v:
            _validate_landmark_id(i)
        return v

    @field_validator("mouth_upper", "mouth_lower", "left_pupil", "right_pupil")
    @classmethod
    def validate_single(cls, v):
        return _validate_landmark_id(v)

    @field_validator("template_ids")
    @classmethod
    def validate_template_distinct(cls, v):
        if len(set(v)) != 4:
            raise ValueError(f"Template ids must be 4 distinct landmarks, got {v!r}")
        return v

    @classmethod
    def one_based(cls) -> "LandmarkMap":
        return cls(
            template_ids=(29, 30, 36, 45),
            left_upper_lid=(37, 38),
            left_lower_lid=(40, 41),
            right_upper_lid=(43, 44),
            right_lower_lid=(46, 47),
            left_eye=tuple(range(36, 42)),
            right_eye=tuple(range(42, 48)),
            mouth_upper=62,
            mouth_lower=66,
            left_pupil=68,
            right_pupil=69,
        )

    def referenced_ids(self) -> list[int]:
        ids = set(self.template_ids)
        for group in (self.left_upper_lid, self.left_lower_lid, self.right_upper_lid,
                      self.right_lower_lid, self.left_eye, self.right_eye):
            ids.update(group)
        ids.update((self.mouth_upper, self.mouth_lower, self.left_pupil, self.right_pupil))
        return sorted(ids)


class PreprocessConfig(BaseModel):
    conf_threshold: float = Field(default=0.30, ge=0, le=1)
    max_gap: int = Field(default=60, ge=0)
    filter_order: int = Field(default=4, ge=1, le=10)
    cutoff: float = Field(default=10.0, gt=0)
    screen_w: float = Field(default=2560, gt=0)
    screen_h: float = Field(default=1440, gt=0)
    padlen: Optional[int] = Field(default=None, ge=0)      # None = 3 * (order + 1)
    min_segment: Optional[int] = Field(default=None, ge=1)  # None = padlen + 1

    @property
    def effective_padlen(self) -> int:
        return self.padlen if self.padlen is not None else 3 * (self.filter_order + 1)

    @property
    def effective_min_segment(self) -> int:
        return self.min_segment if self.min_segment is not None else self.effective_padlen + 1


class EmbeddingParams(BaseModel):
    tau: int = Field(default=20, ge=1)
    m: int = Field(default=4, ge=1)


class RqaConfig(BaseModel):
    radius_frac: float = Field(default=0.20, gt=0)
    theiler: int = Field(default=2, ge=0)          # auto mode: cells with |i-j| < theiler excluded
    cross_theiler: int = Field(default=0, ge=0)    # same rule, applied to cross plots
    l_min: int = Field(default=4, ge=2)
    v_min: int = Field(default=4, ge=2)
    rr_exclude_theiler: bool = True
    complexity_max: Literal["realizable", "observed"] = "realizable"
    min_window_warn: int = Field(default=1000, ge=1)
    block_rows: int = Field(default=1024, ge=1)

    @classmethod
    def cross_default(cls) -> "RqaConfig":
        return cls(radius_frac=0.30)


class AmiConfig(BaseModel):
    max_lag: int = Field(default=100, ge=1)
    n_bins: int = Field(default=16, ge=2)
    plateau_tol: float = Field(default=0.02, gt=0)
    plateau_len: int = Field(default=5, ge=1)


class FnnConfig(BaseModel):
    max_m: int = Field(default=10, ge=1)
    rtol: float = Field(default=15.0, gt=0)
    atol: float = Field(default=2.0, gt=0)
    threshold: float = Field(default=0.01, gt=0, lt=1)


class WindowSpec(BaseModel):
    length_s: float = Field(default=60.0, gt=0)
    overlap: float = Field(default=0.5, ge=0, lt=1)
    fps: float = Field(default=60.0, gt=0)

    @model_validator(mode="after")
    def validate_integral(self):
        n = self.length_s * self.fps
        if abs(n - round(n)) > 1e-9:
            raise ValueError(f"Window length {self.length_s}s at {self.fps} Hz is not a whole number of samples")
        if self.hop < 1:
            raise ValueError("Window hop must be at least one sample")
        return self

    @property
    def length(self) -> int:
        return int(round(self.length_s * self.fps))

    @property
    def hop(self) -> int:
        return int(round(self.length * (1 - self.overlap)))

    @property
    def hop_s(self) -> float:
        return self.hop / self.fps


class ForestConfig(BaseModel):
    n_trees: int = Field(default=300, ge=1)
    class_weighting: Literal["balanced"] = "balanced"
    max_depth: Optional[int] = Field(default=None, ge=1)
    features_per_split: Literal["sqrt"] = "sqrt"
    bootstrap: bool = True
    seed: int = 0


class FeatureSelectConfig(BaseModel):
    var_threshold: float = Field(default=1e-8, gt=0)
    corr_threshold: float = Field(default=0.95, gt=0, le=1)
    elim_fraction: float = Field(default=0.20, gt=0, lt=1)
    min_features: int = Field(default=5, ge=1)
    perm_repeats: int = Field(default=3, ge=1)
    cv_folds: int = Field(default=5, ge=2)
    tolerance: float = Field(default=0.005, ge=0)   # balanced-accuracy fraction (0.5 pt)


class LearningCurveConfig(BaseModel):
    train_sizes: list[int] = Field(default_factory=lambda: list(range(2, 12)))
    buffer: int = Field(default=1, ge=1)
    seeds_per_point: int = Field(default=10, ge=1)
    include_baseline: bool = False
    baseline_windows_per_condition: int = Field(default=3, ge=1)

    @field_validator("train_sizes")
    @classmethod
    def validate_sizes(cls, v):
        if not v:
            raise ValueError("train_sizes cannot be empty")
        if any(s < 0 for s in v):
            raise ValueError(f"train_sizes must be non-negative, got {v!r}")
        return sorted(set(v))


class HarnessConfig(BaseModel):
    split_seeds: list[int] = Field(default_factory=lambda: list(range(15)))
    lopo_seeds_per_participant: int = Field(default=15, ge=1)
    test_size: float = Field(default=0.2, gt=0, lt=1)
    feature_set: Literal["performance", "kinematic", "rqa", "pose", "combined", "all"] = "all"
    select_features: bool = True

    @field_validator("split_seeds")
    @classmethod
    def validate_seeds(cls, v):
        if not v:
            raise ValueError("split_seeds cannot be empty")
        return v


class RegimeSegment(BaseModel):
    n: int = Field(gt=0)
    spec: "RegimeSpec"


class RegimeSpec(BaseModel):
    kind: Literal["sine", "sum-of-sines", "ar1", "white-noise", "switching"] = "sine"
    amplitude: float = 1.0
    frequency: float = Field(default=1.0, ge=0)
    frequencies: list[float] = Field(default_factory=lambda: [1.0, 1.618])
    phase: float = 0.0
    ar_coef: float = Field(default=0.0, gt=-1, lt=1)
    noise_sd: float = Field(default=1.0, ge=0)      # innovation sd for ar1 and white-noise
    jitter_sd: float = Field(default=0.0, ge=0)     # white noise added to sine kinds
    schedule: list[RegimeSegment] = Field(default_factory=list)
    seed: int = 0

    @model_validator(mode="after")
    def validate_schedule(self):
        if self.kind == "switching" and not self.schedule:
            raise ValueError("A switching regime needs a non-empty schedule")
        return self


RegimeSegment.model_rebuild()
RegimeSpec.model_rebuild()


# RunConfig fields read by the preprocess stage, and fields only the harnesses read
PREPROCESS_FIELDS = {"keypoints_dir", "fps", "landmarks", "preprocess"}
EVALUATION_FIELDS = {"forest", "select", "learning_curve", "harness"}


class RunConfig(BaseModel):
    keypoints_dir: str
    events_dir: Optional[str] = None
    output_dir: str
    fps: float = Field(default=60.0, gt=0)
    stabilization: Literal["global", "per-participant", "none"] = "global"
    landmarks: LandmarkMap = Field(default_factory=LandmarkMap)
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    window: WindowSpec = Field(default_factory=WindowSpec)
    embedding: EmbeddingParams = Field(default_factory=EmbeddingParams)
    rqa: RqaConfig = Field(default_factory=RqaConfig)
    rqa_cross: RqaConfig = Field(default_factory=RqaConfig.cross_default)
    ami: AmiConfig = Field(default_factory=AmiConfig)
    fnn: FnnConfig = Field(default_factory=FnnConfig)
    rqa_channels: list[str] = Field(
        default_factory=lambda: ["blink", "mouth", "pupil_x", "pupil_y", "tx", "ty"]
    )
    crqa_pairs: list[tuple[str, str]] = Field(default_factory=lambda: [("tx", "pupil_x")])
    estimate_embedding: bool = False
    forest: ForestConfig = Field(default_factory=ForestConfig)
    select: FeatureSelectConfig = Field(default_factory=FeatureSelectConfig)
    learning_curve: LearningCurveConfig = Field(default_factory=LearningCurveConfig)
    harness: HarnessConfig = Field(default_factory=HarnessConfig)

    @model_validator(mode="after")
    def validate_run(self):
        if not os.path.isdir(self.keypoints_dir):
            raise ValueError(f"Keypoints directory does not exist: {self.keypoints_dir!r}")
        if self.events_dir is not None and not os.path.isdir(self.events_dir):
            raise ValueError(f"Event-log directory does not exist: {self.events_dir!r}")
        if self.preprocess.cutoff >= self.fps / 2:
            raise ValueError(
                f"Filter cutoff {self.preprocess.cutoff} Hz must be below Nyquist ({self.fps / 2} Hz)"
            )
        if abs(self.window.fps - self.fps) > 1e-9:
            raise ValueError(f"Window fps {self.window.fps} does not match run fps {self.fps}")
        return self

    def semantic_hash(self, stage: Optional[str] = None) -> str:
        """Hash of every field that changes results (output location excluded).

        With a stage name, only the fields that stage reads: "preprocess" or "features".
        """
        if stage is None:
            payload = self.model_dump(mode="json", exclude={"output_dir"})
        elif stage == "preprocess":
            payload = self.model_dump(mode="json", include=PREPROCESS_FIELDS)
        elif stage == "features":
            payload = self.model_dump(mode="json", exclude={"output_dir"} | EVALUATION_FIELDS)
        else:
            raise ValueError(f"Unknown stage {stage!r}")
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()
