import math
import numpy as np
import pytest

from src.models import FrameKeypoints, KeypointSeries, Template
from src.schemas import FeatureSelectConfig, ForestConfig, HarnessConfig, LandmarkMap, N_LANDMARKS
from src.synth import base_face


@pytest.fixture
def landmarks():
    return LandmarkMap()


@pytest.fixture
def face():
    """Neutral 70-point face in screen pixels."""
    return base_face()


@pytest.fixture
def template(face, landmarks):
    ids = landmarks.template_ids
    return Template(landmark_ids=ids, coords=face[list(ids)])


def make_series(xy: np.ndarray, fps: float = 60.0, conf: float = 0.9) -> KeypointSeries:
    """(frames, 70, 2) coordinates with a constant confidence."""
    data = np.empty((xy.shape[0], N_LANDMARKS, 3))
    data[:, :, :2] = xy
    data[:, :, 2] = conf
    return KeypointSeries(fps=fps, data=data)


@pytest.fixture
def static_series(face):
    """Two seconds of a motionless face."""
    return make_series(np.repeat(face[None], 120, axis=0))


def make_frame(index: int, value: float = 1.0, conf: float = 0.9) -> FrameKeypoints:
    points = np.full((N_LANDMARKS, 3), value)
    points[:, 2] = conf
    return FrameKeypoints(frame_index=index, points=points)


def canonical_record(index: int, value: float = 1.0, conf: float = 0.9) -> dict:
    values = []
    for _ in range(N_LANDMARKS):
        values += [value, value, conf]
    return {"frame": index, "face_keypoints_2d": values}


@pytest.fixture
def sine():
    t = np.arange(3600) / 60.0
    return np.sin(2 * math.pi * 0.5 * t)


@pytest.fixture
def small_forest():
    return ForestConfig(n_trees=40, seed=0)


@pytest.fixture
def fast_select():
    return FeatureSelectConfig(cv_folds=3, perm_repeats=2, min_features=3)


@pytest.fixture
def quick_harness():
    return HarnessConfig(split_seeds=[0, 1, 2], lopo_seeds_per_participant=2, select_features=False)
