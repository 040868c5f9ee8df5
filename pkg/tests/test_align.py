"""Unit tests for template construction and per-frame Procrustes superimposition."""

import math
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.align import (
    FLAG_DEGENERATE,
    align_series,
    build_template,
    head_channels,
    load_template,
    procrustes_fit,
    save_template,
)
from src.errors import DegenerateConfiguration, NoValidSamples
from src.models import HeadPose, Template
from src.schemas import LandmarkMap
from src.synth import base_face
from tests.conftest import make_series

REF_IDS = list(LandmarkMap().template_ids)
REF_TEMPLATE = Template(landmark_ids=tuple(REF_IDS), coords=base_face()[REF_IDS])


@settings(max_examples=60, deadline=None)
@given(
    tx=st.floats(-200, 200),
    ty=st.floats(-200, 200),
    theta=st.floats(-1.2, 1.2),
    sx=st.floats(0.5, 2.0),
    sy=st.floats(0.5, 2.0),
)
def test_fit_recovers_exact_pose(tx, ty, theta, sx, sy):
    template = REF_TEMPLATE
    truth = HeadPose(tx=tx, ty=ty, theta=theta, sx=sx, sy=sy)
    frame = truth.apply(template.coords, template.centroid)
    pose, _ = procrustes_fit(frame, template)
    assert pose.tx == pytest.approx(tx, abs=1e-6)
    assert pose.ty == pytest.approx(ty, abs=1e-6)
    assert pose.theta == pytest.approx(theta, abs=1e-6)
    assert pose.sx == pytest.approx(sx, abs=1e-6)
    assert pose.sy == pytest.approx(sy, abs=1e-6)
    assert pose.residual < 1e-12


def test_fit_recovers_a_thousand_random_poses():
    rng = np.random.default_rng(17)
    template = REF_TEMPLATE
    worst_param, worst_residual = 0.0, 0.0
    for _ in range(1000):
        truth = HeadPose(
            tx=rng.uniform(-200, 200), ty=rng.uniform(-200, 200), theta=rng.uniform(-1.2, 1.2),
            sx=rng.uniform(0.5, 2.0), sy=rng.uniform(0.5, 2.0),
        )
        pose, _ = procrustes_fit(truth.apply(template.coords, template.centroid), template)
        errors = [abs(getattr(pose, k) - getattr(truth, k)) for k in ("tx", "ty", "theta", "sx", "sy")]
        worst_param = max(worst_param, *errors)
        worst_residual = max(worst_residual, pose.residual)
    assert worst_param < 1e-6
    assert worst_residual < 1e-12


def test_template_onto_itself_is_identity(template):
    pose, _ = procrustes_fit(template.coords, template)
    assert pose.tx == pytest.approx(0, abs=1e-9)
    assert pose.theta == pytest.approx(0, abs=1e-9)
    assert pose.sx == pytest.approx(1) and pose.sy == pytest.approx(1)


def test_aligned_points_land_on_template(template, face):
    truth = HeadPose(tx=40.0, ty=-15.0, theta=0.2, sx=1.1, sy=0.95)
    moved = truth.apply(face, template.centroid)
    _, aligned = procrustes_fit(moved[list(template.landmark_ids)], template, moved)
    np.testing.assert_allclose(aligned, face, atol=1e-6)


def test_noisy_fit_uses_least_squares(template):
    rng = np.random.default_rng(0)
    truth = HeadPose(tx=5.0, ty=3.0, theta=-0.1, sx=1.2, sy=0.9)
    frame = truth.apply(template.coords, template.centroid) + rng.normal(0, 0.5, template.coords.shape)
    pose, _ = procrustes_fit(frame, template)
    assert pose.theta == pytest.approx(-0.1, abs=0.02)
    assert pose.sx == pytest.approx(1.2, abs=0.02)
    assert pose.residual > 0


def test_collinear_frame_is_degenerate(template):
    n = len(template.landmark_ids)
    frame = np.column_stack([np.arange(n, dtype=float), np.zeros(n)])
    with pytest.raises(DegenerateConfiguration, match="collinear"):
        procrustes_fit(frame, template)


def test_mirrored_frame_is_rejected(template):
    c = template.centroid
    frame = template.coords.copy()
    frame[:, 0] = 2 * c[0] - frame[:, 0]
    with pytest.raises(DegenerateConfiguration, match="reflection"):
        procrustes_fit(frame, template)


def test_align_series_marks_bad_frames_missing(template, face):
    xy = np.repeat(face[None], 4, axis=0)
    xy[1, list(template.landmark_ids)[0]] = np.nan
    xy[2, list(template.landmark_ids), 1] = 100.0
    aligned, poses = align_series(make_series(xy), template)
    assert poses[1].is_missing and poses[2].is_missing
    assert not poses[0].is_missing and not poses[3].is_missing
    assert aligned.missing[1].all() and aligned.missing[2].all()
    assert aligned.flags == [f"{FLAG_DEGENERATE}:1"]
    np.testing.assert_allclose(aligned.xy[3], face, atol=1e-6)


def test_head_channels():
    poses = [HeadPose(tx=3.0, ty=4.0, theta=0.1, sx=1.0, sy=1.0), HeadPose.missing()]
    ch = head_channels(poses)
    assert ch.translation_mag[0] == pytest.approx(5.0)
    assert ch.head_motion_mag[0] == pytest.approx(5.0)
    assert math.isnan(ch.rotation[1])
    assert list(ch.as_dict()) == ["tx", "ty", "t_mag", "rotation", "sx", "sy", "head_motion_mag"]


def test_head_channels_empty():
    with pytest.raises(ValueError):
        head_channels([])


def test_build_template_pools_non_missing_frames(face, landmarks):
    ids = landmarks.template_ids
    xy = np.repeat(face[None], 3, axis=0)
    xy[1] += 6.0
    xy[2, ids[0]] = np.nan
    template = build_template([make_series(xy), make_series(np.repeat(face[None], 1, axis=0))], ids)
    np.testing.assert_allclose(template.coords[0], face[ids[0]] + 2.0)
    np.testing.assert_allclose(template.coords[1], face[ids[1]] + 1.5)


def test_build_template_without_samples(face, landmarks):
    xy = np.repeat(face[None], 2, axis=0)
    xy[:, landmarks.template_ids[0]] = np.nan
    with pytest.raises(NoValidSamples):
        build_template([make_series(xy)], landmarks.template_ids, scope="P01")


def test_template_file_keeps_scope_and_coords(tmp_path, template):
    path = tmp_path / "template.txt"
    save_template(Template(template.landmark_ids, template.coords, scope="P03"), str(path))
    loaded = load_template(str(path))
    assert loaded.scope == "P03"
    assert loaded.landmark_ids == template.landmark_ids
    np.testing.assert_array_equal(loaded.coords, template.coords)
