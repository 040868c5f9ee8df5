"""Template construction and per-frame anisotropic Procrustes superimposition.

The pose of a frame is the transform that carries the template onto it:

    P(q) = diag(sx, sy) . R(theta) . (q - c) + c + t

where c is the template centroid. Alignment maps every landmark of the frame through P^-1,
so the aligned reference points land on the template.
"""

import logging
import math
from dataclasses import dataclass
import numpy as np
from scipy.optimize import least_squares

from src.errors import DegenerateConfiguration, NoValidSamples
from src.models import HeadPose, KeypointSeries, Template

logger = logging.getLogger(__name__)

EXACT_RESIDUAL = 1e-12
RANK_TOL = 1e-12
FLAG_DEGENERATE = "degenerate_frame"


@dataclass
class HeadChannels:
    translation_x: np.ndarray
    translation_y: np.ndarray
    translation_mag: np.ndarray
    rotation: np.ndarray
    scale_x: np.ndarray
    scale_y: np.ndarray
    head_motion_mag: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        """Feature channel names used in column headers."""
        return {
            "tx": self.translation_x,
            "ty": self.translation_y,
            "t_mag": self.translation_mag,
            "rotation": self.rotation,
            "sx": self.scale_x,
            "sy": self.scale_y,
            "head_motion_mag": self.head_motion_mag,
        }


def build_template(series_collection: list[KeypointSeries], ids: tuple[int, ...], scope: str = "global") -> Template:
    """Per-id mean over every non-missing frame pooled across the collection."""
    coords = np.zeros((len(ids), 2))
    for k, lid in enumerate(ids):
        total = np.zeros(2)
        count = 0
        for series in series_collection:
            pts = series.xy[:, lid, :]
            ok = np.all(np.isfinite(pts), axis=1)
            total += pts[ok].sum(axis=0)
            count += int(ok.sum())
        if count == 0:
            raise NoValidSamples(f"Landmark {lid} has no valid samples for the {scope} template")
        coords[k] = total / count
    return Template(landmark_ids=tuple(ids), coords=coords, scope=scope)


def _wrap_angle(theta: float) -> float:
    theta = math.atan2(math.sin(theta), math.cos(theta))
    return math.pi if theta <= -math.pi else theta


def _predict(params: np.ndarray, q: np.ndarray) -> np.ndarray:
    theta, sx, sy = params
    c, s = math.cos(theta), math.sin(theta)
    rot = q @ np.array([[c, -s], [s, c]]).T
    return rot * np.array([sx, sy])


def procrustes_fit(frame_pts: np.ndarray, template: Template, all_points: np.ndarray | None = None) -> tuple[HeadPose, np.ndarray | None]:
    """Least-squares (t, theta, sx, sy) carrying the template onto the frame's reference points.

    Translation comes from centroid matching. Rotation and scales start from the
    unconstrained linear fit and are refined by Levenberg-Marquardt when that fit
    is not already a rotation-times-diagonal-scale. Returns the pose and, when
    `all_points` (70 x 2) is given, those points mapped onto the template frame.
    """
    f = np.asarray(frame_pts, dtype=float)
    if f.shape != template.coords.shape or not np.all(np.isfinite(f)):
        raise DegenerateConfiguration("Reference points missing or malformed")
    centre = template.centroid
    q = template.coords - centre
    fc = f - f.mean(axis=0)
    t = f.mean(axis=0) - centre

    if np.linalg.matrix_rank(q, tol=RANK_TOL) < 2:
        raise DegenerateConfiguration("Template reference points are collinear or coincident")
    if np.linalg.matrix_rank(fc, tol=RANK_TOL * max(1.0, float(np.abs(fc).max()))) < 2:
        raise DegenerateConfiguration("Frame reference points are collinear or coincident")

    # Unconstrained linear map M with fc ~= q M^T.
    m = np.linalg.lstsq(q, fc, rcond=None)[0].T
    theta = math.atan2(-m[0, 1], m[0, 0])
    sx = float(np.hypot(m[0, 0], m[0, 1]))
    sy = float(m[1] @ np.array([math.sin(theta), math.cos(theta)]))
    params = np.array([theta, sx, sy])

    resid = _predict(params, q) - fc
    if float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1)))) >= EXACT_RESIDUAL:
        if sy <= 0:
            params[2] = sx
        sol = least_squares(lambda p: (_predict(p, q) - fc).ravel(), params, method="lm", xtol=1e-15, ftol=1e-15)
        params = sol.x
    theta, sx, sy = float(params[0]), float(params[1]), float(params[2])
    if sx <= 0 or sy <= 0:
        raise DegenerateConfiguration(f"Fit requires a reflection (sx={sx:.3g}, sy={sy:.3g})")

    resid = _predict(params, q) - fc
    pose = HeadPose(
        tx=float(t[0]),
        ty=float(t[1]),
        theta=_wrap_angle(theta),
        sx=sx,
        sy=sy,
        residual=float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1)))),
    )
    aligned = pose.invert(np.asarray(all_points, dtype=float), centre) if all_points is not None else None
    return pose, aligned


def align_series(series: KeypointSeries, template: Template) -> tuple[KeypointSeries, list[HeadPose]]:
    """Fit every frame. Frames with missing or degenerate reference points become missing."""
    ids = list(template.landmark_ids)
    data = np.full_like(series.data, np.nan)
    data[:, :, 2] = series.data[:, :, 2]
    poses = []
    n_degenerate = 0
    for i in range(series.length):
        ref = series.xy[i, ids, :]
        if not np.all(np.isfinite(ref)):
            poses.append(HeadPose.missing())
            continue
        try:
            pose, aligned = procrustes_fit(ref, template, series.xy[i])
        except DegenerateConfiguration as e:
            logger.warning("Frame %d skipped: %s", i, e)
            n_degenerate += 1
            poses.append(HeadPose.missing())
            continue
        data[i, :, :2] = aligned
        poses.append(pose)
    flags = [f"{FLAG_DEGENERATE}:{n_degenerate}"] if n_degenerate else []
    return series.with_data(data, *flags), poses


def head_channels(pose_series: list[HeadPose]) -> HeadChannels:
    if not pose_series:
        raise ValueError("Pose series is empty")
    arr = np.array([(p.tx, p.ty, p.theta, p.sx, p.sy) for p in pose_series], dtype=float)
    tx, ty, theta, sx, sy = arr.T
    return HeadChannels(
        translation_x=tx,
        translation_y=ty,
        translation_mag=np.sqrt(tx ** 2 + ty ** 2),
        rotation=theta,
        scale_x=sx,
        scale_y=sy,
        head_motion_mag=np.sqrt(tx ** 2 + ty ** 2 + (sx - 1) ** 2 + (sy - 1) ** 2),
    )


def save_template(template: Template, path: str) -> None:
    """Text format: a scope header, then one `id x y` line per reference landmark."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# scope={template.scope}\n")
        for lid, (x, y) in zip(template.landmark_ids, template.coords):
            fh.write(f"{lid} {float(x)!r} {float(y)!r}\n")


def load_template(path: str) -> Template:
    scope = "global"
    ids, coords = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# scope="):
                    scope = line.split("=", 1)[1]
                continue
            lid, x, y = line.split()
            ids.append(int(lid))
            coords.append((float(x), float(y)))
    return Template(landmark_ids=tuple(ids), coords=np.array(coords), scope=scope)
