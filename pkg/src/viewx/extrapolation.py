"""How far a query camera sits outside a set of training cameras.

The degree is the distance from the query to the training centroid divided by
the training set's extent along that same direction. It is invariant to rigid
motions and to uniform rescaling (SfM reconstructions carry an arbitrary
scale), and a value above 1 places the query outside the convex hull of the
training centers. Splits for extrapolation benchmarks are built by greedily
holding out the views with the largest degree.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateViewSetError, UndefinedDirectionError
from .geometry import CameraPose

DEFAULT_MAX_ANGLE = math.radians(30.0)


@dataclasses.dataclass(frozen=True)
class ViewSet:
    """Camera centers plus unit viewing directions of the training views."""

    centers: np.ndarray
    directions: np.ndarray

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64)
        directions = np.asarray(self.directions, dtype=np.float64)
        if centers.ndim != 2 or centers.shape[1] != 3 or centers.shape[0] < 1:
            raise ConfigError(f"centers must be (N, 3) with N >= 1, got {centers.shape}")
        if directions.shape != centers.shape:
            raise ConfigError("directions must match centers in shape")
        norms = np.linalg.norm(directions, axis=1)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ConfigError("directions must be unit vectors within 1e-6")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "directions", directions)

    @classmethod
    def from_poses(cls, poses) -> "ViewSet":
        centers = np.stack([p.center for p in poses])
        directions = np.stack([p.optical_axis for p in poses])
        return cls(centers=centers, directions=directions)

    def __len__(self):
        return len(self.centers)

    def without(self, index: int) -> "ViewSet":
        keep = np.arange(len(self)) != index
        return ViewSet(centers=self.centers[keep], directions=self.directions[keep])


@dataclasses.dataclass(frozen=True)
class ExtrapolationReport:
    offset: np.ndarray      # centroid minus query
    spread: float           # training extent along the offset direction
    degree: float
    direction_angle: float  # radians between query axis and mean training axis


def centroid_offset(train: ViewSet, query: np.ndarray) -> np.ndarray:
    """Mean training center minus the query position."""
    return train.centers.mean(axis=0) - np.asarray(query, dtype=np.float64)


def training_range(train: ViewSet, offset: np.ndarray) -> float:
    """Extent of the training centers projected on the offset direction."""
    offset = np.asarray(offset, dtype=np.float64)
    norm = float(np.linalg.norm(offset))
    if norm == 0:
        raise UndefinedDirectionError("offset direction has zero length")
    proj = train.centers @ (offset / norm)
    return float(proj.max() - proj.min())


def _mean_direction_angle(train: ViewSet, axis: np.ndarray) -> float:
    mean_dir = train.directions.mean(axis=0)
    norm = float(np.linalg.norm(mean_dir))
    if norm < 1e-12:
        # Training axes cancel out; report the worst angle rather than guess.
        return math.pi
    cosang = float(np.dot(mean_dir / norm, np.asarray(axis, dtype=np.float64)))
    return math.acos(max(-1.0, min(1.0, cosang)))


def extrapolation_degree(train: ViewSet, query_pose: CameraPose) -> ExtrapolationReport:
    """Degree of the query view plus the supporting quantities."""
    offset = centroid_offset(train, query_pose.center)
    dist = float(np.linalg.norm(offset))
    angle = _mean_direction_angle(train, query_pose.optical_axis)
    if dist == 0:
        return ExtrapolationReport(offset=offset, spread=0.0, degree=0.0, direction_angle=angle)
    spread = training_range(train, offset)
    if spread == 0:
        raise DegenerateViewSetError(
            "training centers are coincident along the query direction, degree is unbounded"
        )
    return ExtrapolationReport(
        offset=offset, spread=spread, degree=dist / spread, direction_angle=angle
    )


@dataclasses.dataclass(frozen=True)
class SplitResult:
    train: tuple
    test: tuple
    degree_by_view: dict
    note: str | None = None


def _pose_like(views: ViewSet, index: int) -> CameraPose:
    # Build a pose whose center/axis match view ``index`` for degree queries.
    axis = views.directions[index]
    # Any orthonormal completion works; the degree only uses center and axis.
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, axis)
    x /= np.linalg.norm(x)
    y = np.cross(axis, x)
    rot = np.stack([x, y, axis], axis=1)
    return CameraPose(rotation=rot, translation=views.centers[index])


def build_split(
    views: ViewSet,
    e_threshold: float,
    max_test: int,
    max_angle: float = DEFAULT_MAX_ANGLE,
) -> SplitResult:
    """Greedy extrapolative split: repeatedly hold out the highest-degree view.

    Each round scores every remaining view against the others (leave one
    out), skips candidates whose viewing direction strays more than
    ``max_angle`` from the rest, and removes the highest scorer while it
    exceeds ``e_threshold`` (ties pick the lowest index). Views whose removal
    would leave a degenerate training set are never selected. Returns train
    and test index tuples plus a leave-one-out degree for every view.
    """
    if len(views) < 3:
        raise ConfigError(f"need at least 3 views to build a split, got {len(views)}")
    if max_test < 0:
        raise ConfigError("max_test must be >= 0")

    remaining = list(range(len(views)))
    test = []

    def candidate_degree(pool, idx, check_angle=True):
        rest = ViewSet(
            centers=views.centers[[i for i in pool if i != idx]],
            directions=views.directions[[i for i in pool if i != idx]],
        )
        try:
            report = extrapolation_degree(rest, _pose_like(views, idx))
        except DegenerateViewSetError:
            return None
        if check_angle and report.direction_angle > max_angle:
            return None
        return report.degree

    while len(test) < max_test and len(remaining) > 2:
        best_idx, best_e = None, None
        for idx in remaining:
            degree = candidate_degree(remaining, idx)
            if degree is None or degree <= e_threshold:
                continue
            if best_e is None or degree > best_e:
                best_idx, best_e = idx, degree
        if best_idx is None:
            break
        test.append(best_idx)
        remaining.remove(best_idx)

    degree_by_view = {}
    train_set = ViewSet(centers=views.centers[remaining], directions=views.directions[remaining])
    for idx in range(len(views)):
        if idx in remaining:
            degree_by_view[idx] = candidate_degree(remaining, idx, check_angle=False)
        else:
            try:
                degree_by_view[idx] = extrapolation_degree(
                    train_set, _pose_like(views, idx)
                ).degree
            except DegenerateViewSetError:
                degree_by_view[idx] = None

    note = None
    if not test:
        note = (
            f"no view exceeds e_threshold={e_threshold} within the "
            f"{math.degrees(max_angle):.1f} degree direction limit"
        )
    return SplitResult(
        train=tuple(remaining), test=tuple(test), degree_by_view=degree_by_view, note=note
    )


def save_split_json(path, result: SplitResult):
    doc = {
        "train": list(result.train),
        "test": list(result.test),
        "e": {str(k): v for k, v in sorted(result.degree_by_view.items())},
    }
    if result.note:
        doc["note"] = result.note
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def save_degree_csv(path, result: SplitResult):
    """Per-view degree values, ready to histogram."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["view_index", "role", "e"])
        for idx in sorted(result.degree_by_view):
            role = "test" if idx in result.test else "train"
            value = result.degree_by_view[idx]
            writer.writerow([idx, role, "" if value is None else f"{value:.9g}"])
