"""Camera models, pose parsing, and trajectory interpolation.

Conventions: poses are camera-to-world, the camera looks along +z with x
right and y down (the usual SfM/OpenCV frame), and quaternions are stored
(w, x, y, z). Text reconstructions use the standard two-file layout: a
cameras file with intrinsics and an images file with one pose line plus one
observations line per view (the observations line is skipped here).
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError, UnsupportedModelError

_ORTHO_TOL = 1e-6


@dataclasses.dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}"
            )


@dataclasses.dataclass(frozen=True)
class CameraPose:
    """Rigid camera-to-world transform; translation is the camera center."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise DomainError(
                f"pose needs a 3x3 rotation and 3-vector, got {rot.shape}, {trans.shape}"
            )
        if np.abs(rot.T @ rot - np.eye(3)).max() > _ORTHO_TOL:
            raise DomainError("rotation is not orthonormal within 1e-6")
        if abs(np.linalg.det(rot) - 1.0) > _ORTHO_TOL:
            raise DomainError("rotation determinant is not +1 within 1e-6")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """World-space viewing direction (+z of the camera frame)."""
        return self.rotation[:, 2]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.translation) @ self.rotation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation


def identity_pose() -> CameraPose:
    return CameraPose(rotation=np.eye(3), translation=np.zeros(3))


@dataclasses.dataclass(frozen=True)
class Trajectory:
    poses: tuple
    frame_count: int

    def __post_init__(self):
        if self.frame_count != len(self.poses):
            raise DomainError("frame_count must equal the number of poses")


# -- quaternions ------------------------------------------------------------


def quat_to_rotmat(q) -> np.ndarray:
    w, x, y, z = (float(v) for v in q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotmat_to_quat(rot: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), w >= 0."""
    rot = np.asarray(rot, dtype=np.float64)
    trace = rot[0, 0] + rot[1, 1] + rot[2, 2]
    if trace > 0:
        s = math.sqrt(trace + 1.0) * 2
        q = np.array(
            [0.25 * s, (rot[2, 1] - rot[1, 2]) / s, (rot[0, 2] - rot[2, 0]) / s,
             (rot[1, 0] - rot[0, 1]) / s]
        )
    elif rot[0, 0] > rot[1, 1] and rot[0, 0] > rot[2, 2]:
        s = math.sqrt(1.0 + rot[0, 0] - rot[1, 1] - rot[2, 2]) * 2
        q = np.array(
            [(rot[2, 1] - rot[1, 2]) / s, 0.25 * s, (rot[0, 1] + rot[1, 0]) / s,
             (rot[0, 2] + rot[2, 0]) / s]
        )
    elif rot[1, 1] > rot[2, 2]:
        s = math.sqrt(1.0 + rot[1, 1] - rot[0, 0] - rot[2, 2]) * 2
        q = np.array(
            [(rot[0, 2] - rot[2, 0]) / s, (rot[0, 1] + rot[1, 0]) / s, 0.25 * s,
             (rot[1, 2] + rot[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + rot[2, 2] - rot[0, 0] - rot[1, 1]) * 2
        q = np.array(
            [(rot[1, 0] - rot[0, 1]) / s, (rot[0, 2] + rot[2, 0]) / s,
             (rot[1, 2] + rot[2, 1]) / s, 0.25 * s]
        )
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def slerp(qa, qb, alpha: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between unit quaternions."""
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    dot = float(np.dot(qa, qb))
    if dot < 0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-6:
        out = qa + alpha * (qb - qa)
        return out / np.linalg.norm(out)
    theta = math.acos(min(dot, 1.0))
    sin_theta = math.sin(theta)
    wa = math.sin((1.0 - alpha) * theta) / sin_theta
    wb = math.sin(alpha * theta) / sin_theta
    out = wa * qa + wb * qb
    return out / np.linalg.norm(out)


def make_trajectory(start: CameraPose, end: CameraPose, frames: int) -> Trajectory:
    """Interpolate rotation by slerp and center linearly; endpoints are exact."""
    if frames < 2:
        raise DomainError(f"a trajectory needs at least 2 frames, got {frames}")
    qa = rotmat_to_quat(start.rotation)
    qb = rotmat_to_quat(end.rotation)
    poses = [start]
    for k in range(1, frames - 1):
        alpha = k / (frames - 1)
        rot = quat_to_rotmat(slerp(qa, qb, alpha))
        # Re-orthonormalize so accumulated rounding stays within tolerance.
        u, _, vt = np.linalg.svd(rot)
        rot = u @ vt
        trans = (1.0 - alpha) * start.translation + alpha * end.translation
        poses.append(CameraPose(rotation=rot, translation=trans))
    poses.append(end)
    return Trajectory(poses=tuple(poses), frame_count=frames)


def nearest_training_view(train, target: CameraPose) -> int:
    """Index of the training pose whose center is closest; ties pick the lowest."""
    if not train:
        raise DomainError("training view list is empty")
    centers = np.stack([p.center for p in train])
    dist = np.linalg.norm(centers - target.center, axis=1)
    return int(np.argmin(dist))


# -- reconstruction text formats ---------------------------------------------


def _decode_lines(data):
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return data.splitlines()


def parse_colmap_cameras(data) -> list:
    """Parse a cameras.txt: CAMERA_ID MODEL WIDTH HEIGHT PARAMS[].

    Supports PINHOLE (fx fy cx cy) and SIMPLE_PINHOLE (f cx cy); any other
    model raises. Returns [(camera_id, CameraIntrinsics), ...] in file order.
    """
    out = []
    for lineno, line in enumerate(_decode_lines(data), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if len(toks) < 4:
            raise ParseError(f"camera line has {len(toks)} fields, expected >= 4", lineno)
        try:
            camera_id = int(toks[0])
            model = toks[1]
            width, height = int(toks[2]), int(toks[3])
            params = [float(v) for v in toks[4:]]
        except ValueError as exc:
            raise ParseError(f"bad camera field: {exc}", lineno) from None
        if model == "PINHOLE":
            if len(params) != 4:
                raise ParseError(f"PINHOLE expects 4 params, got {len(params)}", lineno)
            fx, fy, cx, cy = params
        elif model == "SIMPLE_PINHOLE":
            if len(params) != 3:
                raise ParseError(f"SIMPLE_PINHOLE expects 3 params, got {len(params)}", lineno)
            f, cx, cy = params
            fx = fy = f
        else:
            raise UnsupportedModelError(f"unsupported camera model {model}", lineno)
        try:
            intr = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)
        except DomainError as exc:
            raise ParseError(str(exc), lineno) from None
        out.append((camera_id, intr))
    return out


def parse_colmap_images(data) -> list:
    """Parse an images.txt into [(image_id, name, CameraPose), ...].

    Each record is two lines: ``ID QW QX QY QZ TX TY TZ CAMERA_ID NAME`` then
    a (possibly empty) 2-D observations line, which is skipped. The stored
    quaternion/translation map world to camera; the returned pose is
    camera-to-world with center -R^T t.
    """
    out = []
    expect_points_line = False
    last_pose_line = 0
    for lineno, line in enumerate(_decode_lines(data), start=1):
        stripped = line.strip()
        if expect_points_line:
            # Observations line; content (or emptiness) is irrelevant here.
            expect_points_line = False
            continue
        if not stripped or stripped.startswith("#"):
            continue
        toks = stripped.split()
        if len(toks) < 10:
            raise ParseError(f"image line has {len(toks)} fields, expected >= 10", lineno)
        try:
            image_id = int(toks[0])
            qvec = np.array([float(v) for v in toks[1:5]])
            tvec = np.array([float(v) for v in toks[5:8]])
            int(toks[8])  # camera id, validated but not needed for the pose
        except ValueError as exc:
            raise ParseError(f"bad image field: {exc}", lineno) from None
        name = " ".join(toks[9:])
        norm = float(np.linalg.norm(qvec))
        if norm < 1e-8:
            raise ParseError("quaternion norm is below 1e-8", lineno)
        rot_w2c = quat_to_rotmat(qvec / norm)
        center = -rot_w2c.T @ tvec
        out.append((image_id, name, CameraPose(rotation=rot_w2c.T, translation=center)))
        expect_points_line = True
        last_pose_line = lineno
    if expect_points_line:
        raise ParseError(
            "file ends after a pose line; every pose line needs an observations line",
            last_pose_line,
        )
    return out


def format_colmap_cameras(entries) -> str:
    lines = ["# Camera list: CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]"]
    for camera_id, intr in entries:
        lines.append(
            f"{camera_id} PINHOLE {intr.width} {intr.height} "
            f"{intr.fx:.17g} {intr.fy:.17g} {intr.cx:.17g} {intr.cy:.17g}"
        )
    return "\n".join(lines) + "\n"


def format_colmap_images(entries) -> str:
    """Inverse of parse_colmap_images (with empty observations lines)."""
    lines = ["# Image list: IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME"]
    for image_id, name, pose in entries:
        rot_w2c = pose.rotation.T
        tvec = -rot_w2c @ pose.translation
        q = rotmat_to_quat(rot_w2c)
        lines.append(
            f"{image_id} " + " ".join(f"{v:.17g}" for v in q) + " "
            + " ".join(f"{v:.17g}" for v in tvec) + f" 1 {name}"
        )
        lines.append("")
    return "\n".join(lines) + "\n"


# -- native pose JSON ---------------------------------------------------------


def pose_to_dict(pose: CameraPose) -> dict:
    return {
        "rotation": [float(v) for v in pose.rotation.reshape(-1)],
        "translation": [float(v) for v in pose.translation],
    }


def pose_from_dict(data: dict) -> CameraPose:
    rot = np.asarray(data["rotation"], dtype=np.float64).reshape(3, 3)
    return CameraPose(rotation=rot, translation=np.asarray(data["translation"], dtype=np.float64))


def intrinsics_to_dict(intr: CameraIntrinsics) -> dict:
    return dataclasses.asdict(intr)


def intrinsics_from_dict(data: dict) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=float(data["fx"]),
        fy=float(data["fy"]),
        cx=float(data["cx"]),
        cy=float(data["cy"]),
        width=int(data["width"]),
        height=int(data["height"]),
    )


def save_pose_file(path, poses, intrinsics: CameraIntrinsics | None = None):
    doc = {"poses": [pose_to_dict(p) for p in poses]}
    if intrinsics is not None:
        doc["intrinsics"] = intrinsics_to_dict(intrinsics)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_pose_file(path):
    """Read the native pose JSON; returns (intrinsics or None, [CameraPose])."""
    doc = json.loads(Path(path).read_text())
    intr = intrinsics_from_dict(doc["intrinsics"]) if "intrinsics" in doc else None
    poses = [pose_from_dict(p) for p in doc["poses"]]
    return intr, poses


def load_poses_any(path):
    """Accept either a pose JSON file or a COLMAP text model directory."""
    path = Path(path)
    if path.is_dir():
        cameras = parse_colmap_cameras((path / "cameras.txt").read_bytes())
        images = parse_colmap_images((path / "images.txt").read_bytes())
        intr = cameras[0][1] if cameras else None
        return intr, [pose for _, _, pose in images]
    return load_pose_file(path)
