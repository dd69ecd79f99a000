"""Depth-map unprojection and z-buffered point splatting.

A depth map plus intrinsics turns each valid pixel into a colored world
point; rendering projects the cloud into a target view and paints square
splats with a z-buffer, leaving an opacity mask that is zero exactly where
nothing landed. Rendering a trajectory away from the source view produces
the reference video (progressively artifact-prone) and its mask.

The per-point splat loop is the hot path: a compiled kernel is used when the
extension built, otherwise the vectorized numpy kernel. Both are bitwise
identical; VIEWX_SPLAT_KERNEL=python|cython forces the choice.
"""

from __future__ import annotations

import dataclasses
import os

import numpy as np

from ..errors import ConfigError, DomainError, ShapeMismatchError
from ..geometry import CameraIntrinsics, CameraPose, Trajectory

_choice = os.environ.get("VIEWX_SPLAT_KERNEL", "").strip().lower()
if _choice not in ("", "cython", "python"):
    raise ConfigError(f"VIEWX_SPLAT_KERNEL must be 'cython' or 'python', got {_choice!r}")
if _choice == "python":
    from ._splat_py import splat_points as _splat_points

    _KERNEL = "python"
else:
    try:
        from ._splat_cy import splat_points as _splat_points

        _KERNEL = "cython"
    except ImportError:
        if _choice == "cython":
            raise
        from ._splat_py import splat_points as _splat_points

        _KERNEL = "python"

DEFAULT_Z_NEAR = 1e-4


def kernel_backend() -> str:
    """Which splat kernel is active: 'cython' or 'python'."""
    return _KERNEL


@dataclasses.dataclass
class DepthMap:
    """Per-pixel depth along +z with a validity mask (holes, sky, dropouts)."""

    data: np.ndarray
    validity: np.ndarray

    @classmethod
    def from_array(cls, data: np.ndarray) -> "DepthMap":
        """Treat non-finite or non-positive entries as invalid."""
        data = np.asarray(data, dtype=np.float64)
        validity = np.isfinite(data) & (data > 0)
        return cls(data=data, validity=validity)


@dataclasses.dataclass
class PointCloud:
    positions: np.ndarray  # (N, 3) world space
    colors: np.ndarray     # (N, 3) in [0, 1]

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float32).reshape(-1, 3)
        if len(self.positions) != len(self.colors):
            raise ShapeMismatchError("positions and colors must pair up")
        if len(self.positions) and not np.all(np.isfinite(self.positions)):
            raise DomainError("point positions must be finite")

    def __len__(self):
        return len(self.positions)


@dataclasses.dataclass
class RenderedFrame:
    rgb: np.ndarray           # (H, W, 3) float32 in [0, 1]
    opacity: np.ndarray       # (H, W) float32 in {0, 1}
    depth_buffer: np.ndarray  # (H, W) float64, +inf where empty


def unproject(
    rgb: np.ndarray, depth: DepthMap, intr: CameraIntrinsics, pose: CameraPose
) -> PointCloud:
    """Lift every valid pixel to a colored world point.

    Pixel (u, v) at depth d maps to the camera point
    d * ((u - cx)/fx, (v - cy)/fy, 1); integer pixel coordinates are used
    directly (no half-pixel offset), matching render_frame so a same-pose
    round trip is exact. Points come out in row-major pixel order.
    """
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeMismatchError(f"expected (H, W, 3) color image, got {rgb.shape}")
    height, width = rgb.shape[:2]
    if (height, width) != depth.data.shape:
        raise ShapeMismatchError(
            f"depth shape {depth.data.shape} does not match image {height}x{width}"
        )
    if (intr.height, intr.width) != (height, width):
        raise ShapeMismatchError(
            f"intrinsics are {intr.width}x{intr.height}, image is {width}x{height}"
        )
    vv, uu = np.nonzero(depth.validity)
    d = depth.data[vv, uu]
    x = d * (uu - intr.cx) / intr.fx
    y = d * (vv - intr.cy) / intr.fy
    cam = np.stack([x, y, d], axis=1)
    world = pose.camera_to_world(cam)
    colors = rgb[vv, uu].astype(np.float32)
    return PointCloud(positions=world, colors=colors)


def render_frame(
    cloud: PointCloud,
    intr: CameraIntrinsics,
    pose: CameraPose,
    splat_radius_px: int = 1,
    z_near: float = DEFAULT_Z_NEAR,
) -> RenderedFrame:
    """Z-buffered square-splat render of the cloud from one view."""
    if splat_radius_px < 0:
        raise DomainError(f"splat radius must be >= 0, got {splat_radius_px}")
    height, width = intr.height, intr.width
    if len(cloud) == 0:
        rgb = np.zeros((height, width, 3), dtype=np.float32)
        return RenderedFrame(
            rgb=rgb,
            opacity=np.zeros((height, width), dtype=np.float32),
            depth_buffer=np.full((height, width), np.inf),
        )
    cam = pose.world_to_camera(cloud.positions)
    z = cam[:, 2]
    keep = z > z_near
    cam = cam[keep]
    colors = cloud.colors[keep]
    z = z[keep]
    # Clip before the int cast: points wildly off-frame must not wrap around.
    u = np.floor(np.clip(intr.fx * cam[:, 0] / z + intr.cx + 0.5, -1e18, 1e18)).astype(np.int64)
    v = np.floor(np.clip(intr.fy * cam[:, 1] / z + intr.cy + 0.5, -1e18, 1e18)).astype(np.int64)
    reach = splat_radius_px
    inside = (u >= -reach) & (u < width + reach) & (v >= -reach) & (v < height + reach)
    rgb, depth = _splat_points(
        np.ascontiguousarray(u[inside]),
        np.ascontiguousarray(v[inside]),
        np.ascontiguousarray(z[inside]),
        np.ascontiguousarray(colors[inside]),
        height,
        width,
        splat_radius_px,
    )
    opacity = np.isfinite(depth).astype(np.float32)
    return RenderedFrame(rgb=rgb, opacity=opacity, depth_buffer=depth)


def render_trajectory(
    cloud: PointCloud,
    intr: CameraIntrinsics,
    traj: Trajectory,
    splat_radius_px: int = 1,
    z_near: float = DEFAULT_Z_NEAR,
):
    """Render every trajectory pose; returns (video (F,H,W,3), mask (F,1,H,W))."""
    if traj.frame_count < 1:
        raise DomainError("trajectory is empty")
    frames = []
    masks = []
    for pose in traj.poses:
        frame = render_frame(cloud, intr, pose, splat_radius_px, z_near)
        frames.append(frame.rgb)
        masks.append(frame.opacity)
    video = np.stack(frames)
    mask = np.stack(masks)[:, None, :, :]
    return video, mask
