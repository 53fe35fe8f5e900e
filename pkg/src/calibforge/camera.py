"""Pinhole camera model: projection, unprojection, point clouds, and
nearest-neighbor lookup used to derive pixel labels.

Pixel convention: the sample of pixel (u, v) lies exactly at continuous image
coordinate (u, v), so unprojecting a pixel and projecting the result returns
the same coordinate. Depth value 0.0 marks an invalid / no-return pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform

# A 3D label is considered observed at a pixel when the rendered depth there
# is within this distance of the label's camera-frame z.
VISIBILITY_DEPTH_TOL = 0.005


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")


def default_intrinsics() -> Intrinsics:
    """Depth-frame geometry of the simulated sensor: 524x424, f = 365 px."""
    return Intrinsics(fx=365.0, fy=365.0, cx=262.0, cy=212.0, width=524, height=424)


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Per-pixel depth in meters; 0.0 means no return."""

    width: int
    height: int
    data: np.ndarray  # (height, width) float64, row-major

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=float)
        if data.shape != (self.height, self.width):
            raise ValueError(
                f"depth data shape {data.shape} does not match "
                f"{self.height}x{self.width}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("depth values must be finite")
        if data.size and data.min() < 0:
            raise ValueError("depth values must be non-negative")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)


@dataclass(frozen=True, eq=False)
class RgbImage:
    """8-bit RGB image."""

    width: int
    height: int
    data: np.ndarray  # (height, width, 3) uint8, row-major

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.shape != (self.height, self.width, 3):
            raise ValueError(
                f"rgb data shape {data.shape} does not match "
                f"{self.height}x{self.width}x3"
            )
        if data.dtype != np.uint8:
            raise ValueError(f"rgb data must be uint8, got {data.dtype}")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)


@dataclass(frozen=True, eq=False)
class RgbdFrame:
    """Co-registered color + depth acquisition with the robot pose that
    produced it (endeffector in the robot base frame)."""

    rgb: RgbImage
    depth: DepthImage
    intrinsics: Intrinsics
    endeffector_pose: RigidTransform

    def __post_init__(self) -> None:
        if (self.rgb.width, self.rgb.height) != (self.depth.width, self.depth.height):
            raise ValueError("rgb and depth dimensions must match")
        if (self.depth.width, self.depth.height) != (
            self.intrinsics.width,
            self.intrinsics.height,
        ):
            raise ValueError("image dimensions must match the intrinsics")


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Per-pixel unprojection of a depth image.

    Entry ``v * width + u`` corresponds to pixel (u, v); invalid pixels keep a
    zero xyz and a False flag.
    """

    width: int
    height: int
    xyz: np.ndarray  # (width*height, 3) float64
    valid: np.ndarray  # (width*height,) bool

    def __post_init__(self) -> None:
        n = self.width * self.height
        if self.xyz.shape != (n, 3) or self.valid.shape != (n,):
            raise ValueError("point cloud arrays do not match the image size")

    @property
    def pixel_u(self) -> np.ndarray:
        return np.arange(self.width * self.height) % self.width

    @property
    def pixel_v(self) -> np.ndarray:
        return np.arange(self.width * self.height) // self.width


@dataclass(frozen=True, eq=False)
class NearestPoint:
    pixel_u: int
    pixel_v: int
    xyz: np.ndarray


def project(intr: Intrinsics, p_cam) -> tuple[float, float]:
    """Project a camera-frame point to continuous pixel coordinates."""
    p = np.asarray(p_cam, dtype=float)
    if p.shape != (3,):
        raise ValueError(f"point must be a 3-vector, got shape {p.shape}")
    if p[2] <= 0:
        raise ValueError(f"cannot project point behind the camera (z = {p[2]!r})")
    return (
        float(intr.fx * p[0] / p[2] + intr.cx),
        float(intr.fy * p[1] / p[2] + intr.cy),
    )


def project_points(intr: Intrinsics, pts) -> np.ndarray:
    """Vectorized projection of (N, 3) camera-frame points to (N, 2) pixels."""
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
    if pts.size and pts[:, 2].min() <= 0:
        raise ValueError("cannot project points behind the camera")
    uv = np.empty((pts.shape[0], 2))
    uv[:, 0] = intr.fx * pts[:, 0] / pts[:, 2] + intr.cx
    uv[:, 1] = intr.fy * pts[:, 1] / pts[:, 2] + intr.cy
    return uv


def unproject(intr: Intrinsics, u: float, v: float, d: float) -> np.ndarray:
    """Back-project pixel (u, v) at depth d meters into the camera frame."""
    if d <= 0:
        raise ValueError(f"depth must be positive, got {d!r}")
    return np.array(
        [(u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d]
    )


def to_point_cloud(frame: RgbdFrame) -> PointCloud:
    """Unproject every pixel of the frame's depth image.

    Zero-depth pixels become invalid entries. Linear ordering is row-major,
    so entry v*width+u is pixel (u, v).
    """
    intr = frame.intrinsics
    z = frame.depth.data
    us = np.arange(intr.width, dtype=float)
    vs = np.arange(intr.height, dtype=float)
    x = (us[None, :] - intr.cx) * z / intr.fx
    y = (vs[:, None] - intr.cy) * z / intr.fy
    valid = z > 0
    xyz = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    valid = valid.reshape(-1)
    xyz[~valid] = 0.0
    return PointCloud(width=intr.width, height=intr.height, xyz=xyz, valid=valid)


def nearest_point(cloud: PointCloud, q) -> NearestPoint:
    """Closest valid cloud point to a query, by exhaustive scan.

    There is no distance cutoff; ties are broken by the lowest linear pixel
    index, which ``argmin`` guarantees by returning the first minimum.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (3,):
        raise ValueError(f"query must be a 3-vector, got shape {q.shape}")
    if not cloud.valid.any():
        raise ValueError("point cloud has no valid points")
    d2 = np.einsum("ij,ij->i", cloud.xyz - q, cloud.xyz - q)
    d2[~cloud.valid] = np.inf
    idx = int(np.argmin(d2))
    return NearestPoint(
        pixel_u=idx % cloud.width,
        pixel_v=idx // cloud.width,
        xyz=cloud.xyz[idx].copy(),
    )
