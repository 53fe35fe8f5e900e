"""Synthetic scene: an ellipsoid head phantom with surface-mounted electrodes
rigidly attached to a simulated robot endeffector.

The renderer intersects per-pixel view rays with the ellipsoid analytically,
so every depth sample can be checked against the closed-form surface and the
electrode ground truth is exact up to depth quantization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .camera import (
    Intrinsics,
    DepthImage,
    RgbImage,
    RgbdFrame,
    VISIBILITY_DEPTH_TOL,
    default_intrinsics,
    project_points,
)
from .geometry import (
    RigidTransform,
    Rotation,
    compose,
    from_axis_angle,
    invert,
    pose_from_json,
    pose_to_json,
    transform_points,
)

CAP_COLOR = np.array([40, 70, 160], dtype=np.uint8)
ELECTRODE_COLOR = np.array([230, 40, 40], dtype=np.uint8)
BACKGROUND_COLOR = np.array([0, 0, 0], dtype=np.uint8)

# Nominal endeffector orientation in the camera frame: the head's +z axis
# (where the electrodes sit) points back at the camera.
_FACING_ROTATION = np.diag([1.0, -1.0, -1.0])

# Unit-sphere parameters of the default 8-electrode cap, (polar, azimuth) in
# degrees measured from the head's +z axis. One apex electrode, a ring of 3
# at 28 degrees, and a ring of 4 at 45 degrees.
_DEFAULT_ELECTRODE_ANGLES_DEG = (
    (10.0, 0.0),
    (28.0, 90.0),
    (28.0, 210.0),
    (28.0, 330.0),
    (45.0, 45.0),
    (45.0, 135.0),
    (45.0, 225.0),
    (45.0, 315.0),
)


@dataclass(frozen=True, eq=False)
class HeadPhantom:
    """Ellipsoid head with N electrodes on its surface, in the phantom frame.

    ``head_to_ef`` places the phantom frame inside the endeffector frame;
    electrode positions must satisfy the ellipsoid equation.
    """

    semi_axes: np.ndarray  # (3,) meters
    electrodes: np.ndarray  # (N, 3) meters, on the surface
    electrode_radius: float
    head_to_ef: RigidTransform

    def __post_init__(self) -> None:
        semi = np.asarray(self.semi_axes, dtype=float)
        if semi.shape != (3,) or semi.min() <= 0:
            raise ValueError("semi_axes must be three positive lengths")
        elec = np.asarray(self.electrodes, dtype=float)
        if elec.ndim != 2 or elec.shape[1] != 3 or elec.shape[0] < 1:
            raise ValueError("need at least one electrode as an (N, 3) array")
        surface = np.abs(np.sum((elec / semi) ** 2, axis=1) - 1.0)
        if surface.max() > 1e-9:
            raise ValueError(
                f"electrodes must lie on the ellipsoid surface "
                f"(max deviation {surface.max():.3e})"
            )
        if self.electrode_radius <= 0:
            raise ValueError("electrode_radius must be positive")
        semi = semi.copy()
        semi.flags.writeable = False
        elec = elec.copy()
        elec.flags.writeable = False
        object.__setattr__(self, "semi_axes", semi)
        object.__setattr__(self, "electrodes", elec)

    @property
    def n_electrodes(self) -> int:
        return self.electrodes.shape[0]


def unit_sphere_points(angles_deg) -> np.ndarray:
    """Unit vectors from (polar, azimuth) degree pairs, polar from +z."""
    out = np.empty((len(angles_deg), 3))
    for i, (polar, azimuth) in enumerate(angles_deg):
        th = np.deg2rad(polar)
        ph = np.deg2rad(azimuth)
        out[i] = (np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th))
    return out


def default_phantom() -> HeadPhantom:
    """Head phantom with semi-axes (0.08, 0.10, 0.11) m and 8 electrodes.

    Unit-sphere parameter points are mapped to the ellipsoid by scaling each
    axis, which keeps them exactly on the surface. Electrode disks are 5 mm.
    """
    semi = np.array([0.08, 0.10, 0.11])
    electrodes = unit_sphere_points(_DEFAULT_ELECTRODE_ANGLES_DEG) * semi
    return HeadPhantom(
        semi_axes=semi,
        electrodes=electrodes,
        electrode_radius=0.005,
        head_to_ef=RigidTransform.identity(),
    )


def default_camera_pose() -> RigidTransform:
    """Fixed true camera-in-robot pose used by the simulator."""
    axis = np.array([0.3, -0.5, 0.8])
    return from_axis_angle(axis / np.linalg.norm(axis), 1.2, (0.55, -0.35, 0.25))


@dataclass(frozen=True, eq=False)
class AcquisitionConfig:
    """Acquisition sweep: how many frames, where, and with what noise.

    The workspace box and its center live in the camera frame. Depth values
    are quantized to ``depth_quantization`` meters after noise, modelling the
    sensor's finite depth resolution (0 disables quantization).
    """

    n_frames: int
    workspace_extent: np.ndarray = field(
        default_factory=lambda: np.array([0.5, 0.5, 0.3])
    )
    workspace_center: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, 1.0])
    )
    rotation_range: np.ndarray = field(
        default_factory=lambda: np.array([0.2, 0.2, 0.2])
    )
    camera_in_robot: RigidTransform = field(default_factory=default_camera_pose)
    depth_noise_sigma: float = 0.0
    depth_quantization: float = 2.5e-4
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_frames < 1:
            raise ValueError("n_frames must be at least 1")
        for name in ("workspace_extent", "workspace_center", "rotation_range"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,):
                raise ValueError(f"{name} must be a 3-vector")
            object.__setattr__(self, name, v)
        if self.workspace_extent.min() < 0 or self.rotation_range.min() < 0:
            raise ValueError("extents and rotation ranges must be non-negative")
        if self.depth_noise_sigma < 0 or self.depth_quantization < 0:
            raise ValueError("noise and quantization must be non-negative")


@dataclass(frozen=True, eq=False)
class GroundTruthFrame:
    """A rendered frame plus the exact electrode ground truth behind it."""

    frame: RgbdFrame
    electrode_positions_camera: np.ndarray  # (N, 3) meters, exact
    electrode_pixels: np.ndarray  # (N, 2) continuous; (-1, -1) if behind camera
    visibility: np.ndarray  # (N,) bool


def _rot_xyz(angles: np.ndarray) -> np.ndarray:
    """Rotation from per-axis angles, applied x then y then z."""
    ax, ay, az = angles
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def sample_poses(cfg: AcquisitionConfig) -> list[RigidTransform]:
    """Draw endeffector poses covering the workspace box.

    Translations are uniform over the box (camera frame); orientations are
    the nominal camera-facing rotation composed with per-axis uniform angles
    within ``rotation_range``. Per frame, the three translation variates are
    drawn before the three angle variates; the stream is seeded from
    (rng_seed, stream 0) so renders can consume independent substreams.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.rng_seed, spawn_key=(0,))
    )
    poses = []
    for _ in range(cfg.n_frames):
        offset = (rng.uniform(size=3) - 0.5) * cfg.workspace_extent
        angles = rng.uniform(low=-1.0, high=1.0, size=3) * cfg.rotation_range
        ef_in_camera = RigidTransform(
            Rotation(_FACING_ROTATION @ _rot_xyz(angles)),
            cfg.workspace_center + offset,
        )
        poses.append(compose(cfg.camera_in_robot, ef_in_camera))
    return poses


def render(
    phantom: HeadPhantom,
    ef_pose: RigidTransform,
    cfg: AcquisitionConfig,
    intr: Intrinsics | None = None,
    frame_index: int = 0,
) -> GroundTruthFrame:
    """Render one RGBD frame by analytic ray-ellipsoid intersection.

    Rays are cast in the camera frame with unit z-component, so the ray
    parameter of a hit equals its camera-frame depth. Depth noise is drawn
    from a substream keyed by (rng_seed, stream 1, frame_index) in row-major
    pixel order, making renders bit-identical however frames are scheduled.
    A frame that misses the phantom entirely is all-invalid, not an error.
    """
    if intr is None:
        intr = default_intrinsics()
    cam_from_head = compose(
        compose(invert(cfg.camera_in_robot), ef_pose), phantom.head_to_ef
    )
    head_from_cam = invert(cam_from_head)

    us = (np.arange(intr.width) - intr.cx) / intr.fx
    vs = (np.arange(intr.height) - intr.cy) / intr.fy
    dirs = np.empty((intr.height, intr.width, 3))
    dirs[:, :, 0] = us[None, :]
    dirs[:, :, 1] = vs[:, None]
    dirs[:, :, 2] = 1.0

    semi = phantom.semi_axes
    origin = head_from_cam.translation / semi
    d = (dirs @ head_from_cam.rotation.m.T) / semi
    a = np.einsum("hwc,hwc->hw", d, d)
    b = 2.0 * (d @ origin)
    c = float(origin @ origin) - 1.0
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    sqrt_disc = np.sqrt(np.where(hit, disc, 0.0))
    t_near = (-b - sqrt_disc) / (2.0 * a)
    t_far = (-b + sqrt_disc) / (2.0 * a)
    t = np.where(t_near > 0.0, t_near, t_far)
    hit &= t > 0.0

    depth = np.where(hit, t, 0.0)
    if cfg.depth_noise_sigma > 0.0:
        noise_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.rng_seed, spawn_key=(1, frame_index))
        )
        noise = noise_rng.normal(0.0, cfg.depth_noise_sigma, size=depth.shape)
        depth = np.where(hit, depth + noise, 0.0)
    if cfg.depth_quantization > 0.0:
        depth = np.where(
            hit, np.round(depth / cfg.depth_quantization) * cfg.depth_quantization, 0.0
        )
    depth = np.maximum(depth, 0.0)

    rgb = np.empty((intr.height, intr.width, 3), dtype=np.uint8)
    rgb[:] = BACKGROUND_COLOR
    hit_idx = np.nonzero(hit.reshape(-1))[0]
    if hit_idx.size:
        # Color from the exact (unquantized) surface point in the head frame.
        flat_dirs = dirs.reshape(-1, 3)[hit_idx]
        points_head = head_from_cam.translation + (
            flat_dirs @ head_from_cam.rotation.m.T
        ) * t.reshape(-1)[hit_idx, None]
        diff = points_head[:, None, :] - phantom.electrodes[None, :, :]
        d2 = np.einsum("pec,pec->pe", diff, diff)
        on_electrode = d2.min(axis=1) <= phantom.electrode_radius**2
        flat_rgb = rgb.reshape(-1, 3)
        flat_rgb[hit_idx] = CAP_COLOR
        flat_rgb[hit_idx[on_electrode]] = ELECTRODE_COLOR

    positions = transform_points(cam_from_head, phantom.electrodes)
    n = phantom.n_electrodes
    pixels = np.full((n, 2), -1.0)
    in_front = positions[:, 2] > 0.0
    if in_front.any():
        pixels[in_front] = project_points(intr, positions[in_front])

    # Outward surface normal, rotated to the camera frame; an electrode faces
    # the camera when the normal opposes its viewing ray.
    normals_head = phantom.electrodes / semi**2
    normals_cam = normals_head @ cam_from_head.rotation.m.T
    facing = np.einsum("nc,nc->n", normals_cam, positions) < 0.0

    visible = np.zeros(n, dtype=bool)
    px = np.floor(pixels[:, 0] + 0.5).astype(int)
    py = np.floor(pixels[:, 1] + 0.5).astype(int)
    in_bounds = (
        in_front & (px >= 0) & (px < intr.width) & (py >= 0) & (py < intr.height)
    )
    idx = np.nonzero(in_bounds)[0]
    if idx.size:
        sampled = depth[py[idx], px[idx]]
        consistent = (sampled > 0.0) & (
            np.abs(sampled - positions[idx, 2]) <= VISIBILITY_DEPTH_TOL
        )
        visible[idx] = facing[idx] & consistent

    frame = RgbdFrame(
        rgb=RgbImage(width=intr.width, height=intr.height, data=rgb),
        depth=DepthImage(width=intr.width, height=intr.height, data=depth),
        intrinsics=intr,
        endeffector_pose=ef_pose,
    )
    return GroundTruthFrame(
        frame=frame,
        electrode_positions_camera=positions,
        electrode_pixels=pixels,
        visibility=visible,
    )


def simulate_frames(
    phantom: HeadPhantom, cfg: AcquisitionConfig, intr: Intrinsics | None = None
) -> Iterator[tuple[int, GroundTruthFrame]]:
    """Render the full acquisition one frame at a time."""
    for index, pose in enumerate(sample_poses(cfg)):
        yield index, render(phantom, pose, cfg, intr, frame_index=index)


@dataclass(frozen=True, eq=False)
class GroundTruthRecord:
    """Per-frame ground truth as logged alongside the image files."""

    frame_index: int
    ef_pose: RigidTransform
    positions_camera: np.ndarray  # (N, 3)
    pixels: np.ndarray  # (N, 2)
    visible: np.ndarray  # (N,) bool

    @classmethod
    def from_frame(cls, frame_index: int, gt: GroundTruthFrame) -> GroundTruthRecord:
        return cls(
            frame_index=frame_index,
            ef_pose=gt.frame.endeffector_pose,
            positions_camera=gt.electrode_positions_camera,
            pixels=gt.electrode_pixels,
            visible=gt.visibility,
        )

    def to_json(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "ef_pose": pose_to_json(self.ef_pose),
            "positions_camera": [[float(x) for x in p] for p in self.positions_camera],
            "pixels": [[float(x) for x in p] for p in self.pixels],
            "visible": [bool(x) for x in self.visible],
        }

    @classmethod
    def from_json(cls, obj: dict) -> GroundTruthRecord:
        return cls(
            frame_index=int(obj["frame_index"]),
            ef_pose=pose_from_json(obj["ef_pose"]),
            positions_camera=np.asarray(obj["positions_camera"], dtype=float),
            pixels=np.asarray(obj["pixels"], dtype=float),
            visible=np.asarray(obj["visible"], dtype=bool),
        )


def save_ground_truth(path, records: Iterable[GroundTruthRecord]) -> None:
    with open(path, "w", encoding="ascii") as f:
        for record in records:
            f.write(json.dumps(record.to_json()) + "\n")


def load_ground_truth(path) -> list[GroundTruthRecord]:
    records = []
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(GroundTruthRecord.from_json(json.loads(line)))
    return records
