"""Automatic label generation: lift one frame's electrode annotations into the
endeffector frame and propagate them to every frame via the calibrated
transform chain, then derive pixel labels by snapping to the measured surface.

Electrode orientation is never meaningful here: annotations carry identity
rotations, and because a chained transform moves a child translation without
reading the child rotation, only the positions survive the chain. The
composed rotations are deliberately discarded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .camera import (
    DepthImage,
    RgbdFrame,
    VISIBILITY_DEPTH_TOL,
    nearest_point,
    project,
    to_point_cloud,
    unproject,
)
from .geometry import (
    RigidTransform,
    Rotation,
    compose,
    invert,
    pose_from_json,
    pose_to_json,
)
from .image_io import ensure_dir, read_pfm, read_ppm, write_pfm, write_ppm

DEFAULT_CROP_MARGIN = (35, 27)  # (horizontal, vertical) pixels


@dataclass(frozen=True, eq=False)
class ReferenceAnnotation:
    """Clicked electrode pixels in one reference frame, in electrode order.

    Clicks may be sub-pixel: integer pixels are what a human annotator
    produces, while the simulator can emit exact continuous projections.
    """

    frame_index: int
    clicks: np.ndarray  # (N, 2) pixel coordinates

    def __post_init__(self) -> None:
        clicks = np.asarray(self.clicks, dtype=float)
        if clicks.ndim != 2 or clicks.shape[1] != 2 or clicks.shape[0] < 1:
            raise ValueError("clicks must be an (N, 2) array with N >= 1")
        if not np.all(np.isfinite(clicks)):
            raise ValueError("clicks must be finite")
        clicks = clicks.copy()
        clicks.flags.writeable = False
        object.__setattr__(self, "clicks", clicks)


@dataclass(frozen=True, eq=False)
class ElectrodeInEndeffector:
    """Electrode poses in the endeffector frame; rotation is identity by
    construction, the translation carries all the information."""

    poses: list[RigidTransform]

    def __post_init__(self) -> None:
        for i, pose in enumerate(self.poses):
            if np.abs(pose.rotation.m - np.eye(3)).max() != 0.0:
                raise ValueError(f"electrode pose {i} must have identity rotation")

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses])


@dataclass(frozen=True, eq=False)
class LabeledFrame:
    frame_index: int
    positions_3d: np.ndarray  # (N, 3) meters, camera frame
    pixels_2d: np.ndarray  # (N, 2) integer pixels
    visibility: np.ndarray  # (N,) bool


@dataclass(frozen=True)
class Crop:
    """Axis-aligned crop rectangle: origin pixel plus size."""

    u0: int
    v0: int
    width: int
    height: int

    def to_json(self) -> list[int]:
        return [self.u0, self.v0, self.width, self.height]


def depth_at_click(depth: DepthImage, u: float, v: float) -> float:
    """Depth under a (possibly sub-pixel) click.

    Bilinear over the valid neighbors, renormalized when some are invalid;
    at integer coordinates this is a plain pixel lookup. Raises if no valid
    neighbor supports the click.
    """
    if not (0 <= u <= depth.width - 1 and 0 <= v <= depth.height - 1):
        raise ValueError(f"click ({u}, {v}) is outside the image")
    u0 = int(np.floor(u))
    v0 = int(np.floor(v))
    u0 = min(u0, depth.width - 2) if depth.width > 1 else 0
    v0 = min(v0, depth.height - 2) if depth.height > 1 else 0
    u1 = min(u0 + 1, depth.width - 1)
    v1 = min(v0 + 1, depth.height - 1)
    wu = u - u0
    wv = v - v0
    total = 0.0
    value = 0.0
    for (uu, vv, w) in (
        (u0, v0, (1 - wu) * (1 - wv)),
        (u1, v0, wu * (1 - wv)),
        (u0, v1, (1 - wu) * wv),
        (u1, v1, wu * wv),
    ):
        if w <= 0.0:
            continue
        d = depth.data[vv, uu]
        if d > 0.0:
            total += w
            value += w * d
    if total <= 0.0:
        raise ValueError(f"no valid depth around click ({u}, {v})")
    return value / total


def annotate_reference(
    frame: RgbdFrame, ann: ReferenceAnnotation
) -> list[RigidTransform]:
    """Turn reference clicks into camera-frame electrode poses.

    Each pose is the unprojected click with identity orientation. A click
    without valid depth raises, naming the electrode index.
    """
    poses = []
    for i, (u, v) in enumerate(ann.clicks):
        try:
            d = depth_at_click(frame.depth, float(u), float(v))
        except ValueError as exc:
            raise ValueError(f"electrode {i}: {exc}") from None
        poses.append(
            RigidTransform(Rotation.identity(), unproject(frame.intrinsics, u, v, d))
        )
    return poses


def lift_to_endeffector(
    ref_ef_pose: RigidTransform,
    calib_y: RigidTransform,
    electrode_poses: list[RigidTransform],
) -> ElectrodeInEndeffector:
    """Express camera-frame electrode poses in the endeffector frame.

    Chains the inverse endeffector pose with the calibrated camera-to-robot
    transform; the composed rotation is dropped (see module docstring).
    """
    chain = compose(invert(ref_ef_pose), calib_y)
    poses = [
        RigidTransform(Rotation.identity(), compose(chain, pose).translation)
        for pose in electrode_poses
    ]
    return ElectrodeInEndeffector(poses)


def propagate(
    in_ef: ElectrodeInEndeffector,
    ef_pose_j: RigidTransform,
    calib_y: RigidTransform,
) -> np.ndarray:
    """Electrode positions in the camera frame for one robot pose, (N, 3).

    Inverse of the lifting chain evaluated at pose j: camera <- robot <-
    endeffector applied to the endeffector-frame positions.
    """
    chain = compose(invert(calib_y), ef_pose_j)
    return in_ef.positions @ chain.rotation.m.T + chain.translation


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x) + 0.5).astype(int)


def pixel_labels(positions: np.ndarray, frame: RgbdFrame) -> np.ndarray:
    """Snap 3D positions to the measured surface and project to pixels.

    Each position is matched to the nearest valid point of the frame's
    cloud; that point is projected and rounded half-up. Occluded electrodes
    therefore snap to the front surface, which is why visibility flags exist.
    Raises when the frame has no valid depth at all.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ValueError(f"positions must be (N, 3), got {positions.shape}")
    cloud = to_point_cloud(frame)
    if not cloud.valid.any():
        raise ValueError("frame has no valid depth; cannot derive pixel labels")
    labels = np.empty((positions.shape[0], 2), dtype=int)
    for i, pos in enumerate(positions):
        hit = nearest_point(cloud, pos)
        u, v = project(frame.intrinsics, hit.xyz)
        labels[i] = (_round_half_up(u), _round_half_up(v))
    return labels


def derive_visibility(positions: np.ndarray, frame: RgbdFrame) -> np.ndarray:
    """Visibility from depth consistency alone, for when no ground truth is
    available: the label must project in-bounds onto valid depth within
    ``VISIBILITY_DEPTH_TOL`` of its own z."""
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[0]
    visible = np.zeros(n, dtype=bool)
    for i, pos in enumerate(positions):
        if pos[2] <= 0:
            continue
        u, v = project(frame.intrinsics, pos)
        pu, pv = int(np.floor(u + 0.5)), int(np.floor(v + 0.5))
        if not (0 <= pu < frame.depth.width and 0 <= pv < frame.depth.height):
            continue
        d = frame.depth.data[pv, pu]
        visible[i] = d > 0 and abs(d - pos[2]) <= VISIBILITY_DEPTH_TOL
    return visible


def label_frame(
    frame_index: int,
    frame: RgbdFrame,
    in_ef: ElectrodeInEndeffector,
    calib_y: RigidTransform,
    visibility: np.ndarray | None = None,
) -> LabeledFrame:
    """Generate the full label set for one frame.

    Visibility is copied from ground truth when provided, otherwise derived
    from depth consistency. Labels are emitted for every electrode either way.
    """
    positions = propagate(in_ef, frame.endeffector_pose, calib_y)
    pixels = pixel_labels(positions, frame)
    if visibility is None:
        visibility = derive_visibility(positions, frame)
    else:
        visibility = np.asarray(visibility, dtype=bool)
    return LabeledFrame(
        frame_index=frame_index,
        positions_3d=positions,
        pixels_2d=pixels,
        visibility=visibility,
    )


def compute_crop(
    all_pixel_labels: Iterable[np.ndarray],
    margin: int | tuple[int, int] = DEFAULT_CROP_MARGIN,
    width: int = 524,
    height: int = 424,
) -> Crop:
    """Bounding box of all labels, expanded by a margin and clipped.

    The margin is (horizontal, vertical); a single int applies to both. The
    box is inclusive, so a single label with margin 10 yields a 21x21 crop
    away from the borders.
    """
    if isinstance(margin, (int, np.integer)):
        margin = (int(margin), int(margin))
    mu, mv = margin
    stacked = [np.asarray(l, dtype=float).reshape(-1, 2) for l in all_pixel_labels]
    if not stacked:
        raise ValueError("need at least one label to compute a crop")
    labels = np.concatenate(stacked, axis=0)
    u_min = int(np.floor(labels[:, 0].min())) - mu
    u_max = int(np.ceil(labels[:, 0].max())) + mu
    v_min = int(np.floor(labels[:, 1].min())) - mv
    v_max = int(np.ceil(labels[:, 1].max())) + mv
    u_min = max(u_min, 0)
    v_min = max(v_min, 0)
    u_max = min(u_max, width - 1)
    v_max = min(v_max, height - 1)
    return Crop(u0=u_min, v0=v_min, width=u_max - u_min + 1, height=v_max - v_min + 1)


@dataclass(frozen=True, eq=False)
class ManifestRecord:
    rgb_path: str
    depth_path: str
    ef_pose: RigidTransform
    labels_3d: np.ndarray  # (N, 3) meters, camera frame
    labels_2d: np.ndarray  # (N, 2) crop pixels
    visible: np.ndarray  # (N,) bool

    def to_json(self) -> dict:
        return {
            "rgb": self.rgb_path,
            "depth": self.depth_path,
            "ef_pose": pose_to_json(self.ef_pose),
            "labels3d": [[float(x) for x in row] for row in self.labels_3d],
            "labels2d": [[int(x) for x in row] for row in self.labels_2d],
            "visible": [bool(x) for x in self.visible],
        }

    @classmethod
    def from_json(cls, obj: dict) -> ManifestRecord:
        return cls(
            rgb_path=obj["rgb"],
            depth_path=obj["depth"],
            ef_pose=pose_from_json(obj["ef_pose"]),
            labels_3d=np.asarray(obj["labels3d"], dtype=float),
            labels_2d=np.asarray(obj["labels2d"], dtype=int),
            visible=np.asarray(obj["visible"], dtype=bool),
        )


@dataclass(frozen=True, eq=False)
class DatasetManifest:
    root: Path
    records: list[ManifestRecord]
    crop: Crop
    electrode_count: int

    def rgb_file(self, record: ManifestRecord) -> Path:
        return self.root / record.rgb_path

    def depth_file(self, record: ManifestRecord) -> Path:
        return self.root / record.depth_path


def export_dataset(
    frames: Iterable[RgbdFrame],
    labels: Iterable[LabeledFrame],
    crop: Crop,
    out_dir,
) -> DatasetManifest:
    """Write cropped image files plus the JSON-lines manifest.

    Pixel labels are re-expressed in crop coordinates; 3D labels stay in
    camera-frame meters. Raises on an empty frame list and surfaces I/O
    failures with the offending path.
    """
    root = ensure_dir(out_dir)
    records = []
    manifest_path = root / "manifest.jsonl"
    try:
        with open(manifest_path, "w", encoding="ascii") as mf:
            for frame, label in zip(frames, labels):
                i = label.frame_index
                if crop.u0 < 0 or crop.v0 < 0:
                    raise ValueError("crop origin must be non-negative")
                if (
                    crop.u0 + crop.width > frame.rgb.width
                    or crop.v0 + crop.height > frame.rgb.height
                ):
                    raise ValueError("crop exceeds the image bounds")
                rgb_name = f"rgb_{i:05d}.ppm"
                depth_name = f"depth_{i:05d}.pfm"
                rgb_crop = frame.rgb.data[
                    crop.v0 : crop.v0 + crop.height, crop.u0 : crop.u0 + crop.width
                ]
                depth_crop = frame.depth.data[
                    crop.v0 : crop.v0 + crop.height, crop.u0 : crop.u0 + crop.width
                ]
                write_ppm(root / rgb_name, np.ascontiguousarray(rgb_crop))
                write_pfm(root / depth_name, depth_crop)
                record = ManifestRecord(
                    rgb_path=rgb_name,
                    depth_path=depth_name,
                    ef_pose=frame.endeffector_pose,
                    labels_3d=label.positions_3d,
                    labels_2d=label.pixels_2d - np.array([crop.u0, crop.v0]),
                    visible=label.visibility,
                )
                mf.write(json.dumps(record.to_json()) + "\n")
                records.append(record)
    except OSError as exc:
        raise OSError(f"dataset export failed at {exc.filename or out_dir}: {exc}")
    if not records:
        raise ValueError("cannot export an empty dataset")
    n_electrodes = records[0].labels_3d.shape[0]
    meta = {
        "crop": crop.to_json(),
        "electrode_count": n_electrodes,
        "n_frames": len(records),
        "manifest": "manifest.jsonl",
    }
    with open(root / "dataset.json", "w", encoding="ascii") as f:
        json.dump(meta, f, indent=2)
    return DatasetManifest(
        root=root, records=records, crop=crop, electrode_count=n_electrodes
    )


def load_manifest(dataset_dir) -> DatasetManifest:
    root = Path(dataset_dir)
    if root.is_file():
        root = root.parent
    with open(root / "dataset.json", "r", encoding="ascii") as f:
        meta = json.load(f)
    records = []
    with open(root / meta.get("manifest", "manifest.jsonl"), "r", encoding="ascii") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(ManifestRecord.from_json(json.loads(line)))
    crop = Crop(*[int(x) for x in meta["crop"]])
    return DatasetManifest(
        root=root,
        records=records,
        crop=crop,
        electrode_count=int(meta["electrode_count"]),
    )


def load_frame(manifest: DatasetManifest, record: ManifestRecord) -> tuple[np.ndarray, np.ndarray]:
    """Read back one record's (rgb, depth) arrays."""
    rgb = read_ppm(manifest.rgb_file(record))
    depth = read_pfm(manifest.depth_file(record))
    return rgb, depth


def save_annotation(path, ann: ReferenceAnnotation) -> None:
    with open(path, "w", encoding="ascii") as f:
        json.dump(
            {
                "frame_index": ann.frame_index,
                "clicks": [[float(u), float(v)] for u, v in ann.clicks],
            },
            f,
        )


def load_annotation(path) -> ReferenceAnnotation:
    with open(path, "r", encoding="ascii") as f:
        obj = json.load(f)
    return ReferenceAnnotation(
        frame_index=int(obj["frame_index"]),
        clicks=np.asarray(obj["clicks"], dtype=float),
    )


def perturb_clicks(
    clicks: np.ndarray,
    magnitude_px: float,
    rng: int | np.random.Generator,
    width: int,
    height: int,
) -> np.ndarray:
    """Uniform click jitter within +-magnitude_px, clipped to the image."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    clicks = np.asarray(clicks, dtype=float)
    noisy = clicks + rng.uniform(-magnitude_px, magnitude_px, size=clicks.shape)
    noisy[:, 0] = np.clip(noisy[:, 0], 0, width - 1)
    noisy[:, 1] = np.clip(noisy[:, 1], 0, height - 1)
    return noisy
