"""Hand-eye calibration solving A_i X = Y B_i for two unknown transforms.

A_i is the endeffector pose in the robot base frame, B_i the calibration
marker pose in the camera frame. X (marker to endeffector) and Y (camera to
robot) are estimated jointly by linear least squares over the 24 entries of
their upper 3x4 blocks, without orthogonality constraints; the rotation
blocks are repaired to proper rotations afterwards via the polar factor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import (
    NoiseParams,
    RigidTransform,
    Rotation,
    compose,
    from_axis_angle,
    invert,
    nearest_orthogonal,
    perturb,
    pose_from_json,
    pose_to_json,
    rotation_angle_between,
)

# Second-largest singular value of the stacked relative rotation vectors must
# exceed this for the pose set to constrain all 24 unknowns.
ROTATION_DIVERSITY_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class PosePair:
    """One observation: robot endeffector pose and marker-in-camera pose."""

    robot: RigidTransform
    marker: RigidTransform


@dataclass(frozen=True, eq=False)
class HandEyeSolution:
    x_marker_to_ef: RigidTransform
    y_camera_to_robot: RigidTransform
    residual_rms: float  # RMS of the stacked linear residuals, pre-repair


@dataclass(frozen=True)
class CalibrationErrorReport:
    position_error_mean: float  # meters
    position_error_std: float
    rotation_error_mean: float  # radians
    rotation_error_std: float
    n_eval: int

    def to_json(self) -> dict:
        return {
            "position_error_mean_m": self.position_error_mean,
            "position_error_std_m": self.position_error_std,
            "rotation_error_mean_rad": self.rotation_error_mean,
            "rotation_error_std_rad": self.rotation_error_std,
            "n_eval": self.n_eval,
        }


def _rotation_vector(m: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (angle-scaled axis)."""
    cos_angle = np.clip((np.trace(m) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(cos_angle))
    if angle < 1e-12:
        return np.zeros(3)
    w = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    if np.pi - angle < 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from the
        # symmetric part instead.
        sym = (m + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(sym), 0.0, None))
        order = np.argmax(axis)
        if axis[order] > 0:
            axis = sym[:, order] / axis[order]
            axis = axis / np.linalg.norm(axis)
        else:
            axis = np.array([0.0, 0.0, 1.0])
        return axis * angle
    return w * (angle / (2.0 * np.sin(angle)))


def _check_rotation_diversity(pairs: list[PosePair]) -> None:
    rel_axes = []
    for prev, cur in zip(pairs[:-1], pairs[1:]):
        rel = prev.robot.rotation.m.T @ cur.robot.rotation.m
        rel_axes.append(_rotation_vector(rel))
    stacked = np.asarray(rel_axes)
    s = np.linalg.svd(stacked, compute_uv=False)
    if len(s) < 2 or s[1] <= ROTATION_DIVERSITY_TOL:
        raise ValueError(
            "degenerate pose set: relative robot rotations span fewer than "
            "two axes, the hand-eye system is underdetermined"
        )


def solve_qr24(
    pairs: list[PosePair], translation_row_weight: float = 1.0
) -> HandEyeSolution:
    """Solve the 24-unknown linear hand-eye system from pose pairs.

    Each pair contributes 12 equations: entrywise equality of the rotation
    products (9) and of the translation columns (3) of A_i X = Y B_i. The
    stacked system is solved by orthogonal-factorization least squares and
    the rotation blocks of X and Y are then replaced with their nearest
    rotations. Translation rows mix meters with the dimensionless rotation
    rows; ``translation_row_weight`` rescales them (default 1.0, unweighted).

    Raises ValueError for fewer than 3 pairs, for rotationally degenerate
    motion sets, and for numerically singular systems.
    """
    if len(pairs) < 3:
        raise ValueError(f"need at least 3 pose pairs, got {len(pairs)}")
    if translation_row_weight <= 0:
        raise ValueError("translation_row_weight must be positive")
    _check_rotation_diversity(pairs)

    n = len(pairs)
    m = np.zeros((12 * n, 24))
    rhs = np.zeros(12 * n)
    eye3 = np.eye(3)
    w = translation_row_weight
    # Unknown layout: [vec(R_X) | t_X | vec(R_Y) | t_Y], column-major vecs.
    for i, pair in enumerate(pairs):
        ra, ta = pair.robot.rotation.m, pair.robot.translation
        rb, tb = pair.marker.rotation.m, pair.marker.translation
        rot_rows = slice(12 * i, 12 * i + 9)
        trn_rows = slice(12 * i + 9, 12 * i + 12)
        # R_A R_X - R_Y R_B = 0
        m[rot_rows, 0:9] = np.kron(eye3, ra)
        m[rot_rows, 12:21] = -np.kron(rb.T, eye3)
        # R_A t_X - R_Y t_B - t_Y = -t_A
        m[trn_rows, 9:12] = w * ra
        m[trn_rows, 12:21] = -w * np.kron(tb[None, :], eye3)
        m[trn_rows, 21:24] = -w * eye3
        rhs[trn_rows] = -w * ta

    solution, _, rank, _ = np.linalg.lstsq(m, rhs, rcond=None)
    if rank < 24:
        raise ValueError(f"hand-eye system is rank deficient (rank {rank} < 24)")
    residual_rms = float(np.sqrt(np.mean((m @ solution - rhs) ** 2)))

    rx_raw = solution[0:9].reshape(3, 3, order="F")
    ry_raw = solution[12:21].reshape(3, 3, order="F")
    x = RigidTransform(nearest_orthogonal(rx_raw), solution[9:12])
    y = RigidTransform(nearest_orthogonal(ry_raw), solution[21:24])
    return HandEyeSolution(
        x_marker_to_ef=x, y_camera_to_robot=y, residual_rms=residual_rms
    )


def evaluate(sol: HandEyeSolution, held_out: list[PosePair]) -> CalibrationErrorReport:
    """Compare predicted marker poses against held-out observations.

    For each pair the marker pose is predicted through the calibrated chain
    (camera <- robot <- endeffector <- marker) and compared to the observed
    one. Means and population stds of the translation distance and geodesic
    rotation angle are reported.
    """
    if not held_out:
        raise ValueError("need at least one held-out pair to evaluate")
    y_inv = invert(sol.y_camera_to_robot)
    pos_errors = []
    rot_errors = []
    for pair in held_out:
        predicted = compose(compose(y_inv, pair.robot), sol.x_marker_to_ef)
        pos_errors.append(
            float(np.linalg.norm(predicted.translation - pair.marker.translation))
        )
        rot_errors.append(
            rotation_angle_between(predicted.rotation, pair.marker.rotation)
        )
    pos = np.asarray(pos_errors)
    rot = np.asarray(rot_errors)
    return CalibrationErrorReport(
        position_error_mean=float(pos.mean()),
        position_error_std=float(pos.std()),
        rotation_error_mean=float(rot.mean()),
        rotation_error_std=float(rot.std()),
        n_eval=len(held_out),
    )


def split_pairs(
    pairs: list[PosePair], n_calibration: int, rng_seed: int
) -> tuple[list[PosePair], list[PosePair]]:
    """Seeded shuffle split into (calibration, evaluation) sets."""
    if n_calibration < 1:
        raise ValueError("n_calibration must be at least 1")
    if n_calibration >= len(pairs):
        raise ValueError(
            f"n_calibration ({n_calibration}) must be smaller than the "
            f"number of pairs ({len(pairs)})"
        )
    perm = np.random.default_rng(rng_seed).permutation(len(pairs))
    calibration = [pairs[i] for i in perm[:n_calibration]]
    evaluation = [pairs[i] for i in perm[n_calibration:]]
    return calibration, evaluation


def synthesize_pose_pairs(
    true_x: RigidTransform,
    true_y: RigidTransform,
    n_pairs: int,
    noise: NoiseParams = NoiseParams(),
    rng_seed: int | np.random.Generator = 0,
    translation_scale: float = 0.3,
) -> list[PosePair]:
    """Generate consistent pose pairs for a known ground-truth (X, Y).

    Robot poses get rotations about random axes (angles 0.3 to 2.6 rad, so the
    set is never rotation-degenerate) and translations uniform in a cube of
    half-width ``translation_scale`` meters. Marker poses follow from the
    chain exactly and are then perturbed with the given noise.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    rng = (
        rng_seed
        if isinstance(rng_seed, np.random.Generator)
        else np.random.default_rng(rng_seed)
    )
    y_inv = invert(true_y)
    pairs = []
    for _ in range(n_pairs):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(0.3, 2.6)
        translation = rng.uniform(-translation_scale, translation_scale, 3)
        robot = from_axis_angle(axis, angle, translation)
        marker = compose(compose(y_inv, robot), true_x)
        marker = perturb(marker, noise, rng)
        pairs.append(PosePair(robot=robot, marker=marker))
    return pairs


def solution_to_json(sol: HandEyeSolution) -> dict:
    return {
        "x_marker_to_ef": pose_to_json(sol.x_marker_to_ef),
        "y_camera_to_robot": pose_to_json(sol.y_camera_to_robot),
        "residual_rms": sol.residual_rms,
    }


def solution_from_json(obj: dict) -> HandEyeSolution:
    return HandEyeSolution(
        x_marker_to_ef=pose_from_json(obj["x_marker_to_ef"]),
        y_camera_to_robot=pose_from_json(obj["y_camera_to_robot"]),
        residual_rms=float(obj["residual_rms"]),
    )


def save_pose_pairs(path, pairs: list[PosePair]) -> None:
    records = [
        {"robot": pose_to_json(p.robot), "marker": pose_to_json(p.marker)}
        for p in pairs
    ]
    with open(path, "w", encoding="ascii") as f:
        json.dump(records, f)


def load_pose_pairs(path) -> list[PosePair]:
    with open(path, "r", encoding="ascii") as f:
        records = json.load(f)
    if not isinstance(records, list):
        raise ValueError(f"{path}: pose-pair file must hold a JSON array")
    return [
        PosePair(robot=pose_from_json(r["robot"]), marker=pose_from_json(r["marker"]))
        for r in records
    ]
