"""Rigid-body transforms: 3x3 rotation matrices plus translations in meters.

Every downstream stage (hand-eye calibration, rendering, label propagation)
is a chain of these transforms, so validity is enforced eagerly: a
``Rotation`` is always orthonormal with determinant +1 to within
``ORTHONORMALITY_TOL``. All types are immutable; all operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# In-memory validity tolerance for rotation matrices.
ORTHONORMALITY_TOL = 1e-9
# Poses arriving over the wire (JSON) are accepted at a looser tolerance and
# then repaired to in-memory validity.
WIRE_ROTATION_TOL = 1e-6


def _vec3(value, name: str) -> np.ndarray:
    v = np.asarray(value, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v


@dataclass(frozen=True, eq=False)
class Rotation:
    """Proper rotation: 3x3 orthonormal matrix with determinant +1."""

    m: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("rotation matrix must be finite")
        ortho_err = np.abs(m.T @ m - np.eye(3)).max()
        if ortho_err > ORTHONORMALITY_TOL:
            raise ValueError(
                f"matrix is not orthonormal (max deviation {ortho_err:.3e})"
            )
        det = float(np.linalg.det(m))
        if abs(det - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError(f"matrix determinant {det!r} is not +1")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> Rotation:
        return cls(np.eye(3))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """SE(3) pose: rotation plus translation in meters.

    Applying the transform maps a point p to ``rotation.m @ p + translation``.
    """

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self) -> None:
        t = _vec3(self.translation, "translation").copy()
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(Rotation.identity(), np.zeros(3))


@dataclass(frozen=True)
class NoiseParams:
    """Gaussian pose-noise magnitudes: sigma_t in meters, sigma_r in radians."""

    sigma_t: float = 0.0
    sigma_r: float = 0.0

    def __post_init__(self) -> None:
        if self.sigma_t < 0 or self.sigma_r < 0:
            raise ValueError("noise sigmas must be non-negative")


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Chain two transforms: the result applies b first, then a."""
    return RigidTransform(
        Rotation(a.rotation.m @ b.rotation.m),
        a.rotation.m @ b.translation + a.translation,
    )


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.m.T
    return RigidTransform(Rotation(rt), -(rt @ t.translation))


def transform_point(t: RigidTransform, p) -> np.ndarray:
    p = _vec3(p, "point")
    return t.rotation.m @ p + t.translation


def transform_points(t: RigidTransform, pts) -> np.ndarray:
    """Apply a transform to an (N, 3) array of points."""
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
    return pts @ t.rotation.m.T + t.translation


def from_axis_angle(axis, angle: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
    """Build a transform from a unit rotation axis, an angle, and a translation.

    Uses the Rodrigues formula; raises if the axis is not unit length.
    """
    axis = _vec3(axis, "axis")
    norm = float(np.linalg.norm(axis))
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"axis must be unit length, got norm {norm!r}")
    k = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    m = np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)
    return RigidTransform(Rotation(m), _vec3(translation, "translation"))


def nearest_orthogonal(m) -> Rotation:
    """Closest rotation to an arbitrary nonsingular 3x3 matrix.

    Returns the orthogonal polar factor, with the smallest singular direction
    flipped if needed to force determinant +1. Idempotent on rotations.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
    u, s, vt = np.linalg.svd(m)
    if s[-1] <= 1e-12 * max(s[0], 1.0):
        raise ValueError("matrix is singular; no nearest rotation")
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = (u * np.array([1.0, 1.0, -1.0])) @ vt
    return Rotation(r)


def rotation_angle_between(a: Rotation, b: Rotation) -> float:
    """Geodesic angle between two rotations, in [0, pi].

    The cosine argument is clamped so that numerically identical rotations
    return exactly 0 instead of NaN.
    """
    rel = a.m.T @ b.m
    cos_angle = (np.trace(rel) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos_angle, -1.0, 1.0)))


def perturb(
    t: RigidTransform,
    noise: NoiseParams,
    rng: int | np.random.Generator,
) -> RigidTransform:
    """Apply Gaussian pose noise to a transform, deterministically per seed.

    The translation is offset by a per-axis Gaussian draw of std ``sigma_t``;
    the rotation is left-composed with a rotation about a uniformly random
    axis by a Gaussian angle of std ``sigma_r``. The same variates are drawn
    regardless of the sigmas, so passing a shared Generator keeps downstream
    draws aligned across noise settings.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    dt = noise.sigma_t * rng.standard_normal(3)
    axis = rng.standard_normal(3)
    axis_norm = float(np.linalg.norm(axis))
    if axis_norm < 1e-12:
        axis = np.array([0.0, 0.0, 1.0])
    else:
        axis = axis / axis_norm
    angle = noise.sigma_r * float(rng.standard_normal())
    dr = from_axis_angle(axis, angle).rotation
    return RigidTransform(Rotation(dr.m @ t.rotation.m), t.translation + dt)


def pose_to_json(t: RigidTransform) -> dict:
    """Serialize a pose as {"r": [9 row-major entries], "t": [3 meters]}."""
    return {
        "r": [float(x) for x in t.rotation.m.reshape(9)],
        "t": [float(x) for x in t.translation],
    }


def pose_from_json(obj: dict) -> RigidTransform:
    """Parse a pose dict, rejecting rotations invalid beyond the wire tolerance.

    Matrices valid at ``WIRE_ROTATION_TOL`` but not at the stricter in-memory
    tolerance are repaired via the polar factor; exactly valid matrices pass
    through unchanged so write/read round-trips are bit-exact.
    """
    if not isinstance(obj, dict) or "r" not in obj or "t" not in obj:
        raise ValueError("pose JSON must be an object with 'r' and 't' entries")
    r = np.asarray(obj["r"], dtype=float)
    if r.shape != (9,):
        raise ValueError(f"pose 'r' must hold 9 numbers, got shape {r.shape}")
    m = r.reshape(3, 3)
    if not np.all(np.isfinite(m)):
        raise ValueError("pose rotation must be finite")
    ortho_err = np.abs(m.T @ m - np.eye(3)).max()
    det_err = abs(float(np.linalg.det(m)) - 1.0)
    if ortho_err > WIRE_ROTATION_TOL or det_err > WIRE_ROTATION_TOL:
        raise ValueError(
            "pose rotation violates orthonormality beyond wire tolerance "
            f"(orthogonality {ortho_err:.3e}, determinant error {det_err:.3e})"
        )
    if ortho_err > ORTHONORMALITY_TOL or det_err > ORTHONORMALITY_TOL:
        rotation = nearest_orthogonal(m)
    else:
        rotation = Rotation(m)
    t = np.asarray(obj["t"], dtype=float)
    if t.shape != (3,):
        raise ValueError(f"pose 't' must hold 3 numbers, got shape {t.shape}")
    return RigidTransform(rotation, t)
