"""Geometric primitives shared by every other module.

Conventions used throughout the package:

* vectors are ``numpy`` arrays of shape ``(3,)``; matrices are ``(3, 3)``
  arrays indexed ``M[row, col]`` (row-major storage);
* a rotation ``R`` maps object (canonical) coordinates to camera
  coordinates, ``x_cam = R @ x_obj + t``, so its columns are the object
  axes expressed in the camera frame;
* lengths are in meters and angles in radians;
* sizes ``s`` are full box extents along the object x, y, z axes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

# Tolerances, kept in one place so tests and docs agree.
UNIT_NORM_TOL = 1e-12
AXIS_NORM_TOL = 1e-9
ORTHONORMAL_TOL = 1e-9
DET_TOL = 1e-6
PARALLEL_TOL = 1e-9


class PoseGeometryError(ValueError):
    """Base class for all input errors raised by this package."""


class InvalidArgumentError(PoseGeometryError):
    pass


class DegenerateInputError(PoseGeometryError):
    """Raised when a geometric construction is undefined for the input."""


class InvalidSizeError(PoseGeometryError):
    pass


def as_vec3(v, name: str = "vector") -> np.ndarray:
    arr = np.array(v, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise InvalidArgumentError(f"{name} must have 3 components, got shape {np.shape(v)}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite components")
    return arr


def as_mat3(m, name: str = "matrix") -> np.ndarray:
    arr = np.array(m, dtype=float)
    if arr.shape != (3, 3):
        raise InvalidArgumentError(f"{name} must be 3x3, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite components")
    return arr


def as_points(points, name: str = "points") -> np.ndarray:
    arr = np.array(points, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 3)
    if arr.ndim == 1 and arr.shape == (3,):
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidArgumentError(f"{name} must have shape (N, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite components")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def is_rotation(R: np.ndarray, tol: float = ORTHONORMAL_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    ortho = np.max(np.abs(R.T @ R - np.eye(3)))
    return bool(ortho < tol and abs(np.linalg.det(R) - 1.0) < DET_TOL)


def rodrigues_rotate(v, axis, angle: float) -> np.ndarray:
    """Rotate ``v`` by ``angle`` radians about the unit ``axis``.

    Evaluates ``v cos a + (k x v) sin a + k (k . v)(1 - cos a)``. The axis
    must already be normalized; a non-unit axis raises
    :class:`InvalidArgumentError` instead of being silently rescaled.
    """
    v = as_vec3(v, "v")
    k = as_vec3(axis, "axis")
    if abs(np.linalg.norm(k) - 1.0) > AXIS_NORM_TOL:
        raise InvalidArgumentError("rotation axis must be unit length")
    c, s = np.cos(angle), np.sin(angle)
    return v * c + np.cross(k, v) * s + k * np.dot(k, v) * (1.0 - c)


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rotation matrix of ``angle`` radians about unit ``axis``."""
    k = as_vec3(axis, "axis")
    if abs(np.linalg.norm(k) - 1.0) > AXIS_NORM_TOL:
        raise InvalidArgumentError("rotation axis must be unit length")
    K = skew(k)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def exp_so3(omega) -> np.ndarray:
    """Matrix exponential of the rotation vector ``omega``."""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    K = skew(omega)
    if theta < 1e-8:
        # second-order Taylor expansion; exact to machine precision here
        return np.eye(3) + K + 0.5 * (K @ K)
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * K
        + ((1.0 - np.cos(theta)) / theta**2) * (K @ K)
    )


def geodesic_angle(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Angle in radians of the relative rotation ``R_a^T R_b``."""
    rel = np.asarray(R_a).T @ np.asarray(R_b)
    sin_part = 0.5 * np.linalg.norm(
        [rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]]
    )
    cos_part = 0.5 * (np.trace(rel) - 1.0)
    return float(np.arctan2(sin_part, cos_part))


def angle_between(a, b) -> float:
    """Unsigned angle between two non-zero vectors, in ``[0, pi]``.

    Uses ``atan2(|a x b|, a . b)`` which stays accurate near 0 and pi where
    ``acos`` loses half the significant digits.
    """
    a = as_vec3(a, "a")
    b = as_vec3(b, "b")
    if not np.any(a) or not np.any(b):
        raise InvalidArgumentError("angle_between is undefined for a zero vector")
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))


class SymmetryKind(str, enum.Enum):
    NONE = "none"
    REFLECTION = "reflection"
    ROTATIONAL = "rotational"


@dataclass(frozen=True)
class SymmetryType:
    """Symmetry of a category in its canonical frame.

    ``vector`` is the reflection-plane normal (plane through the origin) for
    ``REFLECTION`` and the symmetry axis for ``ROTATIONAL``; it is ignored for
    ``NONE``.
    """

    kind: SymmetryKind = SymmetryKind.NONE
    vector: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))

    def __post_init__(self):
        try:
            kind = SymmetryKind(self.kind)
        except ValueError:
            raise InvalidArgumentError(f"unknown symmetry kind {self.kind!r}") from None
        vec = as_vec3(self.vector, "symmetry vector")
        n = np.linalg.norm(vec)
        if kind is not SymmetryKind.NONE and abs(n - 1.0) > AXIS_NORM_TOL:
            raise InvalidArgumentError("symmetry plane normal / axis must be unit length")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "vector", _frozen(vec))

    def __eq__(self, other):
        if not isinstance(other, SymmetryType):
            return NotImplemented
        if self.kind is not other.kind:
            return False
        return self.kind is SymmetryKind.NONE or bool(np.array_equal(self.vector, other.vector))

    def __hash__(self):
        if self.kind is SymmetryKind.NONE:
            return hash(self.kind)
        return hash((self.kind, self.vector.tobytes()))

    @classmethod
    def none(cls) -> "SymmetryType":
        return cls(SymmetryKind.NONE)

    @classmethod
    def reflection(cls, normal=(1.0, 0.0, 0.0)) -> "SymmetryType":
        return cls(SymmetryKind.REFLECTION, np.asarray(normal, dtype=float))

    @classmethod
    def rotational(cls, axis=(0.0, 1.0, 0.0)) -> "SymmetryType":
        return cls(SymmetryKind.ROTATIONAL, np.asarray(axis, dtype=float))


@dataclass(frozen=True)
class Pose:
    """Rigid transform plus metric size of one object instance."""

    R: np.ndarray
    t: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        R = as_mat3(self.R, "R")
        if np.max(np.abs(R.T @ R - np.eye(3))) >= ORTHONORMAL_TOL:
            raise InvalidArgumentError("R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > DET_TOL:
            raise InvalidArgumentError("R must have determinant +1")
        s = as_vec3(self.s, "s")
        if np.any(s <= 0):
            raise InvalidSizeError(f"size components must be positive, got {s}")
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "t", _frozen(as_vec3(self.t, "t")))
        object.__setattr__(self, "s", _frozen(s))

    def to_canonical(self, points) -> np.ndarray:
        """Map camera-frame points into the object frame: ``R^T (p - t)``."""
        return (np.asarray(points, dtype=float) - self.t) @ self.R

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.R.T + self.t

    def with_(self, R=None, t=None, s=None) -> "Pose":
        return Pose(
            self.R if R is None else R,
            self.t if t is None else t,
            self.s if s is None else s,
        )

    def to_dict(self) -> dict:
        return {"R": self.R.tolist(), "t": self.t.tolist(), "s": self.s.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.array(d["R"]), np.array(d["t"]), np.array(d["s"]))


@dataclass(frozen=True)
class RotationPrediction:
    """Two predicted box-face normals and their confidences.

    Normals are normalized on construction. Confidences lie in ``[0, 1]``; a
    zero confidence is allowed so the limiting cases of the calibration can be
    expressed exactly, but at least one must be positive.
    """

    r_x: np.ndarray
    r_y: np.ndarray
    c_x: float = 1.0
    c_y: float = 1.0

    def __post_init__(self):
        rx = as_vec3(self.r_x, "r_x")
        ry = as_vec3(self.r_y, "r_y")
        nx, ny = np.linalg.norm(rx), np.linalg.norm(ry)
        if nx == 0 or ny == 0:
            raise InvalidArgumentError("predicted normals must be non-zero")
        rx, ry = rx / nx, ry / ny
        if abs(np.dot(rx, ry)) >= 1.0 - PARALLEL_TOL:
            raise DegenerateInputError("predicted normals are parallel")
        cx, cy = float(self.c_x), float(self.c_y)
        for name, c in (("c_x", cx), ("c_y", cy)):
            if not (np.isfinite(c) and 0.0 <= c <= 1.0):
                raise InvalidArgumentError(f"{name} must lie in [0, 1], got {c}")
        if cx + cy <= 0:
            raise InvalidArgumentError("at least one confidence must be positive")
        object.__setattr__(self, "r_x", _frozen(rx))
        object.__setattr__(self, "r_y", _frozen(ry))
        object.__setattr__(self, "c_x", cx)
        object.__setattr__(self, "c_y", cy)


@dataclass(frozen=True)
class CategoryPrior:
    mean_size: np.ndarray
    symmetry: SymmetryType = field(default_factory=SymmetryType.none)

    def __post_init__(self):
        m = as_vec3(self.mean_size, "mean_size")
        if np.any(m <= 0):
            raise InvalidSizeError("category mean size must be positive")
        object.__setattr__(self, "mean_size", _frozen(m))


@dataclass(frozen=True)
class PointCloud:
    """Camera-frame points with optional canonical correspondences."""

    points: np.ndarray
    canonical: np.ndarray | None = None

    def __post_init__(self):
        pts = as_points(self.points)
        if len(pts) == 0:
            raise InvalidArgumentError("point cloud is empty")
        object.__setattr__(self, "points", _frozen(pts))
        if self.canonical is not None:
            can = as_points(self.canonical, "canonical")
            if can.shape != pts.shape:
                raise InvalidArgumentError("canonical correspondences must match the points")
            object.__setattr__(self, "canonical", _frozen(can))

    def __len__(self) -> int:
        return len(self.points)


def point_cloud_mean(P) -> np.ndarray:
    pts = P.points if isinstance(P, PointCloud) else as_points(P)
    if len(pts) == 0:
        raise InvalidArgumentError("point cloud is empty")
    return pts.mean(axis=0)
