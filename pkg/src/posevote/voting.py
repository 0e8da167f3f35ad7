"""Point-wise box-face voting and confidence-weighted plane fitting.

Each point predicts, for each of the six box faces, a unit direction, a
distance and a confidence. Moving every point along its vote lands it on the
face plane; a confidence-weighted total-least-squares fit over those landing
points recovers the plane, and six planes recover the box.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import (
    DegenerateInputError,
    InvalidArgumentError,
    Pose,
    PointCloud,
    as_points,
    as_vec3,
)

DEFAULT_K2 = 1.0 / 303.5
MIN_EFFECTIVE_WEIGHT = 1e-6
MAX_OPPOSITE_ANGLE_DEG = 10.0


class FaceId(str, enum.Enum):
    Y_POS = "y+"
    Y_NEG = "y-"
    X_POS = "x+"
    X_NEG = "x-"
    Z_POS = "z+"
    Z_NEG = "z-"

    @property
    def axis(self) -> int:
        return "xyz".index(self.value[0])

    @property
    def sign(self) -> float:
        return 1.0 if self.value[1] == "+" else -1.0

    @property
    def index(self) -> int:
        return FACES.index(self)

    @property
    def opposite(self) -> "FaceId":
        return FaceId(self.value[0] + ("-" if self.value[1] == "+" else "+"))

    def canonical_normal(self) -> np.ndarray:
        n = np.zeros(3)
        n[self.axis] = self.sign
        return n


FACES: tuple[FaceId, ...] = tuple(FaceId)
POSITIVE_FACES = (FaceId.X_POS, FaceId.Y_POS, FaceId.Z_POS)


@dataclass(frozen=True)
class FaceVoteSet:
    """Votes of N points toward the six faces, indexed ``[point, FaceId.index]``.

    directions: (N, 6, 3) unit vectors; distances: (N, 6) meters, >= 0;
    confidences: (N, 6) in [0, 1]. A zero confidence removes the vote from
    plane fitting entirely (used to ablate known outliers).
    """

    directions: np.ndarray
    distances: np.ndarray
    confidences: np.ndarray

    def __post_init__(self):
        dirs = np.array(self.directions, dtype=float)
        dist = np.array(self.distances, dtype=float)
        conf = np.array(self.confidences, dtype=float)
        if dirs.ndim != 3 or dirs.shape[1:] != (6, 3):
            raise InvalidArgumentError(f"directions must have shape (N, 6, 3), got {dirs.shape}")
        n = dirs.shape[0]
        if dist.shape != (n, 6) or conf.shape != (n, 6):
            raise InvalidArgumentError("distances/confidences must have shape (N, 6)")
        if not (np.all(np.isfinite(dirs)) and np.all(np.isfinite(dist)) and np.all(np.isfinite(conf))):
            raise InvalidArgumentError("votes contain non-finite values")
        if np.max(np.abs(np.linalg.norm(dirs, axis=2) - 1.0), initial=0.0) > 1e-9:
            raise InvalidArgumentError("vote directions must be unit length")
        if np.any(dist < 0):
            raise InvalidArgumentError("vote distances must be non-negative")
        if np.any(conf < 0) or np.any(conf > 1):
            raise InvalidArgumentError("vote confidences must lie in [0, 1]")
        for name, arr in (("directions", dirs), ("distances", dist), ("confidences", conf)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.directions.shape[0]

    def for_face(self, face: FaceId) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        i = FaceId(face).index
        return self.directions[:, i], self.distances[:, i], self.confidences[:, i]


@dataclass(frozen=True)
class PlaneParams:
    """Plane ``N . x = D`` with unit normal ``N``."""

    N: np.ndarray
    D: float

    def __post_init__(self):
        N = as_vec3(self.N, "N")
        if abs(np.linalg.norm(N) - 1.0) > 1e-9:
            raise InvalidArgumentError("plane normal must be unit length")
        N.flags.writeable = False
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "D", float(self.D))

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.N - self.D

    def flipped(self) -> "PlaneParams":
        return PlaneParams(-self.N, -self.D)


def project_votes(P, votes: FaceVoteSet, face: FaceId) -> np.ndarray:
    """Landing points ``p + n * d`` of every point's vote for ``face``."""
    pts = P.points if isinstance(P, PointCloud) else as_points(P)
    if len(pts) != len(votes):
        raise InvalidArgumentError(
            f"point cloud has {len(pts)} points but votes cover {len(votes)}"
        )
    n, d, _ = votes.for_face(face)
    return pts + n * d[:, None]


def fit_plane_weighted(points, weights, orientation_hint=None) -> PlaneParams:
    """Plane minimizing ``sum w_j (N . p_j - D)^2`` subject to ``|N| = 1``.

    The weighted centroid fixes ``D`` and the normal is the eigenvector of the
    weighted scatter matrix with the smallest eigenvalue. Eigenvectors carry
    no sign, so ``N`` is flipped to agree with ``orientation_hint`` when given,
    otherwise to make ``D >= 0``. Zero-weight points are dropped before any
    arithmetic so they cannot perturb the result.
    """
    pts = as_points(points)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if len(w) != len(pts):
        raise InvalidArgumentError("one weight per point is required")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise InvalidArgumentError("weights must be finite and non-negative")
    keep = w > 0
    pts, w = pts[keep], w[keep]
    if np.count_nonzero(w > MIN_EFFECTIVE_WEIGHT) < 3:
        raise DegenerateInputError("plane fit needs at least 3 points with non-negligible weight")

    centroid = (w @ pts) / w.sum()
    centered = pts - centroid
    scatter = (centered * w[:, None]).T @ centered
    evals, evecs = np.linalg.eigh(scatter)
    if evals[2] <= 0 or evals[1] <= 1e-12 * evals[2]:
        raise DegenerateInputError("plane support is collinear")
    N = evecs[:, 0]
    if orientation_hint is not None:
        if np.dot(N, as_vec3(orientation_hint, "orientation_hint")) < 0:
            N = -N
    elif np.dot(N, centroid) < 0:
        N = -N
    N = N / np.linalg.norm(N)
    return PlaneParams(N, float(N @ centroid))


def plane_residual(plane: PlaneParams, points, weights) -> float:
    r = plane.signed_distance(as_points(points))
    return float(np.asarray(weights, dtype=float) @ (r * r))


def face_distances(points, face: FaceId, gt: Pose) -> np.ndarray:
    """Distance of each point to ``face`` of the ground-truth box, along the face normal.

    Positive inside the box. Measured in the canonical frame as
    ``s[axis]/2 - sign * q[axis]`` with ``q = R^T (p - t)``.
    """
    face = FaceId(face)
    q = gt.to_canonical(as_points(points))
    return gt.s[face.axis] / 2.0 - face.sign * q[:, face.axis]


def face_normal_world(face: FaceId, pose: Pose) -> np.ndarray:
    face = FaceId(face)
    return face.sign * pose.R[:, face.axis]


def vote_confidence_targets(distances, directions, points, face: FaceId, gt: Pose,
                            k2: float = DEFAULT_K2) -> np.ndarray:
    """Vectorized confidence target ``exp(-|d n - f r_gt| / k2)`` for one face."""
    d = np.asarray(distances, dtype=float).reshape(-1)
    n = np.asarray(directions, dtype=float).reshape(-1, 3)
    f = face_distances(points, face, gt)
    r_gt = face_normal_world(face, gt)
    residual = np.linalg.norm(d[:, None] * n - f[:, None] * r_gt, axis=1)
    conf = np.exp(-residual / k2)
    return np.clip(conf, np.finfo(float).tiny, 1.0)


def vote_confidence_target(d: float, n, p, face: FaceId, gt: Pose,
                           k2: float = DEFAULT_K2) -> float:
    return float(vote_confidence_targets([d], as_vec3(n, "n"), as_vec3(p, "p"), face, gt, k2)[0])


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    extents: np.ndarray
    axes: np.ndarray  # columns are the box x, y, z axes

    def __iter__(self):
        return iter((self.center, self.extents, self.axes))


def _nearest_rotation(M: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def recover_box(planes: Mapping[FaceId, PlaneParams]) -> Box:
    """Center, full extents and axes of the box bounded by six face planes.

    For each axis the two opposite normals are averaged into a common normal
    ``m = (N+ - N-)/|N+ - N-|``; the faces then sit at ``m . x = D+`` and
    ``m . x = -D-``, so the extent is ``D+ + D-`` and the mid-plane offset is
    ``(D+ - D-)/2``. The center solves the three mid-plane equations.
    """
    planes = {FaceId(k): v for k, v in planes.items()}
    missing = [f.value for f in FACES if f not in planes]
    if missing:
        raise InvalidArgumentError(f"missing planes for faces {missing}")
    cos_limit = np.cos(np.deg2rad(MAX_OPPOSITE_ANGLE_DEG))

    normals, offsets, extents = [], [], []
    for axis in "xyz":
        pos, neg = planes[FaceId(axis + "+")], planes[FaceId(axis + "-")]
        if -np.dot(pos.N, neg.N) < cos_limit:
            raise DegenerateInputError(f"{axis}+ and {axis}- planes are not anti-parallel")
        m = pos.N - neg.N
        m /= np.linalg.norm(m)
        normals.append(m)
        offsets.append(0.5 * (pos.D - neg.D))
        extents.append(abs(pos.D + neg.D))
    M = np.array(normals)
    if abs(np.linalg.det(M)) < 1e-6:
        raise DegenerateInputError("mid-planes are near-parallel")
    center = np.linalg.solve(M, np.array(offsets))
    axes = _nearest_rotation(M.T)
    return Box(center, np.array(extents), axes)
