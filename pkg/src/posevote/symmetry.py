"""Symmetry-aware reconstruction targets.

The reconstruction target is built by a canonical-frame round trip: points
are mapped into the object frame with the ground-truth pose, the category
symmetry is applied there, and the result is mapped back into the camera
with the predicted pose.
"""

from __future__ import annotations

import numpy as np

from .core import (
    InvalidArgumentError,
    Pose,
    PointCloud,
    SymmetryKind,
    SymmetryType,
    as_points,
)

DEFAULT_LAMBDA2 = 1.0 / 8.0
GRID_STEP_DEG = 1.0
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _points(P) -> np.ndarray:
    return P.points if isinstance(P, PointCloud) else as_points(P)


def reflect(points: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Mirror points across the plane through the origin with unit ``normal``."""
    return points - 2.0 * np.outer(points @ normal, normal)


def rotate_about(points: np.ndarray, axis: np.ndarray, angles) -> np.ndarray:
    """Rotate ``points`` (N, 3) about unit ``axis`` by each angle.

    Returns shape (N, 3) for a scalar angle and (A, N, 3) for an array.
    """
    angles = np.asarray(angles, dtype=float)
    c = np.cos(angles)[..., None, None]
    s = np.sin(angles)[..., None, None]
    along = (points @ axis)[:, None] * axis
    return points * c + np.cross(axis, points) * s + along * (1.0 - c)


def _l1_to(points_rot: np.ndarray, target: np.ndarray) -> np.ndarray:
    return np.abs(points_rot - target).sum(axis=(-1, -2))


def best_axis_angle(source: np.ndarray, target: np.ndarray, axis: np.ndarray,
                    grid_step_deg: float = GRID_STEP_DEG, tol: float = 1e-12) -> float:
    """Angle about ``axis`` minimizing the L1 distance from rotated ``source`` to ``target``.

    A full-circle grid search brackets the minimum, then golden-section
    search refines it inside the two neighbouring grid cells.
    """
    step = np.deg2rad(grid_step_deg)
    grid = np.arange(0.0, 2.0 * np.pi, step)
    costs = _l1_to(rotate_about(source, axis, grid), target)
    best = grid[int(np.argmin(costs))]

    def cost(a: float) -> float:
        return float(_l1_to(rotate_about(source, axis, a), target))

    lo, hi = best - step, best + step
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, f2 = cost(x1), cost(x2)
    while hi - lo > tol:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _GOLDEN * (hi - lo)
            f1 = cost(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _GOLDEN * (hi - lo)
            f2 = cost(x2)
    return float(0.5 * (lo + hi))


def symmetry_map(P, pred: Pose, gt: Pose, sym: SymmetryType) -> np.ndarray:
    """Reconstruction target for ``P`` under the category symmetry ``sym``.

    * none: ``P`` carried from the ground-truth frame into the predicted one;
    * reflection: mirrored across the canonical symmetry plane first;
    * rotational: rotated about the canonical axis by the angle that best
      aligns it (L1) with the canonical coordinates under ``pred``, so that
      rotations about the axis are not penalized.
    """
    if not isinstance(sym, SymmetryType):
        raise InvalidArgumentError(f"expected a SymmetryType, got {type(sym).__name__}")
    pts = _points(P)
    q = gt.to_canonical(pts)
    if sym.kind is SymmetryKind.REFLECTION:
        q = reflect(q, sym.vector)
    elif sym.kind is SymmetryKind.ROTATIONAL:
        q_pred = pred.to_canonical(pts)
        angle = best_axis_angle(q, q_pred, sym.vector)
        q = rotate_about(q, sym.vector, angle)
    return pred.to_camera(q)


def symmetry_reconstruction_loss(P_rec, P, pred: Pose, gt: Pose, sym: SymmetryType,
                                 lambda2: float = DEFAULT_LAMBDA2) -> float:
    """``lambda2`` times the mean per-point L1 distance to the symmetry target."""
    rec = _points(P_rec)
    pts = _points(P)
    if rec.shape != pts.shape:
        raise InvalidArgumentError("reconstruction and input clouds differ in size")
    target = symmetry_map(pts, pred, gt, sym)
    return float(lambda2 * np.abs(rec - target).sum(axis=1).mean())
