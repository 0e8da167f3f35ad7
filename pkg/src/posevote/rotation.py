"""Confidence-weighted calibration of two predicted face normals into a rotation.

The network head predicts the x and y box-face normals independently, so
they are generally not perpendicular. Calibration spreads the angular
correction over both normals, giving the less confident one the larger
share, then builds ``R = [r_x', r_y', r_x' x r_y']``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CategoryPrior,
    DegenerateInputError,
    InvalidSizeError,
    PARALLEL_TOL,
    PointCloud,
    RotationPrediction,
    angle_between,
    as_vec3,
    point_cloud_mean,
    rodrigues_rotate,
)

DEFAULT_K1 = 13.7


@dataclass(frozen=True)
class CalibrationResult:
    r_x_cal: np.ndarray
    r_y_cal: np.ndarray
    theta1: float  # correction applied to r_y
    theta2: float  # correction applied to r_x
    R: np.ndarray


def calibration_angles(theta: float, c_x: float, c_y: float) -> tuple[float, float]:
    """Closed-form minimizer of ``c_y*t1**2 + c_x*t2**2`` s.t. ``t1 + t2 = theta - pi/2``."""
    excess = theta - np.pi / 2
    total = c_x + c_y
    return c_x / total * excess, c_y / total * excess


def calibrate(pred: RotationPrediction) -> CalibrationResult:
    """Rotate both normals within their common plane until they are perpendicular.

    With ``a = r_x x r_y / |r_x x r_y|`` a positive rotation about ``a`` moves
    ``r_x`` toward ``r_y``. ``r_y`` is therefore rotated by ``-theta1`` and
    ``r_x`` by ``+theta2``; both shrink the angle when it exceeds 90 degrees and
    widen it otherwise, and the two shares add up to ``theta - pi/2``.
    """
    r_x, r_y = pred.r_x, pred.r_y
    cross = np.cross(r_x, r_y)
    norm = np.linalg.norm(cross)
    if abs(np.dot(r_x, r_y)) >= 1.0 - PARALLEL_TOL or norm == 0.0:
        raise DegenerateInputError("cannot calibrate parallel normals")
    axis = cross / norm
    theta = angle_between(r_x, r_y)
    theta1, theta2 = calibration_angles(theta, pred.c_x, pred.c_y)

    r_y_cal = rodrigues_rotate(r_y, axis, -theta1)
    r_x_cal = rodrigues_rotate(r_x, axis, theta2)
    R = np.column_stack([r_x_cal, r_y_cal, np.cross(r_x_cal, r_y_cal)])
    return CalibrationResult(r_x_cal, r_y_cal, float(theta1), float(theta2), R)


def rotation_confidence_target(r, r_gt, k1: float = DEFAULT_K1) -> float:
    """Confidence a normal prediction should carry: ``exp(-k1 |r - r_gt|^2)``."""
    diff = as_vec3(r, "r") - as_vec3(r_gt, "r_gt")
    return float(np.exp(-k1 * np.dot(diff, diff)))


def assemble_translation(t_res, P: PointCloud) -> np.ndarray:
    return as_vec3(t_res, "t_res") + point_cloud_mean(P)


def assemble_size(s_res, prior: CategoryPrior) -> np.ndarray:
    s = as_vec3(s_res, "s_res") + prior.mean_size
    if np.any(s <= 0):
        raise InvalidSizeError(f"assembled size must be positive, got {s}")
    return s
