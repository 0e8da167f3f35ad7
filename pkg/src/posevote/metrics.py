"""Evaluation metrics: symmetry-aware rotation error, n-degree m-cm accuracy, 3D IoU."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import (
    InvalidArgumentError,
    Pose,
    SymmetryKind,
    SymmetryType,
    angle_between,
    axis_angle_matrix,
    geodesic_angle,
)

ACCURACY_THRESHOLDS = ((5.0, 2.0), (5.0, 5.0), (10.0, 5.0), (10.0, 10.0))
IOU_THRESHOLDS = (0.25, 0.50, 0.75)


def rotation_error(R_pred, R_gt, sym: SymmetryType | None = None) -> float:
    """Rotation error in degrees, minimized over the category's symmetries.

    Rotational symmetry: the smallest geodesic distance to any rotation of
    ``R_gt`` about the symmetry axis equals the angle between the two images
    of that axis. Reflection symmetry: the smaller of the errors to ``R_gt``
    and to ``R_gt`` composed with a half turn about the mirror normal (the
    mirror followed by a point inversion, which is a proper rotation).
    """
    R_pred = np.asarray(R_pred, dtype=float)
    R_gt = np.asarray(R_gt, dtype=float)
    if sym is None or sym.kind is SymmetryKind.NONE:
        return float(np.rad2deg(geodesic_angle(R_pred, R_gt)))
    a = sym.vector
    if sym.kind is SymmetryKind.ROTATIONAL:
        return float(np.rad2deg(angle_between(R_pred @ a, R_gt @ a)))
    flipped = R_gt @ axis_angle_matrix(a, np.pi)
    return float(np.rad2deg(min(geodesic_angle(R_pred, R_gt), geodesic_angle(R_pred, flipped))))


def translation_error_cm(t_pred, t_gt) -> float:
    return float(100.0 * np.linalg.norm(np.asarray(t_pred) - np.asarray(t_gt)))


@dataclass(frozen=True)
class PosePair:
    pred: Pose
    gt: Pose
    symmetry: SymmetryType | None = None

    @property
    def rot_err_deg(self) -> float:
        return rotation_error(self.pred.R, self.gt.R, self.symmetry)

    @property
    def trans_err_cm(self) -> float:
        return translation_error_cm(self.pred.t, self.gt.t)


def _errors(pairs) -> tuple[np.ndarray, np.ndarray]:
    """Accept PosePair objects or (rot_err_deg, trans_err_cm) tuples."""
    rot, trans = [], []
    for p in pairs:
        if isinstance(p, PosePair):
            rot.append(p.rot_err_deg)
            trans.append(p.trans_err_cm)
        else:
            r, t = p
            rot.append(float(r))
            trans.append(float(t))
    if not rot:
        raise InvalidArgumentError("need at least one pose pair")
    return np.array(rot), np.array(trans)


def pose_accuracy(pairs: Iterable, deg_thresh: float, cm_thresh: float) -> float:
    """Fraction of pairs with rotation error < ``deg_thresh`` and translation error < ``cm_thresh``."""
    rot, trans = _errors(pairs)
    return float(np.mean((rot < deg_thresh) & (trans < cm_thresh)))


def accuracy_table(pairs: Iterable, thresholds=ACCURACY_THRESHOLDS) -> dict[str, float]:
    rot, trans = _errors(pairs)
    return {f"{d:g}deg{c:g}cm": float(np.mean((rot < d) & (trans < c))) for d, c in thresholds}


@dataclass(frozen=True)
class IoUEstimate:
    iou: float
    stderr: float
    samples: int
    seed: int

    def __float__(self) -> float:
        return self.iou


def _inside(box: Pose, pts: np.ndarray) -> np.ndarray:
    q = box.to_canonical(pts)
    return np.all(np.abs(q) <= box.s / 2.0, axis=1)


def iou_3d(box_a: Pose, box_b: Pose, samples: int = 200_000, seed: int = 0,
           chunk: int = 1_000_000) -> IoUEstimate:
    """Monte-Carlo IoU of two oriented boxes.

    Samples uniformly inside ``box_a`` and counts the fraction inside
    ``box_b``; with exact volumes ``IoU = I / (V_a + V_b - I)``. The standard
    error is propagated from the binomial error of the fraction.
    """
    if samples < 1:
        raise InvalidArgumentError("samples must be positive")
    rng = np.random.default_rng(seed)
    hits = 0
    left = samples
    while left > 0:
        m = min(chunk, left)
        q = rng.uniform(-0.5, 0.5, size=(m, 3)) * box_a.s
        hits += int(_inside(box_b, box_a.to_camera(q)).sum())
        left -= m
    frac = hits / samples
    v_a, v_b = float(np.prod(box_a.s)), float(np.prod(box_b.s))
    inter = v_a * frac
    union = v_a + v_b - inter
    iou = inter / union
    se_frac = np.sqrt(frac * (1.0 - frac) / samples)
    stderr = v_a * se_frac * (v_a + v_b) / union**2
    return IoUEstimate(float(iou), float(stderr), samples, seed)


def aligned_gt_for_iou(pred: Pose, gt: Pose, sym: SymmetryType | None) -> Pose:
    """Rotate the ground-truth box about its symmetry axis to best match ``pred``.

    The box of a rotationally symmetric object is only defined up to that
    rotation, so IoU is taken against the closest equivalent ground truth.
    """
    if sym is None or sym.kind is not SymmetryKind.ROTATIONAL:
        return gt
    a = sym.vector
    rel = gt.R.T @ pred.R
    # maximize trace(Rot(a, phi)^T rel): closed form in the plane orthogonal to a
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    cos_c = np.trace(rel) - a @ rel @ a
    sin_c = np.trace(K.T @ rel)
    phi = np.arctan2(sin_c, cos_c)
    return gt.with_(R=gt.R @ axis_angle_matrix(a, phi))


def iou_precision(values: Sequence, threshold: float, samples: int = 200_000,
                  seed: int = 0) -> float:
    """Fraction of IoUs at or above ``threshold``.

    ``values`` holds IoU numbers or ``(pred, gt)`` box pairs, which are
    evaluated with :func:`iou_3d`.
    """
    ious = []
    for v in values:
        if isinstance(v, tuple) and len(v) == 2 and isinstance(v[0], Pose):
            ious.append(iou_3d(v[0], v[1], samples, seed).iou)
        else:
            ious.append(float(v))
    if not ious:
        raise InvalidArgumentError("need at least one IoU value")
    return float(np.mean(np.array(ious) >= threshold))


def axis_aligned_iou(center_a, size_a, center_b, size_b) -> float:
    """Exact IoU of two axis-aligned boxes (test oracle for :func:`iou_3d`)."""
    ca, sa, cb, sb = (np.asarray(x, dtype=float) for x in (center_a, size_a, center_b, size_b))
    lo = np.maximum(ca - sa / 2, cb - sb / 2)
    hi = np.minimum(ca + sa / 2, cb + sb / 2)
    inter = float(np.prod(np.clip(hi - lo, 0.0, None)))
    return inter / (float(np.prod(sa)) + float(np.prod(sb)) - inter)
