"""Pose recovery from a prediction bundle and local refinement on the consistency losses."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import PoseGeometryError, Pose, PointCloud, CategoryPrior
from .losses import (
    LossBreakdown,
    LossSettings,
    geometric_gradient,
    geometric_objective,
    perturb,
)
from .rotation import assemble_size, assemble_translation, calibrate
from .voting import FACES, Box, FaceId, PlaneParams, fit_plane_weighted, project_votes, recover_box

log = logging.getLogger(__name__)


def recover_pose(bundle, P: PointCloud, prior: CategoryPrior) -> Pose:
    """Closed-form pose: calibrated rotation, ``t_res + mean(P)``, ``s_res + mean size``."""
    cal = calibrate(bundle.rotation)
    t = assemble_translation(bundle.t_res, P)
    s = assemble_size(bundle.s_res, prior)
    return Pose(cal.R, t, s)


def fit_face_planes(votes, P, weighted: bool = True) -> dict[FaceId, PlaneParams]:
    """Fit all six face planes from the votes.

    With ``weighted=False`` every vote counts equally, which is the baseline
    the confidence weighting is compared against.
    """
    planes = {}
    for face in FACES:
        landing = project_votes(P, votes, face)
        n, d, c = votes.for_face(face)
        w = c if weighted else np.ones_like(c)
        # weighted displacements; zero-length votes say nothing about orientation
        hint = ((w * d)[:, None] * n).sum(axis=0)
        planes[face] = fit_plane_weighted(landing, w, orientation_hint=hint if np.any(hint) else None)
    return planes


def recover_box_from_votes(bundle, P, weighted: bool = True) -> Box:
    return recover_box(fit_face_planes(bundle.votes, P, weighted))


def box_pose(box: Box) -> Pose:
    return Pose(box.axes, box.center, box.extents)


@dataclass(frozen=True)
class RefineConfig:
    step_rot: float = 1e-2  # rad, initial trial step
    step_t: float = 1e-2  # m
    step_s: float = 1e-2  # m
    iters: int = 100
    backtracking: bool = True
    grow: float = 1.5
    shrink: float = 0.5
    max_halvings: int = 30
    settings: LossSettings = field(default_factory=LossSettings)


class RefinementError(PoseGeometryError):
    def __init__(self, message: str, trace: list[LossBreakdown]):
        super().__init__(message)
        self.trace = trace


BLOCKS = (slice(0, 3), slice(3, 6), slice(6, 9))


def _block_step(grad: np.ndarray, block: slice, length: float) -> np.ndarray:
    """Steepest-descent step of the given length restricted to one block."""
    step = np.zeros(9)
    n = np.linalg.norm(grad[block])
    if n > 0:
        step[block] = -length * grad[block] / n
    return step


def refine_pose(init: Pose, P: PointCloud, planes, visible=(), config: RefineConfig = RefineConfig()
                ) -> tuple[Pose, list[LossBreakdown]]:
    """Descend the consistency objective from ``init`` with left-multiplied rotation updates.

    Every iteration takes one normalized (sub)gradient step per block
    (rotation, translation, size), each with its own step length, since the
    blocks live on unrelated scales. With backtracking a block step is
    accepted only if it does not increase the total; its length grows after a
    success and shrinks after a failure. Without backtracking every step is
    taken at the current lengths. The trace holds the breakdown of every
    accepted iterate, starting with ``init``.
    """
    settings = config.settings
    visible = list(visible)
    pose = init
    current = geometric_objective(pose, P, planes, visible, settings)
    trace = [current]
    if not np.isfinite(current.total):
        raise RefinementError("initial loss is not finite", trace)
    scale = np.array([config.step_rot, config.step_t, config.step_s], dtype=float)
    tries = config.max_halvings if config.backtracking else 1

    for it in range(config.iters):
        grad = geometric_gradient(pose, P, planes, visible, settings)
        if not np.any(grad):
            break
        moved = False
        for k, block in enumerate(BLOCKS):
            if not np.any(grad[block]):
                continue
            for _ in range(tries):
                try:
                    trial = perturb(pose, _block_step(grad, block, scale[k]))
                except PoseGeometryError:
                    scale[k] *= config.shrink
                    continue
                cand = geometric_objective(trial, P, planes, visible, settings)
                if not np.isfinite(cand.total):
                    trace.append(cand)
                    raise RefinementError(f"loss became non-finite at iteration {it}", trace)
                if not config.backtracking or cand.total <= current.total:
                    pose, current = trial, cand
                    trace.append(cand)
                    moved = True
                    if config.backtracking:
                        scale[k] *= config.grow
                    break
                scale[k] *= config.shrink
        if not moved:
            log.debug("refinement stalled after %d iterations", it)
            break
    return pose, trace
