"""Geometric consistency losses between pose, point cloud and voted box.

Pose gradients are 9-vectors ``[omega, t, s]`` where ``omega`` is a
rotation-vector perturbation applied on the left, ``R <- exp([omega]) R``.
L1 terms use the zero element of the sub-differential at kinks (``sign(0) =
0``); an optional Huber width smooths them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Mapping

import numpy as np

from .core import (
    InvalidArgumentError,
    Pose,
    PointCloud,
    RotationPrediction,
    SymmetryType,
    as_points,
    exp_so3,
)
from .rotation import DEFAULT_K1
from .symmetry import symmetry_reconstruction_loss
from .voting import (
    DEFAULT_K2,
    FACES,
    POSITIVE_FACES,
    FaceId,
    FaceVoteSet,
    PlaneParams,
    vote_confidence_targets,
)


@dataclass(frozen=True)
class SizeScoreParams:
    """Constants of the point-cloud size score.

    ``mode`` selects how the raw score is bounded: ``"clamp"`` maps it into
    ``[0, 1]``, ``"paper"`` applies ``min(0, .)`` literally, ``"raw"`` leaves
    it unbounded.
    """

    k_s: float = 10.0
    k_n: float = 0.5
    k_p: float = 1.0
    bin_count: int = 64
    cap: int = 5
    mode: str = "clamp"

    def __post_init__(self):
        if not (self.k_s > 0 and self.k_n > 0 and self.k_p > 0):
            raise InvalidArgumentError("k_s, k_n and k_p must be positive")
        if int(self.bin_count) < 1 or int(self.cap) < 1:
            raise InvalidArgumentError("bin_count and cap must be >= 1")
        if self.mode not in ("clamp", "paper", "raw"):
            raise InvalidArgumentError(f"unknown size score mode {self.mode!r}")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0 / 8.0
    lambda2: float = 1.0 / 8.0
    lambda3: float = 1.0 / 8.0
    lambda4: float = 1.0
    lambda5: float = 1.0
    lambda6: float = 1.0
    lambda7: float = 1.0
    lambda8: float = 1.0
    basic: float = 8.0
    bb: float = 1.0
    pc: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise InvalidArgumentError(f"loss weight {f.name} must be finite and >= 0")


@dataclass(frozen=True)
class LossSettings:
    weights: LossWeights = field(default_factory=LossWeights)
    size: SizeScoreParams = field(default_factory=SizeScoreParams)
    k1: float = DEFAULT_K1
    k2: float = DEFAULT_K2
    huber: float = 0.0
    bin_seed: int = 0


@dataclass(frozen=True)
class LossBreakdown:
    basic_rot_conf: float = 0.0
    basic_sym: float = 0.0
    basic_vote_conf: float = 0.0
    pc_rt: float = 0.0
    pc_s: float = 0.0
    bb_r: float = 0.0
    bb_t: float = 0.0
    bb_s: float = 0.0
    total: float = 0.0

    @property
    def basic(self) -> float:
        return self.basic_rot_conf + self.basic_sym + self.basic_vote_conf

    def as_dict(self) -> dict:
        return asdict(self)


def combine(w: LossWeights, *, basic_rot_conf=0.0, basic_sym=0.0, basic_vote_conf=0.0,
            pc_rt=0.0, pc_s=0.0, bb_r=0.0, bb_t=0.0, bb_s=0.0) -> LossBreakdown:
    """Assemble the overall objective from already computed terms.

    The basic terms carry their own weights (lambda1..3) already; the
    consistency terms are raw and weighted here.
    """
    basic = basic_rot_conf + basic_sym + basic_vote_conf
    bb = w.lambda6 * bb_r + w.lambda7 * bb_t + w.lambda8 * bb_s
    pc = w.lambda4 * pc_rt + w.lambda5 * pc_s
    total = w.basic * basic + w.bb * bb + w.pc * pc
    return LossBreakdown(float(basic_rot_conf), float(basic_sym), float(basic_vote_conf),
                         float(pc_rt), float(pc_s), float(bb_r), float(bb_t), float(bb_s),
                         float(total))


def _abs(x, huber: float = 0.0):
    """Absolute value (or Huber) and its derivative, elementwise."""
    x = np.asarray(x, dtype=float)
    if huber <= 0:
        return np.abs(x), np.sign(x)
    small = np.abs(x) <= huber
    val = np.where(small, 0.5 * x * x / huber, np.abs(x) - 0.5 * huber)
    der = np.where(small, x / huber, np.sign(x))
    return val, der


def _canonical_pairs(P) -> tuple[np.ndarray, np.ndarray]:
    if not isinstance(P, PointCloud) or P.canonical is None:
        raise InvalidArgumentError("point cloud needs ground-truth canonical correspondences")
    return P.points, P.canonical


# --- point cloud / pose -----------------------------------------------------

def pc_pose_loss(P: PointCloud, pred: Pose, huber: float = 0.0) -> float:
    """Sum over points of ``|R^T (p - t) - p_c|_1``."""
    pts, can = _canonical_pairs(P)
    val, _ = _abs(pred.to_canonical(pts) - can, huber)
    return float(val.sum())


def pc_pose_grad(P: PointCloud, pred: Pose, huber: float = 0.0) -> np.ndarray:
    pts, can = _canonical_pairs(P)
    v = pts - pred.t
    _, sgn = _abs(v @ pred.R - can, huber)
    g_cam = sgn @ pred.R.T  # R @ sgn_j per row
    grad = np.zeros(9)
    grad[:3] = np.cross(g_cam, v).sum(axis=0)
    grad[3:6] = -g_cam.sum(axis=0)
    return grad


def bin_sample(P, axis: FaceId, pred: Pose, bins: int = 64, cap: int = 5,
               seed: int = 0) -> np.ndarray:
    """Canonical coordinates along ``axis`` with every histogram bin capped at ``cap``.

    Coordinates are signed so that the face direction is positive (``x-``
    yields ``-x``). Bins span the observed range; a bin holding more than
    ``cap`` points keeps a uniform random subset of ``cap``. Surviving values
    are returned in original point order.
    """
    pts = P.points if isinstance(P, PointCloud) else as_points(P)
    if len(pts) == 0:
        raise InvalidArgumentError("cannot bin-sample an empty cloud")
    if bins < 1 or cap < 1:
        raise InvalidArgumentError("bins and cap must be >= 1")
    face = FaceId(axis)
    coords = face.sign * pred.to_canonical(pts)[:, face.axis]
    lo, hi = coords.min(), coords.max()
    if hi > lo:
        idx = np.floor((coords - lo) / (hi - lo) * bins).astype(int)
        idx = np.clip(idx, 0, bins - 1)
    else:
        idx = np.zeros(len(coords), dtype=int)
    # random tie-break keys: the first ``cap`` members of each bin in key
    # order form a uniform random subset of that bin
    keys = np.random.default_rng(seed).random(len(coords))
    order = np.lexsort((keys, idx))
    sorted_bins = idx[order]
    starts = np.searchsorted(sorted_bins, sorted_bins, side="left")
    rank = np.arange(len(order)) - starts
    keep = np.zeros(len(coords), dtype=bool)
    keep[order[rank < cap]] = True
    return coords[keep]


def size_score_raw(P_s, s_half: float, params: SizeScoreParams = SizeScoreParams()) -> float:
    """Unbounded size score ``(k_p/n) * f_p(s) * f_d(s)``."""
    p = np.asarray(P_s, dtype=float).reshape(-1)
    if len(p) == 0:
        raise InvalidArgumentError("size score needs at least one sample")
    if not s_half > 0:
        raise InvalidArgumentError("half extent must be positive")
    n = len(p)
    alpha = np.where(p <= s_half, 1.0, -1.0)
    f_p = np.exp(params.k_n / n * np.sum(alpha + 1.0))
    f_d = np.sum(alpha * np.exp(-params.k_s * (s_half - p) ** 2))
    return float(params.k_p / n * f_p * f_d)


def size_score(P_s, s_half: float, params: SizeScoreParams = SizeScoreParams()) -> float:
    raw = size_score_raw(P_s, s_half, params)
    if params.mode == "clamp":
        return min(1.0, max(0.0, raw))
    if params.mode == "paper":
        return min(0.0, raw)
    return raw


def pc_size_loss(P, pred: Pose, visible: Iterable[FaceId],
                 params: SizeScoreParams = SizeScoreParams(), weight: float = 1.0,
                 seed: int = 0) -> float:
    """``weight * sum |1 - f(s_i/2)|`` over the visible faces among x+, y+, z+."""
    visible = {FaceId(f) for f in visible}
    total = 0.0
    for face in POSITIVE_FACES:
        if face not in visible:
            continue
        samples = bin_sample(P, face, pred, params.bin_count, params.cap, seed + face.axis)
        total += abs(1.0 - size_score(samples, pred.s[face.axis] / 2.0, params))
    return float(weight * total)


# --- bounding box / pose ------------------------------------------------------

@dataclass(frozen=True)
class BBTerms:
    bb_r: float
    bb_t: float
    bb_s: float

    def __iter__(self):
        return iter((self.bb_r, self.bb_t, self.bb_s))


def _check_planes(planes: Mapping[FaceId, PlaneParams]) -> dict:
    planes = {FaceId(k): v for k, v in planes.items()}
    missing = [f.value for f in FACES if f not in planes]
    if missing:
        raise InvalidArgumentError(f"missing planes for faces {missing}")
    return planes


def bb_pose_loss(pred: Pose, planes: Mapping[FaceId, PlaneParams],
                 huber: float = 0.0) -> BBTerms:
    """Rotation, translation and size consistency between a pose and six face planes.

    The size term compares half extents ``s_i/2`` with the center-to-face
    distance ``|N_i . t - D_i|``.
    """
    planes = _check_planes(planes)
    t = pred.t
    dist = {f: abs(float(planes[f].N @ t - planes[f].D)) for f in FACES}
    l_t = 0.0
    for axis in "xyz":
        l_t += float(_abs(dist[FaceId(axis + "+")] - dist[FaceId(axis + "-")], huber)[0])
    l_s = 0.0
    for f in FACES:
        l_s += float(_abs(pred.s[f.axis] / 2.0 - dist[f], huber)[0])
    l_r = float(_abs(pred.R[:, 1] - planes[FaceId.Y_POS].N, huber)[0].sum()
                + _abs(pred.R[:, 0] - planes[FaceId.X_POS].N, huber)[0].sum())
    return BBTerms(l_r, l_t, l_s)


def bb_pose_grads(pred: Pose, planes: Mapping[FaceId, PlaneParams],
                  huber: float = 0.0) -> dict[str, np.ndarray]:
    """Gradients of ``bb_r``, ``bb_t`` and ``bb_s`` as 9-vectors."""
    planes = _check_planes(planes)
    t = pred.t
    a = {f: float(planes[f].N @ t - planes[f].D) for f in FACES}

    g_t = np.zeros(9)
    for axis in "xyz":
        pos, neg = FaceId(axis + "+"), FaceId(axis + "-")
        _, outer = _abs(abs(a[pos]) - abs(a[neg]), huber)
        g_t[3:6] += outer * (np.sign(a[pos]) * planes[pos].N - np.sign(a[neg]) * planes[neg].N)

    g_s = np.zeros(9)
    for f in FACES:
        _, outer = _abs(pred.s[f.axis] / 2.0 - abs(a[f]), huber)
        g_s[3:6] -= outer * np.sign(a[f]) * planes[f].N
        g_s[6 + f.axis] += 0.5 * outer

    g_r = np.zeros(9)
    r_x, r_y = pred.R[:, 0], pred.R[:, 1]
    _, sx = _abs(r_x - planes[FaceId.X_POS].N, huber)
    _, sy = _abs(r_y - planes[FaceId.Y_POS].N, huber)
    g_r[:3] = np.cross(r_x, sx) + np.cross(r_y, sy)
    return {"bb_r": g_r, "bb_t": g_t, "bb_s": g_s}


# --- basic supervision terms ----------------------------------------------------

def rotation_confidence_loss(rot: RotationPrediction, gt: Pose, k1: float = DEFAULT_K1,
                             lambda1: float = 1.0 / 8.0) -> float:
    total = 0.0
    for r, c, col in ((rot.r_x, rot.c_x, 0), (rot.r_y, rot.c_y, 1)):
        diff = r - gt.R[:, col]
        total += abs(c - np.exp(-k1 * diff @ diff))
    return float(lambda1 * total)


def vote_confidence_loss(P, votes: FaceVoteSet, gt: Pose, k2: float = DEFAULT_K2,
                         lambda3: float = 1.0 / 8.0) -> float:
    pts = P.points if isinstance(P, PointCloud) else as_points(P)
    total = 0.0
    for face in FACES:
        n, d, c = votes.for_face(face)
        total += np.abs(c - vote_confidence_targets(d, n, pts, face, gt, k2)).sum()
    return float(lambda3 * total)


def total_loss(pred: Pose, P: PointCloud, *, planes=None, visible: Iterable[FaceId] = (),
               gt: Pose | None = None, rotation: RotationPrediction | None = None,
               votes: FaceVoteSet | None = None, reconstruction=None,
               symmetry: SymmetryType | None = None,
               settings: LossSettings = LossSettings()) -> LossBreakdown:
    """Every loss term at ``pred`` plus the weighted total.

    Basic (supervision) terms need ``gt`` and are computed only for the
    network outputs supplied; box terms need ``planes``.
    """
    w = settings.weights
    terms: dict[str, float] = {}
    if gt is not None:
        if rotation is not None:
            terms["basic_rot_conf"] = rotation_confidence_loss(rotation, gt, settings.k1, w.lambda1)
        if votes is not None:
            terms["basic_vote_conf"] = vote_confidence_loss(P, votes, gt, settings.k2, w.lambda3)
        if reconstruction is not None:
            terms["basic_sym"] = symmetry_reconstruction_loss(
                reconstruction, P, pred, gt, symmetry or SymmetryType.none(), w.lambda2)
    if P.canonical is not None:
        terms["pc_rt"] = pc_pose_loss(P, pred, settings.huber)
    terms["pc_s"] = pc_size_loss(P, pred, visible, settings.size, 1.0, settings.bin_seed)
    if planes is not None:
        bb = bb_pose_loss(pred, planes, settings.huber)
        terms.update(bb_r=bb.bb_r, bb_t=bb.bb_t, bb_s=bb.bb_s)
    return combine(w, **terms)


# --- finite differences -----------------------------------------------------------

def perturb(pose: Pose, delta) -> Pose:
    """Apply a 9-vector tangent step ``[omega, dt, ds]`` to ``pose``."""
    delta = np.asarray(delta, dtype=float)
    return Pose(exp_so3(delta[:3]) @ pose.R, pose.t + delta[3:6], pose.s + delta[6:9])


def _one_sided(loss_fn: Callable[[Pose], float], pose: Pose, eps: float):
    if not eps > 0:
        raise InvalidArgumentError("finite-difference step must be positive")
    f0 = loss_fn(pose)
    plus, minus = np.zeros(9), np.zeros(9)
    for i in range(9):
        e = np.zeros(9)
        e[i] = eps
        plus[i] = loss_fn(perturb(pose, e))
        minus[i] = loss_fn(perturb(pose, -e))
    return f0, plus, minus


def numeric_gradient(loss_fn: Callable[[Pose], float], pose: Pose, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient in the ``[omega, t, s]`` tangent coordinates."""
    _, plus, minus = _one_sided(loss_fn, pose, eps)
    return (plus - minus) / (2.0 * eps)


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    analytic: np.ndarray
    numeric: np.ndarray
    non_smooth: bool

    def passed(self, tol: float) -> bool:
        return not self.non_smooth and self.max_rel_error < tol


def grad_check(loss_fn: Callable[[Pose], float], grad_fn: Callable[[Pose], np.ndarray],
               pose: Pose, eps: float = 1e-6, kink_tol: float = 1e-5) -> GradCheckResult:
    """Compare ``grad_fn`` with central differences of ``loss_fn`` at ``pose``.

    The relative error is ``max_i |a_i - n_i| / max(|a|_inf, |n|_inf)``.

    The gap between forward and backward one-sided slopes grows linearly with
    the step on a smooth function (it is the curvature times the step). An L1
    kink within the step breaks that proportionality, so the gaps at ``eps``,
    ``eps/2`` and ``eps/4`` are compared and a departure above ``kink_tol``
    (relative to the gradient scale, floored at 1) flags ``non_smooth``.
    """
    gaps = []
    for k, h in enumerate((eps, eps / 2.0, eps / 4.0)):
        f0, plus, minus = _one_sided(loss_fn, pose, h)
        if k == 0:
            numeric = (plus - minus) / (2.0 * eps)
        gaps.append((plus - 2.0 * f0 + minus) / h)
    analytic = np.asarray(grad_fn(pose), dtype=float)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    rel = float(np.max(np.abs(analytic - numeric)) / scale) if scale > 0 else 0.0
    departure = max(np.max(np.abs(gaps[0] - 2.0 * gaps[1])), np.max(np.abs(gaps[1] - 2.0 * gaps[2])))
    kink = bool(departure > kink_tol * max(1.0, scale))
    return GradCheckResult(rel, analytic, numeric, kink)


# --- objective used by refinement --------------------------------------------------

def geometric_objective(pose: Pose, P: PointCloud, planes, visible,
                        settings: LossSettings = LossSettings()) -> LossBreakdown:
    """Consistency part of the objective (point cloud and box terms only)."""
    return total_loss(pose, P, planes=planes, visible=visible, settings=settings)


def pc_size_grad(P, pred: Pose, visible: Iterable[FaceId],
                 params: SizeScoreParams = SizeScoreParams(), seed: int = 0) -> np.ndarray:
    """Gradient of :func:`pc_size_loss` (unit weight) with respect to size only.

    The inside/outside labels ``alpha`` are held fixed, which makes the score
    smooth in ``s`` between sample points. Bin membership depends on ``R`` and
    ``t`` through a random subsample, so those components are left at zero.
    """
    visible = {FaceId(f) for f in visible}
    grad = np.zeros(9)
    for face in POSITIVE_FACES:
        if face not in visible:
            continue
        p = bin_sample(P, face, pred, params.bin_count, params.cap, seed + face.axis)
        s_half = pred.s[face.axis] / 2.0
        raw = size_score_raw(p, s_half, params)
        if params.mode == "clamp" and not 0.0 < raw < 1.0:
            continue
        if params.mode == "paper" and raw > 0.0:
            continue
        n = len(p)
        alpha = np.where(p <= s_half, 1.0, -1.0)
        f_p = np.exp(params.k_n / n * np.sum(alpha + 1.0))
        kern = np.exp(-params.k_s * (s_half - p) ** 2)
        d_raw = params.k_p / n * f_p * np.sum(alpha * -2.0 * params.k_s * (s_half - p) * kern)
        f = min(1.0, raw) if params.mode == "clamp" else raw
        grad[6 + face.axis] += -np.sign(1.0 - f) * d_raw * 0.5
    return grad


def geometric_gradient(pose: Pose, P: PointCloud, planes, visible,
                       settings: LossSettings = LossSettings()) -> np.ndarray:
    """Analytic (sub)gradient of :func:`geometric_objective`'s total."""
    w = settings.weights
    grad = np.zeros(9)
    if P.canonical is not None and w.lambda4 > 0:
        grad += w.pc * w.lambda4 * pc_pose_grad(P, pose, settings.huber)
    if planes is not None:
        g = bb_pose_grads(pose, planes, settings.huber)
        grad += w.bb * (w.lambda6 * g["bb_r"] + w.lambda7 * g["bb_t"] + w.lambda8 * g["bb_s"])
    if w.lambda5 > 0:
        grad += w.pc * w.lambda5 * pc_size_grad(P, pose, visible, settings.size, settings.bin_seed)
    return grad
