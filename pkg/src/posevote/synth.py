"""Synthetic scenes that stand in for detector + network outputs.

A scene is a camera-frame point cloud sampled on the camera-facing surface
of a simple shape (box, cylinder, or an open laptop made of two slabs), with
its ground-truth pose, a category prior and exact per-point face votes. The
camera sits at the origin looking down +z.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import (
    CategoryPrior,
    InvalidArgumentError,
    Pose,
    PointCloud,
    RotationPrediction,
    SymmetryType,
    as_vec3,
    point_cloud_mean,
)
from .rotation import DEFAULT_K1, rotation_confidence_target
from .symmetry import symmetry_map
from .voting import (
    DEFAULT_K2,
    FACES,
    FaceVoteSet,
    face_distances,
    face_normal_world,
    vote_confidence_targets,
)

SHAPES = ("box", "cylinder", "laptop")
DEFAULT_N_POINTS = 1028
OUTLIER_CONFIDENCE = 1e-4
LAPTOP_THICKNESS = 0.1  # slab thickness as a fraction of the smaller of size[1], size[2]

_SHAPE_SYMMETRY = {
    "box": SymmetryType.none(),
    "cylinder": SymmetryType.rotational((0.0, 1.0, 0.0)),
    "laptop": SymmetryType.reflection((1.0, 0.0, 0.0)),
}


@dataclass(frozen=True)
class SceneSpec:
    shape: str = "box"
    size: tuple[float, float, float] = (0.12, 0.08, 0.16)
    pose: Pose | None = None  # None draws a random pose from the seed
    n_points: int = DEFAULT_N_POINTS
    noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    view: tuple[float, float, float] | None = None  # canonical direction toward the camera
    mean_size: tuple[float, float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise InvalidArgumentError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        size = as_vec3(self.size, "size")
        if np.any(size <= 0):
            raise InvalidArgumentError("size must be positive")
        if self.shape == "cylinder" and not np.isclose(size[0], size[2]):
            raise InvalidArgumentError("cylinder size must have equal x and z extents")
        if int(self.n_points) <= 0:
            raise InvalidArgumentError("n_points must be positive")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise InvalidArgumentError("outlier_fraction must lie in [0, 1)")
        if self.noise_sigma < 0:
            raise InvalidArgumentError("noise_sigma must be >= 0")
        object.__setattr__(self, "size", tuple(float(x) for x in size))

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "size": list(self.size),
            "pose": None if self.pose is None else self.pose.to_dict(),
            "n_points": int(self.n_points),
            "noise_sigma": float(self.noise_sigma),
            "outlier_fraction": float(self.outlier_fraction),
            "view": None if self.view is None else list(self.view),
            "mean_size": None if self.mean_size is None else list(self.mean_size),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if d.get("pose") is not None:
            d["pose"] = Pose.from_dict(d["pose"])
        for key in ("size", "view", "mean_size"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class Scene:
    spec: SceneSpec
    cloud: PointCloud
    gt: Pose
    prior: CategoryPrior
    visible: frozenset
    outlier_mask: np.ndarray

    @property
    def symmetry(self) -> SymmetryType:
        return self.prior.symmetry

    @property
    def shape(self) -> str:
        return self.spec.shape


@dataclass(frozen=True)
class PredictionBundle:
    rotation: RotationPrediction
    t_res: np.ndarray
    s_res: np.ndarray
    votes: FaceVoteSet
    reconstruction: np.ndarray


@dataclass(frozen=True)
class NoiseSpec:
    """Per-field corruption of a prediction bundle. All sigmas are Gaussian.

    ``vote_sigma`` perturbs each vote's landing point isotropically (meters);
    ``vote_dir_sigma`` perturbs direction components before renormalizing;
    ``vote_outlier_fraction`` of the points get random votes with
    ``outlier_confidence``.
    """

    rot_sigma: float = 0.0
    t_sigma: float = 0.0
    s_sigma: float = 0.0
    vote_sigma: float = 0.0
    vote_dir_sigma: float = 0.0
    vote_dist_sigma: float = 0.0
    vote_outlier_fraction: float = 0.0
    outlier_confidence: float = OUTLIER_CONFIDENCE
    recon_sigma: float = 0.0
    confidence_from_error: bool = True
    k1: float = DEFAULT_K1

    def is_zero(self) -> bool:
        return not any((self.rot_sigma, self.t_sigma, self.s_sigma, self.vote_sigma,
                        self.vote_dir_sigma, self.vote_dist_sigma,
                        self.vote_outlier_fraction, self.recon_sigma))


# --- poses ------------------------------------------------------------------------

def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _rotation_taking(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """A rotation mapping unit ``a`` onto unit ``b``."""
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    if c < -1.0 + 1e-12:
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        perp /= np.linalg.norm(perp)
        return 2.0 * np.outer(perp, perp) - np.eye(3)
    K = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + K + K @ K / (1.0 + c)


def random_pose(rng: np.random.Generator, size, view=None) -> Pose:
    """Object 0.5-0.9 m in front of the camera.

    With ``view`` the rotation is chosen so the camera lies along that
    canonical direction from the object center, with a random roll about it.
    """
    t = np.array([rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(0.5, 0.9)])
    if view is None:
        R = random_rotation(rng)
    else:
        v = as_vec3(view, "view")
        v = v / np.linalg.norm(v)
        to_cam = -t / np.linalg.norm(t)
        roll = rng.uniform(0.0, 2.0 * np.pi)
        K = np.array([[0, -to_cam[2], to_cam[1]], [to_cam[2], 0, -to_cam[0]],
                      [-to_cam[1], to_cam[0], 0]])
        R_roll = np.eye(3) + np.sin(roll) * K + (1 - np.cos(roll)) * K @ K
        R = R_roll @ _rotation_taking(v, to_cam)
        U, _, Vt = np.linalg.svd(R)
        R = U @ Vt
    return Pose(R, t, np.asarray(size, dtype=float))


# --- surface sampling ----------------------------------------------------------------

def _box_faces(lo: np.ndarray, hi: np.ndarray):
    """(axis, sign, area) for the six faces of an axis-aligned box."""
    ext = hi - lo
    out = []
    for axis in range(3):
        u, v = [a for a in range(3) if a != axis]
        for sign in (1.0, -1.0):
            out.append((axis, sign, ext[u] * ext[v]))
    return out


def _sample_box_surface(lo, hi, n, rng):
    faces = _box_faces(lo, hi)
    areas = np.array([f[2] for f in faces])
    choice = rng.choice(len(faces), size=n, p=areas / areas.sum())
    pts = rng.uniform(lo, hi, size=(n, 3))
    normals = np.zeros((n, 3))
    for k, (axis, sign, _) in enumerate(faces):
        sel = choice == k
        pts[sel, axis] = hi[axis] if sign > 0 else lo[axis]
        normals[sel, axis] = sign
    return pts, normals


def _sample_cylinder_surface(size, n, rng):
    r, h = size[0] / 2.0, size[1]
    areas = np.array([2 * np.pi * r * h, np.pi * r * r, np.pi * r * r])
    choice = rng.choice(3, size=n, p=areas / areas.sum())
    phi = rng.uniform(0, 2 * np.pi, n)
    rad = r * np.sqrt(rng.uniform(0, 1, n))
    y = rng.uniform(-h / 2, h / 2, n)
    pts = np.zeros((n, 3))
    normals = np.zeros((n, 3))
    side = choice == 0
    pts[side] = np.column_stack([r * np.cos(phi[side]), y[side], r * np.sin(phi[side])])
    normals[side] = np.column_stack([np.cos(phi[side]), np.zeros(side.sum()), np.sin(phi[side])])
    for k, sign in ((1, 1.0), (2, -1.0)):
        sel = choice == k
        pts[sel] = np.column_stack([rad[sel] * np.cos(phi[sel]), np.full(sel.sum(), sign * h / 2),
                                    rad[sel] * np.sin(phi[sel])])
        normals[sel, 1] = sign
    return pts, normals


def _laptop_slabs(size):
    half = np.asarray(size) / 2.0
    th = LAPTOP_THICKNESS * min(size[1], size[2])
    base = (np.array([-half[0], -half[1], -half[2]]), np.array([half[0], -half[1] + th, half[2]]))
    lid = (np.array([-half[0], -half[1], -half[2]]), np.array([half[0], half[1], -half[2] + th]))
    return base, lid


def _buried(pts, other_lo, other_hi, half, eps=1e-12):
    """Points inside the other slab's closed region but off the laptop's outer box."""
    in_other = np.all((pts >= other_lo - eps) & (pts <= other_hi + eps), axis=1)
    on_hull = np.any(np.abs(np.abs(pts) - half) <= eps, axis=1)
    return in_other & ~on_hull


def _sample_laptop_surface(size, n, rng):
    half = np.asarray(size) / 2.0
    base, lid = _laptop_slabs(size)
    area = [sum(f[2] for f in _box_faces(*slab)) for slab in (base, lid)]
    n_base = rng.binomial(n, area[0] / sum(area))
    pb, nb = _sample_box_surface(*base, n_base, rng)
    pl, nl = _sample_box_surface(*lid, n - n_base, rng)
    keep_b = ~_buried(pb, *lid, half)
    keep_l = ~_buried(pl, *base, half)
    return np.vstack([pb[keep_b], pl[keep_l]]), np.vstack([nb[keep_b], nl[keep_l]])


def _sample_surface(shape, size, n, rng):
    size = np.asarray(size, dtype=float)
    if shape == "box":
        return _sample_box_surface(-size / 2, size / 2, n, rng)
    if shape == "cylinder":
        return _sample_cylinder_surface(size, n, rng)
    return _sample_laptop_surface(size, n, rng)


def visible_box_faces(pose: Pose) -> frozenset:
    """Faces of the pose's bounding box that face the camera at the origin."""
    out = set()
    for face in FACES:
        n_w = face_normal_world(face, pose)
        center = pose.t + n_w * pose.s[face.axis] / 2.0
        if np.dot(n_w, -center) > 0:
            out.add(face)
    return frozenset(out)


def sample_visible_surface(shape, pose: Pose, n: int, rng: np.random.Generator,
                           max_rounds: int = 200) -> np.ndarray:
    """``n`` canonical points uniform (by area) on the camera-facing surface."""
    chunks, have = [], 0
    for _ in range(max_rounds):
        q, normals = _sample_surface(shape, pose.s, 4 * n, rng)
        x = pose.to_camera(q)
        facing = np.einsum("ij,ij->i", normals @ pose.R.T, -x) > 0
        chunks.append(q[facing])
        have += int(facing.sum())
        if have >= n:
            return np.vstack(chunks)[:n]
    raise InvalidArgumentError("scene has no visible surface from the camera")


def default_symmetry(shape: str) -> SymmetryType:
    return _SHAPE_SYMMETRY[shape]


def generate_scene(spec: SceneSpec, symmetry: SymmetryType | None = None) -> Scene:
    """Deterministic scene for ``spec``; identical seeds give identical arrays.

    ``symmetry`` overrides the shape's built-in symmetry in the prior.
    """
    rng = np.random.default_rng(spec.seed)
    size = np.array(spec.size)
    pose = spec.pose if spec.pose is not None else random_pose(rng, size, spec.view)
    if not np.allclose(pose.s, size):
        pose = pose.with_(s=size)
    if np.all(np.abs(pose.to_canonical(np.zeros((1, 3)))[0]) < size / 2):
        raise InvalidArgumentError("camera lies inside the object")

    n = int(spec.n_points)
    n_out = int(round(spec.outlier_fraction * n))
    q = sample_visible_surface(spec.shape, pose, n - n_out, rng)
    inliers = pose.to_camera(q)
    if spec.noise_sigma > 0:
        inliers = inliers + rng.normal(scale=spec.noise_sigma, size=inliers.shape)
    q_out = rng.uniform(-0.6 * size, 0.6 * size, size=(n_out, 3))
    pts = np.vstack([inliers, pose.to_camera(q_out)])
    mask = np.zeros(n, dtype=bool)
    mask[n - n_out:] = True
    order = rng.permutation(n)
    pts, mask = pts[order], mask[order]

    if spec.mean_size is not None:
        mean_size = np.asarray(spec.mean_size, dtype=float)
    else:
        mean_size = size * (1.0 + rng.uniform(-0.1, 0.1, size=3))
    prior = CategoryPrior(mean_size, symmetry or _SHAPE_SYMMETRY[spec.shape])
    mask.flags.writeable = False
    cloud = PointCloud(pts, pose.to_canonical(pts))
    return Scene(spec, cloud, pose, prior, visible_box_faces(pose), mask)


# --- predictions ----------------------------------------------------------------------

def ground_truth_votes(scene: Scene, mode: str = "exact", k2: float = DEFAULT_K2) -> FaceVoteSet:
    """Exact votes from every point to every ground-truth face plane.

    In ``"exact"`` mode confidences are the vote-confidence targets (1 for an
    exact vote); in ``"distance"`` mode they are ``exp(-|f|/k2)`` with ``f``
    the point-to-face distance, so points near a face vote confidently for
    it. Outlier points keep their position (zero distance) and receive
    :data:`OUTLIER_CONFIDENCE`.
    """
    if mode not in ("exact", "distance"):
        raise InvalidArgumentError(f"unknown vote mode {mode!r}")
    pts = scene.cloud.points
    n = len(pts)
    dirs = np.zeros((n, 6, 3))
    dist = np.zeros((n, 6))
    conf = np.zeros((n, 6))
    for face in FACES:
        i = face.index
        f = face_distances(pts, face, scene.gt)
        r = face_normal_world(face, scene.gt)
        # points on the face (|f| at rounding level) vote outward like interior ones
        dirs[:, i] = np.where(f[:, None] >= -1e-12, r, -r)
        dist[:, i] = np.abs(f)
        if mode == "exact":
            conf[:, i] = vote_confidence_targets(dist[:, i], dirs[:, i], pts, face, scene.gt, k2)
        else:
            conf[:, i] = np.clip(np.exp(-np.abs(f) / k2), np.finfo(float).tiny, 1.0)
    out = scene.outlier_mask
    dist[out] = 0.0
    conf[out] = OUTLIER_CONFIDENCE
    return FaceVoteSet(dirs, dist, conf)


def make_bundle(scene: Scene, vote_mode: str = "exact", k1: float = DEFAULT_K1,
                k2: float = DEFAULT_K2) -> PredictionBundle:
    """The prediction a perfect network would output for ``scene``."""
    gt = scene.gt
    r_x, r_y = gt.R[:, 0], gt.R[:, 1]
    rot = RotationPrediction(r_x, r_y, rotation_confidence_target(r_x, r_x, k1),
                             rotation_confidence_target(r_y, r_y, k1))
    t_res = gt.t - point_cloud_mean(scene.cloud)
    s_res = gt.s - scene.prior.mean_size
    recon = symmetry_map(scene.cloud, gt, gt, scene.symmetry)
    return PredictionBundle(rot, t_res, s_res, ground_truth_votes(scene, vote_mode, k2), recon)


def _normalize_rows(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def corrupt_bundle(bundle: PredictionBundle, noise: NoiseSpec, seed: int) -> PredictionBundle:
    """Seeded corruption of every field of ``bundle`` according to ``noise``."""
    if noise.is_zero():
        return bundle
    rng = np.random.default_rng(seed)
    rot = bundle.rotation
    r_x = rot.r_x + rng.normal(scale=noise.rot_sigma, size=3) if noise.rot_sigma else rot.r_x
    r_y = rot.r_y + rng.normal(scale=noise.rot_sigma, size=3) if noise.rot_sigma else rot.r_y
    r_x, r_y = r_x / np.linalg.norm(r_x), r_y / np.linalg.norm(r_y)
    if noise.confidence_from_error and noise.rot_sigma:
        c_x = rotation_confidence_target(r_x, rot.r_x, noise.k1)
        c_y = rotation_confidence_target(r_y, rot.r_y, noise.k1)
    else:
        c_x, c_y = rot.c_x, rot.c_y
    rotation = RotationPrediction(r_x, r_y, c_x, c_y)
    t_res = bundle.t_res + rng.normal(scale=noise.t_sigma, size=3) if noise.t_sigma else bundle.t_res
    s_res = bundle.s_res + rng.normal(scale=noise.s_sigma, size=3) if noise.s_sigma else bundle.s_res

    v = bundle.votes
    dirs = np.array(v.directions)
    dist = np.array(v.distances)
    conf = np.array(v.confidences)
    if noise.vote_sigma:
        ends = dirs * dist[..., None] + rng.normal(scale=noise.vote_sigma, size=dirs.shape)
        length = np.linalg.norm(ends, axis=-1)
        ok = length > 1e-12
        dirs[ok] = ends[ok] / length[ok, None]
        dist = np.where(ok, length, 0.0)
    if noise.vote_dir_sigma:
        dirs = _normalize_rows(dirs + rng.normal(scale=noise.vote_dir_sigma, size=dirs.shape))
    if noise.vote_dist_sigma:
        dist = np.abs(dist + rng.normal(scale=noise.vote_dist_sigma, size=dist.shape))
    if noise.vote_outlier_fraction:
        n = len(dist)
        k = int(round(noise.vote_outlier_fraction * n))
        idx = rng.choice(n, size=k, replace=False)
        reach = max(float(dist.max()), 1e-3)
        dirs[idx] = _normalize_rows(rng.normal(size=(k, 6, 3)))
        dist[idx] = rng.uniform(0.0, reach, size=(k, 6))
        conf[idx] = noise.outlier_confidence
    votes = FaceVoteSet(dirs, dist, conf)

    recon = bundle.reconstruction
    if noise.recon_sigma:
        recon = recon + rng.normal(scale=noise.recon_sigma, size=recon.shape)
    return PredictionBundle(rotation, t_res, s_res, votes, recon)


def scene_with(scene: Scene, **changes) -> Scene:
    return replace(scene, **changes)
