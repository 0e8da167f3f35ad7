import numpy as np
import pytest

from posevote.core import DegenerateInputError, InvalidArgumentError, PointCloud, Pose
from posevote.solver import fit_face_planes
from posevote.synth import SceneSpec, generate_scene, ground_truth_votes, make_bundle
from posevote.voting import (
    DEFAULT_K2,
    FACES,
    FaceId,
    FaceVoteSet,
    PlaneParams,
    face_distances,
    face_normal_world,
    fit_plane_weighted,
    plane_residual,
    project_votes,
    recover_box,
    vote_confidence_target,
)

from conftest import rand_rotation


def _votes_for(n_points, direction, distance, conf=1.0):
    dirs = np.tile(np.asarray(direction, dtype=float), (n_points, 6, 1))
    return FaceVoteSet(dirs, np.full((n_points, 6), distance), np.full((n_points, 6), conf))


def _cube_planes(pose: Pose) -> dict:
    out = {}
    for f in FACES:
        n = face_normal_world(f, pose)
        out[f] = PlaneParams(n, float(n @ pose.t + pose.s[f.axis] / 2))
    return out


def test_face_ids():
    assert [f.value for f in FACES] == ["y+", "y-", "x+", "x-", "z+", "z-"]
    assert FaceId.Y_POS.axis == 1 and FaceId.Y_POS.sign == 1.0
    assert FaceId.X_NEG.opposite is FaceId.X_POS
    np.testing.assert_array_equal(FaceId.Z_NEG.canonical_normal(), [0, 0, -1])


# --- project_votes --------------------------------------------------------------------

def test_project_votes_axis_step():
    P = PointCloud([[0.0, 0.0, 0.0]])
    out = project_votes(P, _votes_for(1, [0, 1, 0], 0.5), FaceId.Y_POS)
    np.testing.assert_array_equal(out, [[0, 0.5, 0]])


def test_project_votes_zero_distance_is_identity():
    pts = np.random.default_rng(0).normal(size=(7, 3))
    out = project_votes(PointCloud(pts), _votes_for(7, [1, 0, 0], 0.0), FaceId.X_NEG)
    np.testing.assert_array_equal(out, pts)


def test_project_votes_size_mismatch():
    with pytest.raises(InvalidArgumentError):
        project_votes(PointCloud([[0, 0, 0], [1, 1, 1]]), _votes_for(1, [1, 0, 0], 0.1), FaceId.X_POS)


def test_noiseless_votes_land_on_gt_planes():
    scene = generate_scene(SceneSpec(shape="box", seed=9))
    votes = ground_truth_votes(scene)
    inl = ~scene.outlier_mask
    for f in FACES:
        n = face_normal_world(f, scene.gt)
        D = n @ scene.gt.t + scene.gt.s[f.axis] / 2
        landing = project_votes(scene.cloud, votes, f)[inl]
        assert np.max(np.abs(landing @ n - D)) < 1e-9


def test_vote_set_validation():
    with pytest.raises(InvalidArgumentError):
        FaceVoteSet(np.zeros((2, 6, 3)), np.zeros((2, 6)), np.ones((2, 6)))
    with pytest.raises(InvalidArgumentError):
        _votes_for(2, [1, 0, 0], -0.1)
    with pytest.raises(InvalidArgumentError):
        _votes_for(2, [1, 0, 0], 0.1, conf=1.5)
    with pytest.raises(InvalidArgumentError):
        FaceVoteSet(np.ones((2, 5, 3)), np.zeros((2, 5)), np.ones((2, 5)))


# --- fit_plane_weighted -------------------------------------------------------------------

def _plane_oracle(points, weights):
    """Independent weighted-TLS oracle: power iteration on ``trace(S) I - S``,
    whose dominant eigenvector is the smallest one of the scatter ``S``."""
    w = np.asarray(weights) / np.sum(weights)
    c = w @ points
    X = points - c
    S = (X * w[:, None]).T @ X
    A = np.trace(S) * np.eye(3) - S
    v = np.array([0.3, 0.5, 0.8])
    for _ in range(20000):
        v = A @ v
        v /= np.linalg.norm(v)
    return v, c


def test_fit_exact_plane_y_equals_one():
    pts = np.array([[0, 1, 0], [1, 1, 0], [0, 1, 1], [1, 1, 1]], dtype=float)
    plane = fit_plane_weighted(pts, np.ones(4), orientation_hint=[0, 1, 0])
    np.testing.assert_allclose(plane.N, [0, 1, 0], atol=1e-15)
    assert plane.D == pytest.approx(1.0, abs=1e-15)


def test_fit_ignores_zero_weight_outlier():
    pts = np.array([[0, 1, 0], [1, 1, 0], [0, 1, 1], [1, 1, 1]], dtype=float)
    base = fit_plane_weighted(pts, np.ones(4), orientation_hint=[0, 1, 0])
    more = fit_plane_weighted(np.vstack([pts, [0, 5, 0]]), np.r_[np.ones(4), 0.0],
                              orientation_hint=[0, 1, 0])
    np.testing.assert_array_equal(more.N, base.N)
    assert more.D == base.D


def test_fit_default_orientation_gives_non_negative_offset():
    pts = np.array([[0, -1, 0], [1, -1, 0], [0, -1, 1], [1, -1, 1]], dtype=float)
    plane = fit_plane_weighted(pts, np.ones(4))
    assert plane.D >= 0
    np.testing.assert_allclose(plane.N, [0, -1, 0], atol=1e-15)


def test_fit_noisy_matches_oracle():
    rng = np.random.default_rng(4)
    for _ in range(10):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        D = rng.uniform(0.2, 1.0)
        u = np.cross(n, [1, 0, 0])
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        ab = rng.uniform(-0.1, 0.1, size=(200, 2))
        pts = D * n + ab[:, :1] * u + ab[:, 1:] * v + rng.normal(scale=1e-3, size=(200, 3))
        w = rng.uniform(0.1, 1.0, size=200)
        plane = fit_plane_weighted(pts, w, orientation_hint=n)
        n_or, c_or = _plane_oracle(pts, w)
        n_or = n_or if n_or @ n > 0 else -n_or
        np.testing.assert_allclose(plane.N, n_or, atol=1e-6)
        assert plane.D == pytest.approx(n_or @ c_or, abs=1e-6)


def test_fit_weight_scale_invariance_and_residual():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(50, 3)) * [1, 1, 0.01]
    w = rng.uniform(0.1, 1, size=50)
    a = fit_plane_weighted(pts, w)
    b = fit_plane_weighted(pts, 37.5 * w)
    np.testing.assert_allclose(a.N, b.N, atol=1e-12)
    assert abs(a.D - b.D) < 1e-12

    flat = pts * [1, 1, 0] + [0, 0, 0.3]
    plane = fit_plane_weighted(flat, w)
    assert plane_residual(plane, flat, w) < 1e-18


def test_fit_degenerate_cases():
    with pytest.raises(DegenerateInputError):
        fit_plane_weighted([[0, 0, 0], [1, 0, 0]], [1, 1])
    with pytest.raises(DegenerateInputError):
        fit_plane_weighted([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], np.ones(4))
    with pytest.raises(DegenerateInputError):
        # only two points carry weight above the effective-support threshold
        fit_plane_weighted([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [1, 1, 1e-9])
    with pytest.raises(InvalidArgumentError):
        fit_plane_weighted([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [1, -1, 1])


# --- confidence targets -------------------------------------------------------------------

def test_vote_confidence_target_values():
    assert DEFAULT_K2 == 1.0 / 303.5
    gt = Pose(np.eye(3), np.zeros(3), np.ones(3))
    p = np.array([0.1, 0.2, -0.1])
    # perfect vote for y+: distance 0.5 - 0.2 along +y
    assert vote_confidence_target(0.3, [0, 1, 0], p, FaceId.Y_POS, gt) == pytest.approx(1.0, abs=1e-12)
    # residual of 0.01 m
    c = vote_confidence_target(0.31, [0, 1, 0], p, FaceId.Y_POS, gt)
    assert c == pytest.approx(np.exp(-3.035), rel=1e-9)
    assert np.exp(-3.035) == pytest.approx(0.0481, abs=1e-4)


def test_vote_confidence_monotone_in_residual():
    gt = Pose(rand_rotation(2), [0.1, 0.0, 0.7], [0.2, 0.1, 0.3])
    p = gt.to_camera([[0.01, 0.02, 0.03]])[0]
    f = face_distances([p], FaceId.X_POS, gt)[0]
    n = face_normal_world(FaceId.X_POS, gt)
    values = [vote_confidence_target(f + e, n, p, FaceId.X_POS, gt) for e in np.linspace(0, 0.02, 30)]
    assert np.all(np.diff(values) < 0)


def test_distance_shaped_confidence_prefers_near_points():
    scene = generate_scene(SceneSpec(shape="box", seed=12))
    votes = ground_truth_votes(scene, mode="distance")
    for f in FACES:
        _, d, c = votes.for_face(f)
        # confidences are a decreasing function of the face distance
        order = np.argsort(d)
        assert np.all(np.diff(c[order]) <= 0)
    # surface samples on a visible face sit at zero distance from it and get confidence 1
    face = next(iter(scene.visible))
    _, d, c = votes.for_face(face)
    on_face = d < 1e-12
    assert on_face.sum() > 10
    np.testing.assert_allclose(c[on_face], 1.0, atol=1e-9)


# --- recover_box -----------------------------------------------------------------------

def test_recover_unit_cube():
    pose = Pose(np.eye(3), np.zeros(3), np.ones(3))
    box = recover_box(_cube_planes(pose))
    np.testing.assert_allclose(box.center, 0, atol=1e-15)
    np.testing.assert_allclose(box.extents, 1, atol=1e-15)
    np.testing.assert_allclose(box.axes, np.eye(3), atol=1e-15)


def test_recover_rotated_box():
    for seed in range(10):
        pose = Pose(rand_rotation(seed), [0.1, -0.2, 0.8], [0.3, 0.1, 0.2])
        box = recover_box(_cube_planes(pose))
        np.testing.assert_allclose(box.axes, pose.R, atol=1e-9)
        np.testing.assert_allclose(box.center, pose.t, atol=1e-12)
        np.testing.assert_allclose(box.extents, pose.s, atol=1e-12)


def test_recover_box_from_noiseless_votes():
    for seed in range(5):
        scene = generate_scene(SceneSpec(shape="box", seed=seed))
        planes = fit_face_planes(make_bundle(scene).votes, scene.cloud)
        box = recover_box(planes)
        np.testing.assert_allclose(box.center, scene.gt.t, atol=1e-9)
        np.testing.assert_allclose(box.extents, scene.gt.s, atol=1e-9)
        np.testing.assert_allclose(box.axes, scene.gt.R, atol=1e-9)


def test_recover_box_errors():
    planes = _cube_planes(Pose(np.eye(3), np.zeros(3), np.ones(3)))
    partial = dict(planes)
    del partial[FaceId.Z_NEG]
    with pytest.raises(InvalidArgumentError):
        recover_box(partial)
    bad = dict(planes)
    t = np.deg2rad(20)
    bad[FaceId.X_NEG] = PlaneParams(np.array([-np.cos(t), np.sin(t), 0.0]), 0.5)
    with pytest.raises(DegenerateInputError):
        recover_box(bad)
    flat = dict(planes)
    flat[FaceId.Z_POS] = planes[FaceId.X_POS]
    flat[FaceId.Z_NEG] = planes[FaceId.X_NEG]
    with pytest.raises(DegenerateInputError):
        recover_box(flat)
