import numpy as np
import pytest

from posevote.core import Pose
from posevote.solver import fit_face_planes
from posevote.synth import SceneSpec, generate_scene, make_bundle, random_rotation


def rand_rotation(seed: int) -> np.ndarray:
    return random_rotation(np.random.default_rng(seed))


def rand_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


@pytest.fixture
def box_scene():
    # the camera sees x+, y+ and z+ from this view, so every size axis is active
    return generate_scene(SceneSpec(shape="box", view=(1.0, 1.0, 1.0), seed=5))


@pytest.fixture
def box_planes(box_scene):
    return fit_face_planes(make_bundle(box_scene).votes, box_scene.cloud)


@pytest.fixture
def unit_cube() -> Pose:
    return Pose(np.eye(3), np.zeros(3), np.ones(3))


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
