import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ergorisk.pose_io import N_LANDMARKS, LandmarkIndex as L, make_skeleton
from ergorisk.synth import figure_to_skeleton, gen_dataset, upright_spec

settings.register_profile(
    "ergorisk", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ergorisk")


def skeleton_from_points(named: dict, width=640, height=480, id="s"):
    """Skeleton with the given ``{index: (x, y)}`` slots present, the rest absent."""
    pts = [None] * N_LANDMARKS
    for i, p in named.items():
        pts[i] = p
    return make_skeleton(pts, width, height, id)


def upright_points() -> dict:
    """Hand-placed upright pose: vertical trunk and limbs, arms at the sides."""
    return {
        L.nose: (0.52, 0.10),
        L.left_ear: (0.48, 0.12), L.right_ear: (0.52, 0.12),
        L.left_shoulder: (0.45, 0.25), L.right_shoulder: (0.55, 0.25),
        L.left_elbow: (0.45, 0.40), L.right_elbow: (0.55, 0.40),
        L.left_wrist: (0.45, 0.52), L.right_wrist: (0.55, 0.52),
        L.left_index: (0.45, 0.56), L.right_index: (0.55, 0.56),
        L.left_hip: (0.47, 0.55), L.right_hip: (0.53, 0.55),
        L.left_knee: (0.47, 0.72), L.right_knee: (0.53, 0.72),
        L.left_ankle: (0.47, 0.90), L.right_ankle: (0.53, 0.90),
    }


@pytest.fixture
def upright():
    return skeleton_from_points(upright_points(), id="upright")


@pytest.fixture
def upright_synth():
    return figure_to_skeleton(upright_spec(), "upright")


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    gen_dataset(48, 11, out, 64)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance report

_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    prev = _CRITERIA.get(number, (title, True))
    _CRITERIA[number] = (title, prev[1] and rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}")
