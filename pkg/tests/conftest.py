import numpy as np
import pytest

from npcert.core import Norm, PrototypeModel
from npcert.data import Dataset

ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.skipped):
        return
    marks = getattr(report, "criterion", None)
    if marks is None:
        return
    ACCEPTANCE[marks] = report.outcome


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for n in sorted(ACCEPTANCE):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP (non-gating)"}[ACCEPTANCE[n]]
        terminalreporter.write_line(f"ACCEPTANCE criterion {n}: {status}")


@pytest.fixture
def e1_model():
    # one prototype per class on the first axis
    return PrototypeModel([[1.0, 0.0], [3.0, 0.0]], [0, 1], Norm.L2)


@pytest.fixture
def two_blocker():
    return PrototypeModel([[0.0, 1.0], [0.0, -1.0], [2.0, 0.0]], [0, 0, 1], Norm.L2)


def make_blobs(n_per_class=100, seed=0, centers=((0.3, 0.3), (0.7, 0.7)), spread=0.05):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(c, spread, (n_per_class, len(c))) for c in centers])
    y = np.repeat(np.arange(len(centers)), n_per_class)
    return Dataset(np.clip(X, 0.0, 1.0), y)


def stretched_blobs():
    """Two separable blobs, the first stretched along x so the centroid bisector misclassifies a point."""
    data = make_blobs()
    X = np.array(data.features)
    first = data.labels == 0
    X[first, 0] = np.clip(0.3 + 4.0 * (X[first, 0] - 0.3), 0.0, 1.0)
    return Dataset(X, data.labels)


@pytest.fixture
def blobs():
    return make_blobs()
