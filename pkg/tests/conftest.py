import numpy as np
import pytest

from dualsteer import make_model

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    if report.when == "setup" and report.passed:
        return
    status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    prev = _CRITERIA.get(number)
    if prev is None or prev[1] == "PASS":
        _CRITERIA[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {status}  {title}")


@pytest.fixture
def t1():
    """Three items a, b, c with unembeddings (1,0), (0,1), (0,0)."""
    return make_model([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], ["a", "b", "c"])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_model(rng, V, d, scale=1.0):
    return make_model(scale * rng.standard_normal((V, d)))
