import numpy as np
import pytest

from robust_doa import plant as plant_mod
from robust_doa.grid import Box, UniformGrid

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        # a parametrized criterion passes only if every case passes
        previous = _CRITERIA.get(number, (title, "PASS"))[1]
        verdict = "PASS" if report.passed and previous == "PASS" else "FAIL"
        _CRITERIA[number] = (title, verdict)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number} [{verdict}] {title}")


@pytest.fixture(scope="session")
def bench():
    return plant_mod.builtin("paper-sec5")


@pytest.fixture(scope="session")
def region_grids():
    """Desk-scale state and control grids over [-2, 2] with 0.02 cells."""
    box = Box((-2.0,), (2.0,))
    return UniformGrid.with_width(box, 0.02), UniformGrid.with_width(box, 0.02)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_problem(bench, region_grids):
    from robust_doa import ndd
    from robust_doa.sampler import SampleConfig

    gx, gu = region_grids
    return ndd.prepare(bench, gx, gu, SampleConfig(seed=0, n_xu=500_000, n_succ=100))


@pytest.fixture(scope="session")
def desk_samples(region_grids):
    from robust_doa import doa

    return doa.draw_state_samples(region_grids[0], 1_000_000, seed=0)


@pytest.fixture(scope="session")
def desk_settings(desk_problem, desk_samples):
    from robust_doa.optimizer import SearchSettings

    return SearchSettings(desk_problem, desk_samples, d=2, eps_init=10.0, accuracy=0.001)
