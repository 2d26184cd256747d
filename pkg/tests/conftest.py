import pytest

from aex.lab import LabConfig, LabTopology

# criterion number -> (title, passed so far)
_CRITERIA: dict[int, tuple[str, bool]] = {}


@pytest.fixture(scope="session")
def lab(tmp_path_factory):
    cfg = LabConfig(runs_dir=str(tmp_path_factory.mktemp("runs")), key_seed="pytest")
    with LabTopology(cfg) as topo:
        yield topo


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    number, title = marker.args
    _, ok = _CRITERIA.get(number, (title, True))
    _CRITERIA[number] = (title, ok and rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:>2}. {title}")
