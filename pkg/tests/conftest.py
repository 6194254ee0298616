import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance bookkeeping: criterion number -> [(test name, outcome, note)]
_criteria: dict[int, dict] = {}
_notes: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion covered by the test")


@pytest.fixture
def note(request):
    """Attach a one-line measurement to the acceptance summary."""
    def record(text):
        _notes[request.node.nodeid] = text
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        if hasattr(rep, "wasxfail"):
            status = "xfail" if rep.skipped else "xpass"
        else:
            status = rep.outcome
        number, title = mark.args
        entry = _criteria.setdefault(number, {"title": title, "tests": []})
        entry["tests"].append((item.nodeid, status))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        statuses = [s for _, s in entry["tests"]]
        verdict = "PASS" if all(s == "passed" for s in statuses) else "FAIL"
        extra = " (known failure, marked xfail)" if "xfail" in statuses else ""
        tr.write_line(f"criterion {number:2d} {verdict}{extra}: {entry['title']}")
        for nodeid, status in entry["tests"]:
            text = _notes.get(nodeid)
            if text:
                tr.write_line(f"    {nodeid.split('::')[-1]} [{status}] {text}")
