import re

import pytest

_RESULTS = {}   # criterion number -> {"title", "outcome", "details"}


def _entry(name):
    m = re.search(r"test_criterion_(\d+)_(\w+?)(\[|$)", name)
    if not m:
        return None
    return _RESULTS.setdefault(int(m.group(1)), {"title": m.group(2).replace("_", " "),
                                                 "outcome": None, "details": []})


@pytest.fixture
def criterion(request):
    """Record a measured value for the acceptance summary line."""
    entry = _entry(request.node.name)
    return entry["details"].append


def pytest_runtest_logreport(report):
    entry = _entry(report.nodeid)
    if entry is None or not (report.when == "call" or report.failed):
        return
    if report.failed:
        entry["outcome"] = "FAIL"
        crash = getattr(report.longrepr, "reprcrash", None)
        if crash is not None:
            entry["details"].append(crash.message.splitlines()[0])
    elif entry["outcome"] is None:
        entry["outcome"] = "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        e = _RESULTS[n]
        line = f"criterion {n:2d} [{e['outcome'] or 'NOT RUN'}] {e['title']}"
        terminalreporter.write_line(f"{line}: {'; '.join(e['details'])}" if e["details"] else line)
