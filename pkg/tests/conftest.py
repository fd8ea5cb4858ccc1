"""Pytest hooks: the acceptance suite prints one PASS/FAIL line per criterion."""

import pytest

_TITLES = {}
_DETAILS = {}
_OUTCOMES = {}


def _is_acceptance(nodeid: str) -> bool:
    return "test_acceptance.py" in nodeid


def pytest_itemcollected(item):
    if _is_acceptance(item.nodeid):
        doc = (getattr(item, "function", None) and item.function.__doc__) or item.name
        _TITLES[item.nodeid] = doc.strip().splitlines()[0]


@pytest.fixture
def criterion(request):
    """Call with a short measurement summary; shown next to the PASS/FAIL line."""

    def note(text: str):
        _DETAILS[request.node.nodeid] = text

    return note


def pytest_runtest_logreport(report):
    if not _is_acceptance(report.nodeid):
        return
    if report.failed:
        _OUTCOMES[report.nodeid] = "FAIL"
    elif report.skipped:
        _OUTCOMES.setdefault(report.nodeid, "SKIP")
    elif report.when == "call":
        _OUTCOMES.setdefault(report.nodeid, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in _TITLES:
        if nodeid in _OUTCOMES:
            detail = _DETAILS.get(nodeid, "")
            line = f"{_OUTCOMES[nodeid]}  {_TITLES[nodeid]}"
            terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
