import re

import pytest

_details: dict[str, str] = {}
_outcomes: dict[str, str] = {}


@pytest.fixture
def report(request):
    """Record a one-line measurement for the acceptance summary."""

    def record(detail: str):
        _details[request.node.name] = detail

    return record


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid and (report.when == "call" or report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        if report.when == "call" or name not in _outcomes:
            _outcomes[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_outcomes, key=lambda s: int(re.search(r"\d+", s).group())):
        detail = _details.get(name, "")
        terminalreporter.write_line(f"{_outcomes[name]}  {name}  {detail}")
