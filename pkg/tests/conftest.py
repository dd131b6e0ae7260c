"""Collects the one-line verdicts emitted by the acceptance suite and prints them after the run."""

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(request):
    """Call ``verdict(n, detail)`` once the checks of criterion ``n`` are about to be asserted."""
    state = {}

    def record(n, detail=""):
        state["n"], state["detail"] = n, detail

    yield record
    if "n" in state:
        rep = getattr(request.node, "rep_call", None)
        ok = rep is not None and rep.passed
        line = f"criterion {state['n']:>2}: {'PASS' if ok else 'FAIL'}  {state['detail']}"
        ACCEPTANCE_LINES.append(line)
        print("\n" + line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
