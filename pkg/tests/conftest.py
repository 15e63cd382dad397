"""Shared test plumbing: a per-criterion verdict line for the acceptance suite."""

import time

import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for this test and enforce its time budget.

    The clock starts when the fixture is set up, i.e. at the top of the test
    body, so the budget covers the whole computation under test.
    """
    t0 = time.perf_counter()

    def _verdict(passed: bool, detail: str, budget: float) -> None:
        elapsed = time.perf_counter() - t0
        in_budget = elapsed < budget
        tag = "PASS" if (passed and in_budget) else "FAIL"
        name = request.node.name.removeprefix("test_").replace("_", "-")
        _VERDICTS.append(
            f"{name}: {tag}  ({detail}; {elapsed:.1f}s of {budget:.0f}s budget)"
        )
        assert passed, detail
        assert in_budget, f"over budget: {elapsed:.1f}s >= {budget:.0f}s"

    return _verdict


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
