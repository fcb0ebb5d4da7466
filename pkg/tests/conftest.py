import numpy as np
import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line; the lines are echoed at the end of the run."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture
def np_rng():
    return np.random.default_rng(20240611)
