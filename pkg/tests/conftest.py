import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_GATE_KEY = pytest.StashKey[list]()


@pytest.fixture
def gate(request):
    """Records one pass/fail line per acceptance criterion."""
    lines = request.config.stash.setdefault(_GATE_KEY, [])

    def record(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_GATE_KEY, [])
    if lines:
        terminalreporter.section("acceptance gate")
        for line in lines:
            terminalreporter.write_line(line)
