import numpy as np
import pytest

from exprnet.rng import Rng

_CRITERIA = {}


@pytest.fixture
def rng():
    return Rng(20240611)


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion():
    """Record the outcome of an acceptance criterion: ``criterion(n, ok, detail)``."""
    def record(number, ok, detail):
        _CRITERIA[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
