import sys

import numpy as np
import pytest

from gopforge import _backend


@pytest.fixture(params=_backend.available())
def backend(request):
    """Run a test once per available kernel backend."""
    prev = _backend.name()
    _backend.use(request.param)
    yield request.param
    _backend.use(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdicts (one line per criterion) after the run."""
    module = sys.modules.get("test_acceptance")
    if module is not None and module.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(module.VERDICTS):
            terminalreporter.write_line(module.VERDICTS[n])
