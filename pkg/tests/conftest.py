import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)


@pytest.fixture
def free_params():
    from timeavg.core import SystemParams
    return SystemParams(horizon=0.125)


@pytest.fixture
def ho_params():
    from timeavg.core import SystemParams
    return SystemParams(horizon=0.125, omega=4.0)
