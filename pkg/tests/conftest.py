import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lusinlab.dyadic import CantorSystem  # noqa: E402


@pytest.fixture(scope="session")
def sys2():
    return CantorSystem(2, 3, 10)


@pytest.fixture(scope="session")
def sys3():
    return CantorSystem(3, 4, 10)


@pytest.fixture(scope="session")
def params2(sys2):
    from lusinlab.tentacles import autotune_widths
    return autotune_widths(3, sys2)


@pytest.fixture(scope="session")
def forest2(params2):
    from lusinlab.tentacles import TentacleForest
    return TentacleForest(params2)


@pytest.fixture(scope="session")
def L2(sys2):
    from lusinlab.maps import LMap
    return LMap(3, sys2)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
