import json
from pathlib import Path

import numpy as np
import pytest

from growfrag import default_spec, make_grid
from growfrag.eigen import Assembler, solve_eigen

ORACLES = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


@pytest.fixture(scope="session")
def oracles():
    return ORACLES


@pytest.fixture(scope="session")
def spec():
    return default_spec(0.2)


@pytest.fixture(scope="session")
def spec0():
    return default_spec(0.0)


@pytest.fixture(scope="session")
def grid200():
    return make_grid(1.0, 200)


@pytest.fixture(scope="session")
def grid400():
    return make_grid(1.0, 400)


@pytest.fixture(scope="session")
def assembler200(spec0, grid200):
    return Assembler(spec0, grid200)


@pytest.fixture(scope="session")
def eig200(spec, grid200):
    return solve_eigen(spec, grid200)


@pytest.fixture(scope="session")
def eig400(spec, grid400):
    return solve_eigen(spec, grid400)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


from hypothesis import settings as _hsettings  # noqa: E402

_hsettings.register_profile("repro", derandomize=True, deadline=None)
_hsettings.load_profile("repro")


ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
