import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from popdelay import DelayMatrix, ProtocolParams, compute_constants, rps  # noqa: E402
from popdelay._backend import compiled_available  # noqa: E402

FIG_X0 = (0.6, 0.2, 0.2)

BACKENDS = ["python"] + (["cython"] if compiled_available() else [])


@pytest.fixture
def game():
    return rps(1.0, 2.0)


@pytest.fixture
def params():
    return ProtocolParams(0.25, 3)


@pytest.fixture
def delays():
    return DelayMatrix.abs_diff(3)


@pytest.fixture
def consts(game, params, delays):
    return compute_constants(game, params, delays, 0.25)


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def generic_x0(count=5, seed=7):
    rng = np.random.default_rng(seed)
    return [tuple(v) for v in rng.dirichlet(np.ones(3), size=count)]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
