import math

import numpy as np
import pytest
from hypothesis import settings

from layerlab import connect1d as c1
from layerlab import discretization as dz
from layerlab import spectrum as spc
from layerlab import translate as tr
from layerlab.potential import make_scalar_quartic, make_two_channel

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

SQ2 = math.sqrt(2.0)
C0_SCALAR = 2.0 * SQ2 / 3.0


@pytest.fixture(scope="session")
def scalar():
    return make_scalar_quartic()


@pytest.fixture(scope="session")
def two():
    return make_two_channel(0.05)


@pytest.fixture(scope="session")
def grid_scalar():
    return dz.Grid1D(20.0, 4001)


@pytest.fixture(scope="session")
def tanh_profile(grid_scalar):
    return dz.Profile1D(grid_scalar, np.tanh(grid_scalar.nodes / SQ2))


@pytest.fixture(scope="session")
def scalar_conns(scalar, grid_scalar):
    return c1.find_all_connections(scalar, grid_scalar)


@pytest.fixture(scope="session")
def scalar_report(scalar, scalar_conns):
    return spc.analyze(scalar, scalar_conns.profiles[0])


@pytest.fixture(scope="session")
def scalar_consts(scalar_conns):
    return tr.calibrate_constants(scalar_conns)


@pytest.fixture(scope="session")
def two_grid():
    # wide enough for the slow u2 tail, coarse enough to keep the suite quick
    return dz.Grid1D(60.0, 3001)


@pytest.fixture(scope="session")
def two_conns(two, two_grid):
    return c1.find_all_connections(two, two_grid)


@pytest.fixture(scope="session")
def two_reports(two, two_conns):
    return [spc.analyze(two, u) for u in two_conns.profiles]


@pytest.fixture(scope="session")
def two_consts(two_conns):
    return tr.calibrate_constants(two_conns)


@pytest.fixture(scope="session")
def strip_ygrid():
    return dz.Grid1D(12.0, 401)


@pytest.fixture(scope="session")
def two_conns_strip(two, strip_ygrid):
    return c1.find_all_connections(two, strip_ygrid)


@pytest.fixture(scope="session")
def two_consts_strip(two_conns_strip):
    return tr.calibrate_constants(two_conns_strip)


@pytest.fixture(scope="session")
def scalar_conns_strip(scalar):
    return c1.find_all_connections(scalar, dz.Grid1D(8.0, 161))


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """record(label, ok, detail) -> ok; one PASS/FAIL line per acceptance check."""

    def record(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
