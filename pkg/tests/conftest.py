import math

import numpy as np
import pytest

from revcap.boundary import BoundarySystem, tabulate
from revcap.cost import QuadraticCost, resolvent_coeffs
from revcap.diffusion import DiffusionModel, fundamental_pair
from revcap.value import build_value_function

SIGMA = math.sqrt(2.0)
RHO = 6.0

_ACCEPTANCE = {}


def record_acceptance(number, passed, detail):
    _ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def make_system(model, cost):
    pair = fundamental_pair(model)
    return BoundarySystem(pair, cost, resolvent_coeffs(model, pair, cost))


@pytest.fixture(scope="session")
def gbm():
    return DiffusionModel.gbm(0.0, SIGMA, RHO)


@pytest.fixture(scope="session")
def irr_cost():
    return QuadraticCost.from_presets("square", "identity", 1.0, math.inf)


@pytest.fixture(scope="session")
def rev_cost():
    return QuadraticCost.from_presets("square", "identity", 1.0, 1.0)


@pytest.fixture(scope="session")
def irr_system(gbm, irr_cost):
    return make_system(gbm, irr_cost)


@pytest.fixture(scope="session")
def rev_system(gbm, rev_cost):
    return make_system(gbm, rev_cost)


@pytest.fixture(scope="session")
def irr_table(irr_system):
    return tabulate(irr_system, np.linspace(-5.0, 20.0, 11), d_range=(0.5, 50.0))


@pytest.fixture(scope="session")
def rev_table(rev_system):
    return tabulate(rev_system, np.linspace(6.5, 30.0, 24), d_range=(0.5, 50.0))


@pytest.fixture(scope="session")
def bounded_value(gbm):
    # beta0 = 20 d/(1+d) gives a finite upper threshold, so both junctions exist
    b0 = lambda d: 20.0 * np.asarray(d, dtype=float) / (1.0 + np.asarray(d, dtype=float))
    cost = QuadraticCost(lambda d: b0(d) ** 2 + 1.0, b0, 1.0, 1.0)
    table = tabulate(make_system(gbm, cost), np.linspace(6.2, 13.8, 12), d_range=(0.2, 20.0))
    return build_value_function(table)


@pytest.fixture(scope="session")
def irr_value(irr_table):
    return build_value_function(irr_table)


@pytest.fixture(scope="session")
def rev_value(rev_table):
    return build_value_function(rev_table)
