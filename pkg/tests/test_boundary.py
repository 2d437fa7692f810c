import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revcap.boundary import BoundaryError, fmt, tabulate
from revcap.cost import QuadraticCost
from conftest import make_system


def test_irreversible_invest_boundary_is_affine(irr_table):
    # psi = d^3, beta = d/6: rho (beta - beta' psi / psi' - q) = 2d/3 - 6
    d = np.geomspace(0.5, 50.0, 200)
    assert np.max(np.abs(irr_table.chat_plus(d) - (2.0 * d / 3.0 - 6.0))) < 1e-8
    assert irr_table.minus_curve is None
    assert np.all(np.isinf(irr_table.chat_minus(d)))


def test_junction_of_reversible_instance(rev_system, rev_table):
    # one-sided invest boundary meets c_lower_minus_g = 6 where 2d/3 - 6 = 6
    assert rev_system.junction_plus() == pytest.approx(18.0, rel=1e-12)
    assert rev_table.junctions[0] == pytest.approx(18.0, rel=1e-12)
    assert rev_table.region_splits == (6.0, math.inf)


@pytest.mark.parametrize("c", [6.5, 10.0, 20.0, 30.0])
def test_pair_solves_both_equations(rev_system, c):
    x, y = rev_system.solve_pair(c)
    assert abs(rev_system.eval_L1(x, y, c)) < 1e-10
    assert abs(rev_system.eval_L2(x, y, c)) < 1e-10
    th = rev_system.th
    assert x < th.dstar_minus(c) < th.dstar_plus(c) < y


def test_pairs_increase_with_capacity(rev_table):
    x, y = rev_table.x_star, rev_table.y_star
    assert np.all(np.isfinite(x)) and np.all(np.diff(x) > 0) and np.all(np.diff(y) > 0)
    assert not rev_table.failures


@pytest.mark.parametrize("c", [7.0, 15.0])
def test_outer_function_has_one_sign_change(rev_system, c):
    ux, _ = rev_system.solve_pair_u(c)
    top = math.log(rev_system.th.dstar_minus(c))
    grid = np.linspace(ux - 3.0, top - 1e-6, 241)
    vals = np.array([rev_system.outer_function_u(u, c) for u in grid])
    signs = np.sign(vals)
    changes = np.nonzero(signs[:-1] != signs[1:])[0]
    assert len(changes) == 1
    assert grid[changes[0]] <= ux <= grid[changes[0] + 1]


def test_outside_middle_region_has_no_pair(rev_system):
    assert rev_system.solve_pair(5.0) is None


def test_structure_against_myopic_thresholds(rev_table, rev_system):
    d = np.geomspace(0.5, 50.0, 150)
    th = rev_system.th
    assert np.all(rev_table.chat_plus(d) <= th.chat_plus_g(d) + 1e-9)
    assert np.all(rev_table.chat_minus(d) >= th.chat_minus_g(d) - 1e-9)
    assert np.all(rev_table.chat_plus(d) < rev_table.chat_minus(d))
    assert np.all(np.diff(rev_table.chat_plus(d)) > 0) and np.all(np.diff(rev_table.chat_minus(d)) > 0)


def test_curves_continuous_at_junction(rev_table):
    below, above = rev_table.chat_plus(18.0 * (1 - 1e-9)), rev_table.chat_plus(18.0 * (1 + 1e-9))
    assert abs(below - above) < 1e-6


def test_classification(rev_table):
    d = 8.0
    lo, hi = rev_table.chat_plus(d), rev_table.chat_minus(d)
    assert rev_table.classify(lo - 1.0, d) == "Invest"
    assert rev_table.classify(0.5 * (lo + hi), d) == "Continue"
    assert rev_table.classify(hi + 1.0, d) == "Disinvest"


@settings(deadline=None, max_examples=25)
@given(st.floats(0.6, 40.0))
def test_dhat_inverts_chat(rev_table, d):
    c_plus = float(rev_table.chat_plus(d))
    assert rev_table.dhat_plus(c_plus) == pytest.approx(d, rel=1e-8)
    c_minus = float(rev_table.chat_minus(d))
    if c_minus > 6.0:
        assert rev_table.dhat_minus(c_minus) == pytest.approx(d, rel=1e-8)


def test_dhat_conventions(rev_table):
    assert rev_table.dhat_minus(5.0) == 0.0
    assert rev_table.dhat_plus(6.0) == pytest.approx(18.0, rel=1e-9)


def test_empty_middle_region_rejected(gbm):
    # beta0 bounded in [0, 1]: c_lower_minus_g = 6 > c_upper_plus_g = -5
    cost = QuadraticCost(lambda d: 1.0 + d * 0, lambda d: d / (1.0 + d), 1.0, 1.0)
    with pytest.raises(BoundaryError, match="empty"):
        tabulate(make_system(gbm, cost), [0.0], d_range=(0.5, 5.0))


def test_csv_round_trip(rev_table, tmp_path):
    rev_table.write_csv(tmp_path / "c.csv", tmp_path / "d.csv")
    with open(tmp_path / "c.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["c"]) for r in rows] == list(rev_table.c_grid)
    assert [float(r["x_star"]) for r in rows] == list(rev_table.x_star)
    with open(tmp_path / "d.csv") as fh:
        rows = list(csv.DictReader(fh))
    d = np.array([float(r["d"]) for r in rows])
    assert np.array_equal(np.array([float(r["chat_plus"]) for r in rows]), rev_table.chat_plus(d))


@given(st.floats(allow_nan=False))
def test_fmt_is_lossless(v):
    assert float(fmt(v)) == v
