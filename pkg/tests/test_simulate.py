import math

import numpy as np
import pytest

from revcap.cost import vhat
from revcap.simulate import (DO_NOTHING, PolicySpec, compare_policies, dynkin_payoff, game_value, mc_resolvent,
                             mc_value, reflect_step, simulate_policy, tail_horizon, worker_count)


def test_reflect_step_clamps_to_the_band(rev_table):
    pol = PolicySpec(rev_table)
    d = np.array([8.0, 8.0, 8.0])
    lo, hi = float(rev_table.chat_plus(8.0)), float(rev_table.chat_minus(8.0))
    c_new, up, down = reflect_step(pol, np.array([lo - 1.0, 0.5 * (lo + hi), hi + 2.0]), d)
    assert np.allclose(c_new, [lo, 0.5 * (lo + hi), hi])
    assert np.allclose(up, [1.0, 0.0, 0.0]) and np.allclose(down, [0.0, 0.0, 2.0])
    same, _, _ = reflect_step(PolicySpec(None, mode=DO_NOTHING), np.array([3.0]), np.array([8.0]))
    assert same[0] == 3.0


def test_tail_horizon():
    from revcap.diffusion import DiffusionModel
    model = DiffusionModel.gbm(0.0, math.sqrt(2.0), 6.0)
    # growth of D^2 is 2 mu + sigma^2 = 2, so discounted quadratic costs decay at rate 4
    assert tail_horizon(model, 10.0, 1e-4) == pytest.approx(math.log(1e5) / 4.0)
    assert tail_horizon(model, 1e-5, 1e-4) == 0.0


def test_results_are_reproducible_and_thread_independent(irr_table, gbm, irr_cost, monkeypatch):
    pol = PolicySpec(irr_table)
    args = (pol, gbm, irr_cost, 0.0, 10.0, 1e-2, 0.3, 20_000, 11)
    monkeypatch.delenv("REVCAP_THREADS", raising=False)
    a = mc_value(*args)
    b = mc_value(*args)
    monkeypatch.setenv("REVCAP_THREADS", "3")
    c = mc_value(*args)
    assert a == b
    assert a.discounted_cost == c.discounted_cost and a.std_error == c.std_error
    assert mc_value(*args[:-1], 12).discounted_cost != a.discounted_cost


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("REVCAP_THREADS", "x")
    with pytest.raises(ValueError):
        worker_count()
    monkeypatch.setenv("REVCAP_THREADS", "0")
    assert worker_count() == 1


def test_recorded_path_stays_in_band(rev_table, gbm, rev_cost):
    res, rows = simulate_policy(PolicySpec(rev_table), gbm, rev_cost, 20.0, 8.0, 1e-2, 1.0, seed=5,
                                path_index=3, record=True)
    t = np.array([r[0] for r in rows])
    D = np.array([r[1] for r in rows])
    C = np.array([r[2] for r in rows])
    up = np.array([r[3] for r in rows])
    down = np.array([r[4] for r in rows])
    assert t[0] == 0.0 and t[-1] == 1.0
    # the start (20, 8) lies above the disinvest boundary: an initial jump down
    assert down[0] > 0 and up[0] == 0
    inside = (D > rev_table.d_range[0]) & (D < rev_table.d_range[1])
    tol = 1e-6
    assert np.all(C[inside] >= rev_table.chat_plus(D[inside]) - tol)
    assert np.all(C[inside] <= rev_table.chat_minus(D[inside]) + tol)
    assert np.all((up == 0) | (down == 0))
    assert np.allclose(np.diff(C), up[1:] - down[1:])
    again = simulate_policy(PolicySpec(rev_table), gbm, rev_cost, 20.0, 8.0, 1e-2, 1.0, seed=5, path_index=3)
    assert again.discounted_cost == res.discounted_cost


def test_do_nothing_matches_vhat(gbm, irr_cost):
    from revcap.cost import resolvent_coeffs
    from revcap.diffusion import fundamental_pair
    coeffs = resolvent_coeffs(gbm, fundamental_pair(gbm), irr_cost)
    exact = float(vhat(coeffs, 0.0, 1.0))
    T = tail_horizon(gbm, 1.0, 1e-5)
    res = mc_value(PolicySpec(None, mode=DO_NOTHING), gbm, irr_cost, 0.0, 1.0, 2e-3, T, 40_000, 3)
    assert abs(res.mean - exact) < 3.0 * res.std_error + 1e-5
    assert res.total_invest == 0.0


def test_policies_ranked_on_common_paths(irr_table, gbm, irr_cost):
    specs = [PolicySpec(irr_table, 0.6, label="up"), PolicySpec(irr_table, label="opt"),
             PolicySpec(None, mode=DO_NOTHING)]
    ranked = compare_policies(specs, gbm, irr_cost, -5.0, 20.0, 1e-2, 1.0, 5000, 1)
    assert [r.mean for r in ranked] == sorted(r.mean for r in ranked)
    assert ranked[-1].label == DO_NOTHING


def test_crossing_shifts_rejected(rev_table, gbm, rev_cost):
    bad = PolicySpec(rev_table, shift_plus=50.0)
    with pytest.raises(ValueError, match="cross"):
        mc_value(bad, gbm, rev_cost, 10.0, 8.0, 1e-2, 0.1, 10, 1)


def test_mc_resolvent_of_constant():
    from revcap.diffusion import DiffusionModel
    model = DiffusionModel.gbm(0.0, math.sqrt(2.0), 6.0)
    h, T = 1e-2, 2.0
    mean, se = mc_resolvent(model, lambda x: np.ones_like(x), 3.0, h, T, 100, 0)
    # trapezoid sum of exp(-6 t) is a geometric series
    q = math.exp(-6.0 * h)
    exact = 0.5 * h * (1.0 + q) / (1.0 - q) * (1.0 - math.exp(-6.0 * T))
    assert mean == pytest.approx(exact, rel=1e-12) and se < 1e-15


def test_dynkin_payoff_immediate_stops(rev_table, gbm, rev_cost):
    c = 10.0
    x, y = float(rev_table.dhat_minus(c)), float(rev_table.dhat_plus(c))
    assert dynkin_payoff(gbm, rev_cost, c, 1.5 * y, rev_table, 1e-3, 1.0, 0) == -1.0
    assert dynkin_payoff(gbm, rev_cost, c, 0.5 * x, rev_table, 1e-3, 1.0, 0) == 1.0


def test_game_value_respects_cost_bounds(rev_table, gbm, rev_cost):
    res = game_value(gbm, rev_cost, 10.0, 8.0, rev_table, 2e-3, 1.5, 4000, 2)
    assert -1.0 - 3 * res.std_error <= res.mean <= 1.0 + 3 * res.std_error
    assert res.stopped_invest + res.stopped_disinvest <= 1.0
    assert set(res.summary()) >= {"mean", "std_error", "n_paths", "dt", "horizon", "seed"}
