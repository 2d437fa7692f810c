import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from revcap.cost import (QuadraticCost, marginal_cost, preset, resolvent_coeffs, running_cost, thresholds, vhat,
                         vhat_c, vhat_cd)
from revcap.diffusion import fundamental_pair


@given(st.floats(-3, 3).filter(lambda a: abs(a) > 1e-3), st.floats(-5, 5), st.floats(-10, 10))
def test_affine_preset_inverse(a, b, d):
    f, inv, label = preset(f"affine({a}, {b})")
    assert float(inv(f(d))) == pytest.approx(d, rel=1e-9, abs=1e-9)
    assert label.startswith("affine(")


def test_unknown_preset():
    with pytest.raises(ValueError, match="unknown cost preset"):
        preset("cube")


@given(st.floats(-10, 10), st.floats(0.01, 10))
def test_running_cost_is_quadratic_in_c(c, d):
    cost = QuadraticCost.from_presets("square", "identity", 1.0)
    assert float(running_cost(cost, c, d)) == pytest.approx(0.5 * (c - d) ** 2, abs=1e-12 * (1 + c * c + d * d))
    assert float(marginal_cost(cost, c, d)) == pytest.approx(c - d)


def test_cost_validation(gbm):
    with pytest.raises(ValueError, match="q_plus"):
        QuadraticCost.from_presets("square", "identity", 0.0)
    bad_beta = QuadraticCost(lambda d: d * d, lambda d: -d, 1.0)
    with pytest.raises(ValueError, match="increasing"):
        bad_beta.validate(gbm)
    negative = QuadraticCost(lambda d: 0.5 * d * d, lambda d: d, 1.0)
    with pytest.raises(ValueError, match="negative"):
        negative.validate(gbm)


def test_thresholds_of_the_reference_instance(gbm, rev_cost, irr_cost):
    th = thresholds(rev_cost, gbm)
    assert th.c_lower_minus_g == 6.0 and th.c_upper_plus_g == math.inf
    assert th.c_lower_plus_g == -6.0
    assert float(th.dstar_plus(1.0)) == pytest.approx(7.0)
    assert float(th.dstar_minus(10.0)) == pytest.approx(4.0)
    # empty level sets follow the inf/sup conventions
    assert float(th.dstar_plus(-7.0)) == 0.0 and float(th.dstar_minus(5.0)) == 0.0
    assert np.allclose(th.chat_plus_g(np.array([1.0, 3.0])), [-5.0, -3.0])
    assert thresholds(irr_cost, gbm).c_lower_minus_g == math.inf


def test_vhat_closed_form(gbm, irr_cost):
    # alpha = d^2/(rho - 2mu - sigma^2) = d^2/4 and beta = d/6
    coeffs = resolvent_coeffs(gbm, fundamental_pair(gbm), irr_cost)
    c, d = np.array([0.0, -5.0, 3.0]), np.array([10.0, 20.0, 0.7])
    exact = 0.5 * (c * c / 6.0 - 2.0 * c * d / 6.0 + d * d / 4.0)
    assert np.allclose(vhat(coeffs, c, d), exact, rtol=1e-11)
    assert float(vhat(coeffs, 0.0, 10.0)) == pytest.approx(12.5, rel=1e-11)
    assert np.allclose(vhat_c(coeffs, c, d), c / 6.0 - d / 6.0, rtol=1e-11)
    assert np.allclose(vhat_cd(coeffs, c, d), -1.0 / 6.0, rtol=1e-11)
    _, db, ddb = coeffs.beta_all(d)
    assert np.allclose(db, 1.0 / 6.0) and np.allclose(ddb, 0.0, atol=1e-10)


def test_bisection_inverse_matches_exact(gbm):
    cost = QuadraticCost(lambda d: d**6 + 1.0, lambda d: d**3, 1.0)
    y = np.array([0.001, 1.0, 8.0])
    assert np.allclose(cost.beta0_inv(gbm, y), np.cbrt(y), rtol=1e-11)
