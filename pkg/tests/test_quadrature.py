import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from revcap.quadrature import IntegrationError, integrate, integrate_outward, panel_nodes


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=12), st.floats(-2, 0), st.floats(0.1, 3))
def test_polynomials_integrate_exactly(coef, a, width):
    b = a + width
    p = np.polynomial.Polynomial(coef)
    exact = p.integ()(b) - p.integ()(a)
    assert integrate(p, a, b) == pytest.approx(exact, rel=1e-13, abs=1e-13)


def test_weights_sum_to_length():
    x, w = panel_nodes(np.array([0.0, 1.0]), np.array([2.0, 1.5]), 0.5)
    assert np.allclose(w.sum(axis=-1), [2.0, 0.5], rtol=1e-15)
    assert x.shape == w.shape


def test_array_endpoints():
    a = np.array([0.0, 0.0, 1.0])
    b = np.array([1.0, math.pi, 2.0])
    out = integrate(np.sin, a, b)
    assert np.allclose(out, 1.0 - np.cos(b) + np.cos(a) - 1.0, atol=1e-14)


def test_outward_exponential_tail():
    total, reached = integrate_outward(lambda x: np.exp(-x), np.array([0.0, 1.0]), 1)
    assert not reached
    assert np.allclose(total, [1.0, math.exp(-1.0)], rtol=1e-14)


def test_outward_to_stop():
    total, reached = integrate_outward(np.cos, np.array([0.0]), 1, stop=2.0)
    assert reached
    assert total[0] == pytest.approx(math.sin(2.0), rel=1e-14)


def test_outward_leftward():
    total, _ = integrate_outward(lambda x: np.exp(2.0 * x), np.array([0.0]), -1)
    assert total[0] == pytest.approx(0.5, rel=1e-14)


def test_non_decaying_integrand_raises():
    with pytest.raises(IntegrationError):
        integrate_outward(lambda x: np.ones_like(x), np.array([0.0]), 1, max_panels=50)
