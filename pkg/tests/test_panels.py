import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from revcap.panels import Coordinate, PanelCurve, invert_monotone


@given(st.sampled_from(["linear", "log_above", "log_below"]), st.floats(0.01, 10.0))
def test_coordinate_round_trip(kind, offset):
    c = Coordinate(kind, 1.0)
    x = 1.0 + offset if kind != "log_below" else 1.0 - offset
    assert float(c.to_x(c.to_t(x))) == pytest.approx(x, rel=1e-14)


def test_fit_is_spectrally_accurate():
    curve = PanelCurve.build(np.exp, [(0.0, 1.0, Coordinate()), (1.0, 3.0, Coordinate())])
    x = np.linspace(0.0, 3.0, 301)
    assert np.max(np.abs(curve(x) - np.exp(x))) < 1e-13 * math.exp(3.0)


def test_log_coordinate_resolves_singular_end():
    # sqrt is smooth in t = log x
    curve = PanelCurve.build(np.sqrt, [(1e-12, 1.0, Coordinate("log_above", 0.0))])
    x = np.geomspace(1e-12, 1.0, 50)
    assert np.max(np.abs(curve(x) / np.sqrt(x) - 1.0)) < 1e-12


def test_antiderivative_and_derivative():
    curve = PanelCurve.build(np.cos, [(0.0, 2.0, Coordinate()), (2.0, 4.0, Coordinate())])
    F = curve.antiderivative(np.cos, anchor="left", value=0.0)
    x = np.linspace(0.0, 4.0, 81)
    assert np.max(np.abs(F(x) - np.sin(x))) < 1e-13
    G = curve.antiderivative(np.cos, anchor="right", value=math.sin(4.0))
    assert np.max(np.abs(G(x) - np.sin(x))) < 1e-13
    assert np.max(np.abs(curve.derivative()(x) + np.sin(x))) < 1e-11


def test_outside_range_raises():
    curve = PanelCurve.build(np.exp, [(0.0, 1.0, Coordinate())])
    with pytest.raises(ValueError):
        curve(1.5)


def test_invert_monotone():
    x = invert_monotone(lambda t: t**3, 2.0, 0.0, 2.0)
    assert x == pytest.approx(2.0 ** (1.0 / 3.0), rel=1e-15)
    with pytest.raises(ValueError):
        invert_monotone(lambda t: t, 5.0, 0.0, 1.0)
