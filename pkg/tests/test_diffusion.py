import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revcap.diffusion import (DiffusionModel, DomainError, GBMPair, NumericPair, fundamental_pair, green,
                              resolvent, resolvent_with_derivative, sample_path, step_demand)

SQ2 = math.sqrt(2.0)


def test_gbm_exponents_are_quadratic_roots():
    # rho - mu z - 0.5 sigma^2 z (z - 1) = 0 with mu=0, sigma^2=2, rho=6 is z^2 - z - 6 = 0
    pair = fundamental_pair(DiffusionModel.gbm(0.0, SQ2, 6.0))
    assert isinstance(pair, GBMPair)
    assert pair.m == pytest.approx(3.0, rel=1e-15)
    assert pair.n == pytest.approx(-2.0, rel=1e-15)


@given(st.floats(-0.5, 0.5), st.floats(0.2, 1.0), st.floats(0.5, 4.0))
def test_fundamental_solutions_solve_the_ode(mu, sigma, extra):
    rho = max(0.0, 2 * mu + sigma**2) + extra
    model = DiffusionModel.gbm(mu, sigma, rho)
    pair = fundamental_pair(model)
    d = np.array([0.3, 1.0, 4.0])
    for f, df, ddf in ((pair.psi, pair.dpsi, pair.ddpsi), (pair.phi, pair.dphi, pair.ddphi)):
        res = 0.5 * sigma**2 * d**2 * ddf(d) + mu * d * df(d) - rho * f(d)
        assert np.max(np.abs(res) / (rho * np.abs(f(d)))) < 1e-12
    assert np.all(np.diff(pair.psi(d)) > 0) and np.all(np.diff(pair.phi(d)) < 0)


def test_wronskian_constant_in_scale():
    model = DiffusionModel.gbm(0.1, 0.7, 2.0)
    pair = fundamental_pair(model)
    w = pair.wronskian_at(np.array([0.2, 1.0, 7.0]))
    assert np.allclose(w, pair.wronskian, rtol=1e-13)


def test_numeric_pair_matches_closed_form():
    mu, sigma, rho = 0.05, 0.4, 1.0
    gbm = DiffusionModel.gbm(mu, sigma, rho)
    gen = DiffusionModel.generic(lambda d: mu * d, lambda d: sigma * d, rho, d_min=0.0, d_max=math.inf, d0=1.0)
    exact, num = fundamental_pair(gbm), fundamental_pair(gen)
    assert isinstance(num, NumericPair)
    d = np.geomspace(0.05, 20.0, 25)
    assert np.max(np.abs(num.log_psi(d) - exact.log_psi(d))) < 1e-9
    assert np.max(np.abs(num.log_phi(d) - exact.log_phi(d))) < 1e-9
    assert num.wronskian == pytest.approx(exact.wronskian, rel=1e-9)


@settings(deadline=None, max_examples=20)
@given(st.floats(0.2, 30.0))
def test_gbm_resolvent_of_monomials(d):
    mu, sigma, rho = 0.0, SQ2, 6.0
    pair = fundamental_pair(DiffusionModel.gbm(mu, sigma, rho))
    one = resolvent(pair, lambda x: np.ones_like(x), d)
    lin = resolvent(pair, lambda x: x, d)
    sq = resolvent(pair, lambda x: x * x, d)
    assert one == pytest.approx(1.0 / rho, rel=1e-10)
    assert lin == pytest.approx(d / (rho - mu), rel=1e-10)
    assert sq == pytest.approx(d * d / (rho - 2 * mu - sigma**2), rel=1e-10)


def test_resolvent_derivative():
    pair = fundamental_pair(DiffusionModel.gbm(0.02, 0.3, 1.0))
    d = np.array([0.5, 2.0])
    _, der = resolvent_with_derivative(pair, lambda x: x * x, d)
    assert np.allclose(der, 2.0 * d / (1.0 - 0.04 - 0.09), rtol=1e-10)


def test_arithmetic_brownian_resolvent():
    # E X_t^2 = (x + mu t)^2 + sigma^2 t, integrated against exp(-rho t)
    mu, sigma, rho = 0.3, 0.8, 1.5
    model = DiffusionModel.generic(lambda d: mu + 0 * d, lambda d: sigma + 0 * d, rho, d0=0.0)
    pair = fundamental_pair(model)
    x = np.array([-1.0, 0.0, 2.0])
    exact = x**2 / rho + 2 * x * mu / rho**2 + 2 * mu**2 / rho**3 + sigma**2 / rho**2
    assert np.allclose(resolvent(pair, lambda d: d * d, x), exact, rtol=1e-9)


def test_green_kernel_symmetry():
    pair = fundamental_pair(DiffusionModel.gbm(0.0, SQ2, 6.0))
    a, b = np.array([0.5, 3.0]), np.array([3.0, 0.5])
    assert np.allclose(green(pair, a, b), green(pair, b, a), rtol=0)


def test_discount_condition_rejected():
    with pytest.raises(ValueError, match="discount condition"):
        DiffusionModel.gbm(0.5, 1.0, 2.0)


def test_evaluation_outside_interval_raises():
    pair = fundamental_pair(DiffusionModel.gbm(0.0, SQ2, 6.0))
    with pytest.raises(DomainError):
        pair.psi(-1.0)


def test_sample_path_is_reproducible_and_exact():
    model = DiffusionModel.gbm(0.1, 0.3, 1.0)
    p1 = sample_path(model, 2.0, 0.01, 1.0, seed=3, path_index=5)
    p2 = sample_path(model, 2.0, 0.01, 1.0, seed=3, path_index=5)
    p3 = sample_path(model, 2.0, 0.01, 1.0, seed=3, path_index=6)
    assert np.array_equal(p1.values, p2.values)
    assert not np.array_equal(p1.values, p3.values)
    assert p1.scheme == "ExactGBM" and len(p1.times) == 101 and p1.times[-1] == 1.0


def test_exact_gbm_step_moments():
    model = DiffusionModel.gbm(0.1, 0.3, 1.0)
    z = np.random.default_rng(0).standard_normal(400_000)
    x = np.log(step_demand(model, np.ones_like(z), 0.5, z))
    assert np.mean(x) == pytest.approx((0.1 - 0.045) * 0.5, abs=4 * 0.3 * math.sqrt(0.5 / 4e5))
    assert np.var(x) == pytest.approx(0.09 * 0.5, rel=0.01)
