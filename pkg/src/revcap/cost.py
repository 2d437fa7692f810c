"""Quadratic running cost, resolvent coefficients and cost-induced thresholds.

The running cost is ``g(c, d) = 0.5 (c^2 - 2 beta0(d) c + alpha0(d))`` with
``beta0`` strictly increasing, so ``g_c = c - beta0(d)`` and ``g_cc = 1``.
Investing costs ``q_plus`` per unit and disinvesting ``q_minus`` per unit;
``q_minus = inf`` is the irreversible case.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .diffusion import DiffusionModel, FundamentalPair, resolvent_with_derivative

PRESETS = ("identity", "square")


def preset(name: str):
    """Function, inverse and a label for a named coefficient preset.

    ``name`` is ``identity``, ``square`` or ``affine(a,b)`` (``a*d + b``).
    """
    key = name.replace(" ", "").lower()
    if key == "identity":
        return (lambda d: np.asarray(d, dtype=float)), (lambda y: np.asarray(y, dtype=float)), key
    if key == "square":
        return (lambda d: np.asarray(d, dtype=float) ** 2), (lambda y: np.sqrt(np.asarray(y, dtype=float))), key
    if key.startswith("affine(") and key.endswith(")"):
        try:
            a, b = (float(t) for t in key[7:-1].split(","))
        except ValueError:
            raise ValueError(f"cannot read affine preset {name!r}; expected affine(a,b)") from None
        if a == 0:
            raise ValueError("affine preset needs a nonzero slope")
        return (lambda d: a * np.asarray(d, dtype=float) + b), (lambda y: (np.asarray(y, dtype=float) - b) / a), key
    raise ValueError(f"unknown cost preset {name!r}; use identity, square or affine(a,b)")


@dataclass(frozen=True)
class QuadraticCost:
    """Quadratic cost with coefficient functions and proportional transaction costs.

    Parameters
    ----------
    alpha0, beta0 : callable
        Vectorised functions of demand.
    q_plus : float
        Unit cost of investment, positive.
    q_minus : float
        Unit cost of disinvestment, positive or ``inf``.
    beta0_inverse : callable, optional
        Exact inverse of ``beta0``; bisection is used when absent.
    labels : tuple of str
        Preset names, used in reports.
    """

    alpha0: Callable
    beta0: Callable
    q_plus: float
    q_minus: float = math.inf
    beta0_inverse: Callable | None = None
    labels: tuple = ("custom", "custom")

    def __post_init__(self):
        if not self.q_plus > 0:
            raise ValueError("q_plus must be positive")
        if not self.q_minus > 0:
            raise ValueError("q_minus must be positive or inf")

    @classmethod
    def from_presets(cls, alpha0: str, beta0: str, q_plus: float, q_minus: float = math.inf):
        fa, _, la = preset(alpha0)
        fb, inv, lb = preset(beta0)
        return cls(fa, fb, float(q_plus), float(q_minus), inv, (la, lb))

    @property
    def irreversible(self) -> bool:
        return math.isinf(self.q_minus)

    def validate(self, model: DiffusionModel, n: int = 1000):
        """Check ``beta0`` strictly increasing and ``g >= 0`` on a grid over the window."""
        lo, hi = model.window
        u = np.linspace(model.to_internal(lo), model.to_internal(hi), n)
        d = model.from_internal(u)
        b = np.asarray(self.beta0(d), dtype=float)
        if not np.all(np.diff(b) > 0):
            k = int(np.argmin(np.diff(b)))
            raise ValueError(f"beta0 is not strictly increasing near d={d[k]:g}")
        a = np.asarray(self.alpha0(d), dtype=float)
        # g >= 0 for all c iff alpha0 >= beta0^2
        gap = a - b * b
        if np.any(gap < -1e-12 * np.maximum(1.0, a)):
            k = int(np.argmin(gap))
            raise ValueError(f"running cost takes negative values: alpha0 < beta0^2 at d={d[k]:g}")

    def beta0_limits(self, model: DiffusionModel):
        """``(inf beta0, sup beta0)`` over the open state interval."""
        out = []
        for end, inner in ((model.d_min, model.window[0]), (model.d_max, model.window[1])):
            with np.errstate(all="ignore"):
                val = float(np.asarray(self.beta0(np.array([end])))[0])
            if math.isnan(val):
                val = float(np.asarray(self.beta0(np.array([inner])))[0])
            out.append(val)
        return out[0], out[1]

    def beta0_inv(self, model: DiffusionModel, y):
        """Inverse of ``beta0``; ``y`` must lie strictly inside its range."""
        y = np.asarray(y, dtype=float)
        if self.beta0_inverse is not None:
            return self.beta0_inverse(y)
        lo, hi = model.window

        def widen(x, end):
            if math.isinf(end):
                return x + (x - model.d0) if x != model.d0 else x + math.copysign(1.0, end)
            return 0.5 * (x + end)

        def one(t):
            f = lambda x: float(np.asarray(self.beta0(np.array([x])))[0]) - t
            a, b = lo, hi
            for _ in range(200):
                if f(a) <= 0:
                    break
                a = widen(a, model.d_min)
            for _ in range(200):
                if f(b) >= 0:
                    break
                b = widen(b, model.d_max)
            return brentq(f, a, b, xtol=1e-300, rtol=4.0 * np.finfo(float).eps, maxiter=2000)

        return np.vectorize(one, otypes=[float])(y)


def running_cost(cost: QuadraticCost, c, d):
    """``g(c, d) = 0.5 (c^2 - 2 beta0(d) c + alpha0(d))``."""
    c = np.asarray(c, dtype=float)
    return 0.5 * (c * c - 2.0 * cost.beta0(d) * c + cost.alpha0(d))


def marginal_cost(cost: QuadraticCost, c, d):
    """``g_c(c, d) = c - beta0(d)``."""
    return np.asarray(c, dtype=float) - cost.beta0(d)


class ResolventCoeffs:
    """Resolvents ``alpha = R alpha0`` and ``beta = R beta0`` with two derivatives.

    First derivatives come from the differentiated Green representation,
    second derivatives from the ODE ``0.5 sigma^2 f'' = rho f - mu f' - f0``.
    """

    def __init__(self, pair: FundamentalPair, cost: QuadraticCost):
        self.pair = pair
        self.cost = cost
        self.model = pair.model
        self.rho = pair.model.rho

    def _triple(self, f0, d):
        d = np.asarray(d, dtype=float)
        val, der = resolvent_with_derivative(self.pair, f0, d)
        s2 = np.asarray(self.model.volatility(d), dtype=float) ** 2
        sec = 2.0 * (self.rho * val - self.model.drift(d) * der - f0(d)) / s2
        return val, der, sec

    def alpha_all(self, d):
        return self._triple(self.cost.alpha0, d)

    def beta_all(self, d):
        return self._triple(self.cost.beta0, d)

    def alpha(self, d):
        return resolvent_with_derivative(self.pair, self.cost.alpha0, d)[0]

    def beta(self, d):
        return resolvent_with_derivative(self.pair, self.cost.beta0, d)[0]

    def beta_prime(self, d):
        return resolvent_with_derivative(self.pair, self.cost.beta0, d)[1]


def resolvent_coeffs(model: DiffusionModel, pair: FundamentalPair, cost: QuadraticCost) -> ResolventCoeffs:
    if pair.model is not model:
        raise ValueError("pair was built for a different model")
    cost.validate(model)
    return ResolventCoeffs(pair, cost)


def vhat(coeffs: ResolventCoeffs, c, d):
    """Cost of never acting: ``0.5 (c^2/rho - 2 beta c + alpha)``."""
    c = np.asarray(c, dtype=float)
    return 0.5 * (c * c / coeffs.rho - 2.0 * coeffs.beta(d) * c + coeffs.alpha(d))


def vhat_c(coeffs: ResolventCoeffs, c, d):
    return np.asarray(c, dtype=float) / coeffs.rho - coeffs.beta(d)


def vhat_cd(coeffs: ResolventCoeffs, c, d):
    return -coeffs.beta_prime(d) + 0.0 * np.asarray(c, dtype=float)


@dataclass(frozen=True)
class Thresholds:
    """Cost-induced thresholds on the capacity and demand axes.

    ``c_lower_minus_g`` and ``c_upper_plus_g`` bound the capacities for which
    both free boundaries come from the two-equation system.
    """

    cost: QuadraticCost
    model: DiffusionModel
    rho: float
    beta0_inf: float
    beta0_sup: float

    @property
    def c_lower_minus_g(self) -> float:
        return self.beta0_inf + self.rho * self.cost.q_minus

    @property
    def c_upper_plus_g(self) -> float:
        return self.beta0_sup - self.rho * self.cost.q_plus

    @property
    def c_lower_plus_g(self) -> float:
        return self.beta0_inf - self.rho * self.cost.q_plus

    @property
    def c_upper_minus_g(self) -> float:
        return self.beta0_sup + self.rho * self.cost.q_minus

    def chat_plus_g(self, d):
        return self.cost.beta0(d) - self.rho * self.cost.q_plus

    def chat_minus_g(self, d):
        return self.cost.beta0(d) + self.rho * self.cost.q_minus

    def dstar_plus(self, c):
        """``inf{xi : g_c(c, xi) < -rho q_plus}`` with ``inf of empty = d_max``."""
        return self._level(np.asarray(c, dtype=float) + self.rho * self.cost.q_plus)

    def dstar_minus(self, c):
        """``sup{xi : g_c(c, xi) > rho q_minus}`` with ``sup of empty = d_min``."""
        return self._level(np.asarray(c, dtype=float) - self.rho * self.cost.q_minus)

    def _level(self, y):
        # both conventions send levels below the range to d_min and above it to d_max
        y = np.atleast_1d(y)
        out = np.empty_like(y)
        below = y <= self.beta0_inf
        above = y >= self.beta0_sup
        out[below] = self.model.d_min
        out[above] = self.model.d_max
        inside = ~(below | above)
        if np.any(inside):
            out[inside] = self.cost.beta0_inv(self.model, y[inside])
        return out if out.size > 1 else float(out[0])


def thresholds(cost: QuadraticCost, model: DiffusionModel) -> Thresholds:
    lo, hi = cost.beta0_limits(model)
    return Thresholds(cost, model, model.rho, lo, hi)
