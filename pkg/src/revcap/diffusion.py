"""One-dimensional demand diffusions and their resolvent toolkit.

The demand follows ``dD = mu(D) dt + sigma(D) dW`` on an open interval with
natural endpoints, discounted at rate ``rho``.  Everything downstream is built
from the increasing and decreasing positive solutions ``psi`` and ``phi`` of

    rho u - mu u' - 0.5 sigma^2 u'' = 0,

normalised so that ``psi(d0) = phi(d0) = 1``, together with the scale density
``S'``, the speed density ``m'`` and the Wronskian ``w``.

Geometric Brownian motion has closed forms.  For a generic diffusion the
log-derivatives of ``psi`` and ``phi`` solve a Riccati equation which is
integrated on a truncation window, in the direction in which it is stable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .quadrature import IntegrationError, integrate, integrate_outward

BLOCK = 8192  # paths per counter-based RNG block
CHUNK = 64  # time steps of normals drawn at once


class DomainError(ValueError):
    """Raised when a demand level lies outside the open state interval."""


class SolverError(RuntimeError):
    """Raised when the fundamental solutions cannot be integrated."""


@dataclass(frozen=True)
class DiffusionModel:
    """Uncontrolled demand diffusion.

    Use :meth:`gbm` or :meth:`generic` rather than the raw constructor.

    Parameters
    ----------
    drift, volatility : callable
        Vectorised coefficient functions ``d -> mu(d)`` and ``d -> sigma(d)``.
    rho : float
        Discount rate.
    d_min, d_max : float
        Open state interval, endpoints may be infinite.
    d0 : float
        Interior reference point where ``psi`` and ``phi`` equal one.
    kind : {"gbm", "generic"}
    mu, sigma : float, optional
        Constant GBM parameters (``kind == "gbm"`` only).
    window : tuple of float, optional
        Truncation interval for generic models; defaults depend on the domain.
    """

    drift: Callable
    volatility: Callable
    rho: float
    d_min: float = 0.0
    d_max: float = math.inf
    d0: float = 1.0
    kind: str = "generic"
    mu: float | None = None
    sigma: float | None = None
    window: tuple | None = None

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"discount rate must be positive, got rho={self.rho}")
        if not self.d_min < self.d_max:
            raise ValueError("state interval must satisfy d_min < d_max")
        if not self.d_min < self.d0 < self.d_max:
            raise ValueError(f"reference point d0={self.d0} is not interior")
        if self.kind == "gbm":
            if self.d_min != 0.0 or self.d_max != math.inf:
                raise ValueError("GBM lives on (0, inf)")
            bound = max(0.0, 2.0 * self.mu + self.sigma**2)
            if not self.rho > bound:
                raise ValueError(
                    f"discount condition violated: need rho > max(0, 2 mu + sigma^2) = {bound:g}, "
                    f"got rho={self.rho:g}")
        elif self.kind != "generic":
            raise ValueError(f"unknown diffusion kind {self.kind!r}")
        if self.window is None:
            object.__setattr__(self, "window", self._default_window())
        lo, hi = self.window
        if not self.d_min < lo < self.d0 < hi < self.d_max:
            raise ValueError("window must be interior and contain d0")

    @classmethod
    def gbm(cls, mu: float, sigma: float, rho: float, d0: float = 1.0) -> "DiffusionModel":
        """Geometric Brownian motion ``dD = mu D dt + sigma D dW`` on ``(0, inf)``."""
        return cls(
            drift=lambda d: mu * np.asarray(d, dtype=float),
            volatility=lambda d: sigma * np.asarray(d, dtype=float),
            rho=rho, d_min=0.0, d_max=math.inf, d0=d0, kind="gbm", mu=float(mu), sigma=float(sigma))

    @classmethod
    def generic(cls, drift, volatility, rho, d_min=-math.inf, d_max=math.inf, d0=None, window=None):
        """A diffusion given by coefficient functions; ``d0`` defaults to the window midpoint."""
        if d0 is None:
            if window is not None:
                d0 = 0.5 * (window[0] + window[1])
            elif d_min == 0.0 and d_max == math.inf:
                d0 = 1.0
            elif math.isfinite(d_min) and math.isfinite(d_max):
                d0 = 0.5 * (d_min + d_max)
            elif math.isfinite(d_min):
                d0 = d_min + 1.0
            elif math.isfinite(d_max):
                d0 = d_max - 1.0
            else:
                d0 = 0.0
        return cls(drift=drift, volatility=volatility, rho=rho, d_min=d_min, d_max=d_max, d0=d0,
                   window=window)

    @property
    def log_coordinate(self) -> bool:
        """Whether integrals are taken in ``log d`` (half-line models) rather than ``d``."""
        return self.d_min == 0.0 and self.d_max == math.inf

    def to_internal(self, d):
        d = np.asarray(d, dtype=float)
        return np.log(d) if self.log_coordinate else d

    def from_internal(self, u):
        u = np.asarray(u, dtype=float)
        return np.exp(u) if self.log_coordinate else u

    def jacobian(self, u):
        """``dd/du`` of the internal coordinate."""
        u = np.asarray(u, dtype=float)
        return np.exp(u) if self.log_coordinate else np.ones_like(u)

    def internal_coefficients(self, u):
        """Drift and volatility of the diffusion expressed in the internal coordinate."""
        d = self.from_internal(u)
        mu = np.asarray(self.drift(d), dtype=float)
        sig = np.asarray(self.volatility(d), dtype=float)
        if self.log_coordinate:
            return mu / d - 0.5 * (sig / d) ** 2, sig / d
        return mu, sig

    def check_interior(self, d):
        d = np.asarray(d, dtype=float)
        if not np.all((d > self.d_min) & (d < self.d_max)):
            raise DomainError(f"demand outside the open interval ({self.d_min}, {self.d_max})")
        return d

    def _default_window(self):
        if self.log_coordinate:
            return (self.d0 * math.exp(-20.0), self.d0 * math.exp(20.0))
        if math.isinf(self.d_min) and math.isinf(self.d_max):
            s = float(np.asarray(self.volatility(self.d0)))
            half = 40.0 * max(s, 1e-12) / math.sqrt(self.rho)
            return (self.d0 - half, self.d0 + half)
        if math.isfinite(self.d_min) and math.isfinite(self.d_max):
            pad = 1e-6 * (self.d_max - self.d_min)
            return (self.d_min + pad, self.d_max - pad)
        raise ValueError("generic model on a half line other than (0, inf) needs an explicit window")


def _gbm_exponents(mu, sigma, rho):
    # roots of rho - mu z - 0.5 sigma^2 z (z - 1) = 0
    a = 0.5 * sigma**2
    b = mu - a
    disc = math.sqrt(b * b + 4.0 * a * rho)
    return (-b + disc) / (2.0 * a), (-b - disc) / (2.0 * a)


class FundamentalPair:
    """Increasing/decreasing fundamental solutions with densities and Wronskian.

    All methods are vectorised over ``d`` and raise :class:`DomainError` outside
    the open interval (or outside the truncation window for generic models).
    Subclasses supply ``log_psi``, ``log_phi``, ``u_psi``, ``u_phi`` (the
    logarithmic derivatives ``psi'/psi`` and ``phi'/phi``) and ``log_scale``.
    """

    model: DiffusionModel
    wronskian: float

    def psi(self, d):
        return np.exp(self.log_psi(d))

    def phi(self, d):
        return np.exp(self.log_phi(d))

    def dpsi(self, d):
        return self.psi(d) * self.u_psi(d)

    def dphi(self, d):
        return self.phi(d) * self.u_phi(d)

    def ddpsi(self, d):
        return self._second(d, self.psi(d), self.dpsi(d))

    def ddphi(self, d):
        return self._second(d, self.phi(d), self.dphi(d))

    def _second(self, d, u, du):
        d = np.asarray(d, dtype=float)
        mu = self.model.drift(d)
        s2 = np.asarray(self.model.volatility(d), dtype=float) ** 2
        return 2.0 * (self.model.rho * u - mu * du) / s2

    def scale_density(self, d):
        return np.exp(self.log_scale(d))

    def log_speed(self, d):
        s = np.asarray(self.model.volatility(d), dtype=float)
        return math.log(2.0) - 2.0 * np.log(s) - self.log_scale(d)

    def speed_density(self, d):
        return np.exp(self.log_speed(d))

    def log_measure(self, u):
        """Log of ``m'(d) dd/du`` at internal coordinate ``u``."""
        d = self.model.from_internal(u)
        return self.log_speed(d) + np.log(self.model.jacobian(u))

    def wronskian_at(self, d):
        """``(psi' phi - psi phi')/S'`` evaluated pointwise (constant in theory)."""
        d = np.asarray(d, dtype=float)
        lp, lf, ls = self.log_psi(d), self.log_phi(d), self.log_scale(d)
        return np.exp(lp + lf - ls) * (self.u_psi(d) - self.u_phi(d))


class GBMPair(FundamentalPair):
    """Closed-form pair ``psi = (d/d0)^m``, ``phi = (d/d0)^n`` for geometric Brownian motion."""

    def __init__(self, model: DiffusionModel):
        self.model = model
        self.m, self.n = _gbm_exponents(model.mu, model.sigma, model.rho)
        self.kappa = 2.0 * model.mu / model.sigma**2
        self.wronskian = self.m - self.n

    def _x(self, d):
        return np.log(self.model.check_interior(d) / self.model.d0)

    def log_psi(self, d):
        return self.m * self._x(d)

    def log_phi(self, d):
        return self.n * self._x(d)

    def u_psi(self, d):
        return self.m / self.model.check_interior(d)

    def u_phi(self, d):
        return self.n / self.model.check_interior(d)

    def log_scale(self, d):
        return -self.kappa * self._x(d)


class NumericPair(FundamentalPair):
    """Fundamental solutions of a generic diffusion from the Riccati equation.

    With ``v = (log psi)'`` in the internal coordinate ``u``,
    ``v' = 2 (rho - mu_u v) / sigma_u^2 - v^2``.  The branch belonging to
    ``psi`` attracts solutions run forward, so it is started at the left window
    edge from the positive root of ``0.5 sigma_u^2 v^2 + mu_u v - rho = 0``; the
    ``phi`` branch is run backward from the right edge.  Start-up errors decay
    geometrically across the window.
    """

    def __init__(self, model: DiffusionModel, rtol: float = 1e-12):
        self.model = model
        lo, hi = model.window
        u_lo, u_hi = float(model.to_internal(lo)), float(model.to_internal(hi))
        u0 = float(model.to_internal(model.d0))
        self.u_range = (u_lo, u_hi)
        rho = model.rho

        def rhs(u, y):
            mu, sig = model.internal_coefficients(u)
            s2 = sig * sig
            v = y[0]
            d = model.from_internal(u)
            dmu = np.asarray(model.drift(d), dtype=float)
            dsig = np.asarray(model.volatility(d), dtype=float)
            dlogS = -2.0 * dmu / dsig**2 * model.jacobian(u)
            return [2.0 * (rho - mu * v) / s2 - v * v, v, dlogS]

        def root(u, sign):
            mu, sig = model.internal_coefficients(u)
            a = 0.5 * sig * sig
            return float((-mu + sign * math.sqrt(mu * mu + 4.0 * a * rho)) / (2.0 * a))

        for u in np.linspace(u_lo, u_hi, 101):
            _, sig = model.internal_coefficients(u)
            if not (np.isfinite(sig) and sig > 0):
                raise SolverError(f"volatility vanishes or is not finite at d={float(model.from_internal(u)):g}")
        opts = dict(method="DOP853", rtol=rtol, atol=1e-14, dense_output=True)
        fwd = solve_ivp(rhs, (u_lo, u_hi), [root(u_lo, 1.0), 0.0, 0.0], **opts)
        bwd = solve_ivp(rhs, (u_hi, u_lo), [root(u_hi, -1.0), 0.0, 0.0], **opts)
        for sol, name in ((fwd, "psi"), (bwd, "phi")):
            if not sol.success:
                raise SolverError(f"integration of {name} failed: {sol.message}")
        self._fwd, self._bwd = fwd.sol, bwd.sol
        self._shift = (fwd.sol(u0)[1], bwd.sol(u0)[1], fwd.sol(u0)[2])
        # S'(d0) = 1, so w = u_psi(d0) - u_phi(d0) in the natural coordinate
        self.wronskian = float((fwd.sol(u0)[0] - bwd.sol(u0)[0]) / model.jacobian(u0))

    def _u(self, d):
        d = self.model.check_interior(d)
        u = self.model.to_internal(d)
        lo, hi = self.u_range
        if np.any(u < lo - 1e-12) or np.any(u > hi + 1e-12):
            raise DomainError("demand outside the integration window of the numeric pair")
        return np.clip(u, lo, hi)

    def _eval(self, sol, d, k):
        u = self._u(d)
        return np.reshape(sol(np.ravel(u))[k], np.shape(u))

    def log_psi(self, d):
        return self._eval(self._fwd, d, 1) - self._shift[0]

    def log_phi(self, d):
        return self._eval(self._bwd, d, 1) - self._shift[1]

    def u_psi(self, d):
        u = self._u(d)
        return self._eval(self._fwd, d, 0) / self.model.jacobian(u)

    def u_phi(self, d):
        u = self._u(d)
        return self._eval(self._bwd, d, 0) / self.model.jacobian(u)

    def log_scale(self, d):
        return self._eval(self._fwd, d, 2) - self._shift[2]


def scale_density(model: DiffusionModel, d):
    """``S'(d) = exp(-int_{d0}^d 2 mu / sigma^2)``."""
    d = model.check_interior(d)
    if model.kind == "gbm":
        return (d / model.d0) ** (-2.0 * model.mu / model.sigma**2)
    u0 = float(model.to_internal(model.d0))

    def integrand(u):
        x = model.from_internal(u)
        mu = np.asarray(model.drift(x), dtype=float)
        return 2.0 * mu / np.asarray(model.volatility(x), dtype=float) ** 2 * model.jacobian(u)

    return np.exp(-integrate(integrand, np.full(np.shape(d), u0), model.to_internal(d), width=0.05))


def speed_density(model: DiffusionModel, d):
    """``m'(d) = 2 / (sigma(d)^2 S'(d))``."""
    d = model.check_interior(d)
    return 2.0 / (np.asarray(model.volatility(d), dtype=float) ** 2 * scale_density(model, d))


def fundamental_pair(model: DiffusionModel) -> FundamentalPair:
    """Closed form for GBM, Riccati integration otherwise."""
    if model.kind == "gbm":
        if not model.sigma > 0:
            raise SolverError("degenerate volatility: sigma must be positive")
        return GBMPair(model)
    return NumericPair(model)


def green(pair: FundamentalPair, d, h):
    """Resolvent kernel ``w^-1 psi(min(d, h)) phi(max(d, h))``."""
    d = np.asarray(d, dtype=float)
    h = np.asarray(h, dtype=float)
    lo, hi = np.minimum(d, h), np.maximum(d, h)
    return np.exp(pair.log_psi(lo) + pair.log_phi(hi)) / pair.wronskian


def _branch_integrals(pair: FundamentalPair, f, d, width=0.5):
    """Scaled branch integrals of the Green representation.

    Returns ``I_lo = int_{d_min}^d psi(xi)/psi(d) f m'`` and
    ``I_hi = int_d^{d_max} phi(xi)/phi(d) f m'``.
    """
    model = pair.model
    d = model.check_interior(d)
    shape = d.shape
    d = d.ravel()
    u = model.to_internal(d)
    lp, lf = pair.log_psi(d), pair.log_phi(d)

    def make(logfun, ref, sgn):
        def g(x):
            xi = model.from_internal(x)
            w = np.exp(logfun(xi) - ref[:, None] + pair.log_measure(x))
            return w * np.asarray(f(xi), dtype=float)
        return g

    if model.kind == "gbm":
        lo, _ = integrate_outward(make(pair.log_psi, lp, -1), u, -1, width=width)
        hi, _ = integrate_outward(make(pair.log_phi, lf, 1), u, 1, width=width)
    else:
        u_lo, u_hi = pair.u_range
        lo, _ = integrate_outward(make(pair.log_psi, lp, -1), u, -1, width=width, stop=u_lo)
        hi, _ = integrate_outward(make(pair.log_phi, lf, 1), u, 1, width=width, stop=u_hi)
        _check_tails(pair, f, d, lo, hi)
    return lo.reshape(shape), hi.reshape(shape)


def _check_tails(pair, f, d, lo, hi, tol=1e-9):
    # int_{d_min}^a psi m' = psi'(a)/(rho S'(a)) and int_b^{d_max} phi m' = -phi'(b)/(rho S'(b))
    a, b = pair.model.window
    rho = pair.model.rho
    fa = abs(float(np.asarray(f(np.array([a])))[0]))
    fb = abs(float(np.asarray(f(np.array([b])))[0]))
    tail_lo = fa * np.exp(pair.log_psi(a) - pair.log_psi(d)) * pair.u_psi(a) / (rho * pair.scale_density(a))
    tail_hi = fb * np.exp(pair.log_phi(b) - pair.log_phi(d)) * -pair.u_phi(b) / (rho * pair.scale_density(b))
    scale = np.abs(lo) + np.abs(hi) + 1e-300
    bad = (tail_lo > tol * scale) | (tail_hi > tol * scale)
    if np.any(bad):
        where = float(d[np.argmax(bad)])
        raise IntegrationError(
            f"resolvent tail beyond the truncation window is not negligible at d={where:g}; "
            "widen the window")


def representation_residuals(pair: FundamentalPair, d):
    """Relative residuals of ``psi'/S' = rho int_{d_min}^d psi m'`` and ``phi'/S' = -rho int_d^{d_max} phi m'``."""
    d = np.asarray(d, dtype=float)
    lo, hi = _branch_integrals(pair, lambda x: np.ones_like(x), d)
    s = pair.scale_density(d)
    flux_psi, flux_phi = pair.u_psi(d) / s, pair.u_phi(d) / s
    return (pair.model.rho * lo - flux_psi) / np.abs(flux_psi), (pair.model.rho * hi + flux_phi) / np.abs(flux_phi)


def resolvent(pair: FundamentalPair, f, d):
    """Expected discounted integral ``E int_0^inf e^{-rho t} f(D_t^d) dt``."""
    return resolvent_with_derivative(pair, f, d)[0]


def resolvent_with_derivative(pair: FundamentalPair, f, d):
    """Resolvent and its first derivative in ``d``.

    Differentiating the Green representation, the terms from the moving limit
    cancel and ``(Rf)' = w^-1 [phi'(d) int psi f m' + psi'(d) int phi f m']``.
    """
    d = np.asarray(d, dtype=float)
    lo, hi = _branch_integrals(pair, f, d)
    prod = np.exp(pair.log_psi(d) + pair.log_phi(d)) / pair.wronskian
    value = prod * (lo + hi)
    deriv = prod * (pair.u_phi(d) * lo + pair.u_psi(d) * hi)
    return value, deriv


@dataclass(frozen=True)
class SamplePath:
    times: np.ndarray
    values: np.ndarray
    seed: int
    scheme: str  # "ExactGBM" | "EulerMaruyama"
    path_index: int = 0


def block_generator(seed: int, block: int) -> np.random.Generator:
    """Counter-based stream for one block of :data:`BLOCK` consecutive path indices."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, block], dtype=np.uint64)))


def _reflect_inside(model, x):
    lo, hi = model.d_min, model.d_max
    if math.isfinite(lo):
        x = np.where(x <= lo, 2.0 * lo - x, x)
    if math.isfinite(hi):
        x = np.where(x >= hi, 2.0 * hi - x, x)
    if math.isfinite(lo) or math.isfinite(hi):
        # overshoot larger than the interval: fall back to the nearest interior float
        x = np.where(x <= lo, np.nextafter(lo, hi), x)
        x = np.where(x >= hi, np.nextafter(hi, lo), x)
    return x


def step_demand(model: DiffusionModel, d, dt, z):
    """Advance demand levels ``d`` by ``dt`` with standard normals ``z``."""
    if model.kind == "gbm":
        return d * np.exp((model.mu - 0.5 * model.sigma**2) * dt + model.sigma * math.sqrt(dt) * z)
    mu = np.asarray(model.drift(d), dtype=float)
    sig = np.asarray(model.volatility(d), dtype=float)
    return _reflect_inside(model, d + mu * dt + sig * math.sqrt(dt) * z)


@dataclass
class DemandStream:
    """Step-by-step demand for paths ``block*BLOCK .. block*BLOCK + n - 1``.

    The normals of path ``p`` at step ``k`` depend only on ``(seed, p, k)``,
    so results do not depend on how many paths are simulated or in what order.
    """

    model: DiffusionModel
    d_start: float
    dt: float
    seed: int
    block: int
    n: int = BLOCK
    _gen: np.random.Generator = field(init=False, repr=False)
    _buf: np.ndarray = field(init=False, repr=False)
    _pos: int = field(init=False, default=0, repr=False)

    def __post_init__(self):
        if not 0 < self.n <= BLOCK:
            raise ValueError(f"a block holds between 1 and {BLOCK} paths")
        self._gen = block_generator(self.seed, self.block)
        self._buf = np.empty((0, BLOCK))
        self.values = np.full(self.n, float(self.d_start))

    def normals(self):
        if self._pos >= self._buf.shape[0]:
            self._buf = self._gen.standard_normal((CHUNK, BLOCK))
            self._pos = 0
        z = self._buf[self._pos, : self.n]
        self._pos += 1
        return z

    def step(self):
        self.values = step_demand(self.model, self.values, self.dt, self.normals())
        return self.values


def sample_path(model: DiffusionModel, d_start: float, dt: float, horizon: float, seed: int,
                path_index: int = 0) -> SamplePath:
    """One demand path on the grid ``0, dt, ..., horizon`` (the last step may be shorter).

    The path coincides with path ``path_index`` of any batch simulated with the
    same seed.
    """
    model.check_interior(d_start)
    if not (dt > 0 and horizon > 0):
        raise ValueError("dt and horizon must be positive")
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    times = np.minimum(np.arange(n_steps + 1) * dt, horizon)
    block, col = divmod(int(path_index), BLOCK)
    stream = DemandStream(model, d_start, dt, seed, block, n=col + 1)
    values = np.empty(n_steps + 1)
    values[0] = d_start
    x = np.array([float(d_start)])
    for k in range(n_steps):
        z = stream.normals()[col:col + 1]
        x = step_demand(model, x, times[k + 1] - times[k], z)
        values[k + 1] = x[0]
    scheme = "ExactGBM" if model.kind == "gbm" else "EulerMaruyama"
    return SamplePath(times, values, int(seed), scheme, int(path_index))
