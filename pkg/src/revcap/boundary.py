"""Free boundaries of the reversible investment problem.

For capacities strictly between ``c_lower_minus_g`` and ``c_upper_plus_g`` the
two boundaries ``x*(c) < y*(c)`` (disinvest below ``x*``, invest above
``y*``) solve ``L1 = L2 = 0``.  The system is solved by nesting: for fixed
``x`` the function ``L1(x, .)`` has exactly one root ``y*(x)`` beyond
``d*_+(c)``, and ``x -> L2(x, y*(x))`` has exactly one root below ``d*_-(c)``.
Outside that capacity interval each boundary has an explicit one-sided form.

All root searches run in the internal coordinate of the diffusion.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .cost import QuadraticCost, ResolventCoeffs, Thresholds, thresholds
from .diffusion import FundamentalPair
from .panels import Coordinate, PanelCurve, build_family, invert_monotone
from .quadrature import integrate

INVEST, CONTINUE, DISINVEST = "Invest", "Continue", "Disinvest"
U_LIMIT = 700.0  # |internal coordinate| cap for bracket expansion on the half line


class BoundaryError(RuntimeError):
    """Raised when a bracket or polish step of the boundary solver fails."""


class BoundarySystem:
    """The functions ``L1``, ``L2`` and the one-sided boundary formulas.

    ``L1(x, y; c) = int_x^y psi (g_c + rho q+) m' + (q+ + q-) psi'(x)/S'(x)`` and
    ``L2(x, y; c) = int_x^y phi (g_c - rho q-) m' + (q+ + q-) phi'(y)/S'(y)``,
    which equal the symmetric forms with ``q+ psi'(y)/S'(y) + q- psi'(x)/S'(x)``
    but keep the integrands of one sign near each boundary.
    """

    def __init__(self, pair: FundamentalPair, cost: QuadraticCost, coeffs: ResolventCoeffs,
                 th: Thresholds | None = None, width: float = 0.25):
        if coeffs.pair is not pair or coeffs.cost is not cost:
            raise ValueError("pair, cost and coefficients must belong together")
        self.pair, self.cost, self.coeffs = pair, cost, coeffs
        self.model = pair.model
        self.rho = pair.model.rho
        self.th = th if th is not None else thresholds(cost, pair.model)
        self.width = width
        if self.model.kind == "gbm":
            self.u_bounds = (-U_LIMIT, U_LIMIT)
        else:
            lo, hi = self.model.window
            self.u_bounds = (float(self.model.to_internal(lo)), float(self.model.to_internal(hi)))

    # -- system --------------------------------------------------------------
    def _weighted(self, logf, u, c, shift):
        d = self.model.from_internal(u)
        w = np.exp(logf(d) + self.pair.log_measure(u))
        return w * (c - self.cost.beta0(d) + shift)

    def _integral(self, logf, ux, uy, c, shift):
        return float(integrate(lambda u: self._weighted(logf, u, c, shift), ux, uy, self.width))

    def _flux(self, logf, uf, d):
        # f'(d)/S'(d)
        return float(np.exp(logf(d) - self.pair.log_scale(d)) * uf(d))

    def L1_u(self, ux, uy, c):
        q = self.cost.q_plus + self.cost.q_minus
        x = float(self.model.from_internal(ux))
        return (self._integral(self.pair.log_psi, ux, uy, c, self.rho * self.cost.q_plus)
                + q * self._flux(self.pair.log_psi, self.pair.u_psi, x))

    def L2_u(self, ux, uy, c):
        q = self.cost.q_plus + self.cost.q_minus
        y = float(self.model.from_internal(uy))
        return (self._integral(self.pair.log_phi, ux, uy, c, -self.rho * self.cost.q_minus)
                + q * self._flux(self.pair.log_phi, self.pair.u_phi, y))

    def jacobian_u(self, ux, uy, c):
        """Partial derivatives of ``(L1, L2)`` in the internal coordinates of ``(x, y)``."""
        qp, qm, rho = self.cost.q_plus, self.cost.q_minus, self.rho
        x, y = (float(self.model.from_internal(v)) for v in (ux, uy))
        mx = float(np.exp(self.pair.log_measure(ux)))
        my = float(np.exp(self.pair.log_measure(uy)))
        gx = c - float(self.cost.beta0(x))
        gy = c - float(self.cost.beta0(y))
        px, py = float(self.pair.psi(x)), float(self.pair.psi(y))
        fx, fy = float(self.pair.phi(x)), float(self.pair.phi(y))
        return np.array([
            [-px * mx * (gx - rho * qm), py * my * (gy + rho * qp)],
            [-fx * mx * (gx - rho * qm), fy * my * (gy + rho * qp)],
        ])

    def inner_root_u(self, ux, c, rtol=None):
        """Internal coordinate of ``y*(x; c)`` or ``None`` when ``L1(x, .)`` keeps its sign."""
        if not c < self.th.c_upper_plus_g or math.isinf(self.cost.q_minus):
            return None
        ds = self.th.dstar_plus(c)
        start = ux
        if self.model.d_min < ds < self.model.d_max:
            start = max(ux, float(self.model.to_internal(ds)))
        f = lambda v: self.L1_u(ux, v, c)
        a, fa = start, f(start)
        if fa <= 0:
            # L1 is positive on [x, d*_+]; a nonpositive start means we are at the root already
            return a
        step = 0.05
        hi_cap = self.u_bounds[1]
        while True:
            b = min(a + step, hi_cap)
            fb = f(b)
            if fb < 0:
                break
            if b >= hi_cap:
                return None
            a, fa = b, fb
            step *= 2.0
        r = brentq(f, a, b, xtol=1e-15 * max(1.0, abs(a)), rtol=8.9e-16, maxiter=200)
        return _polish_1d(f, lambda v: self.jacobian_u(ux, v, c)[0, 1], r, a, b)

    # -- public API in natural coordinates -----------------------------------
    def eval_L1(self, x, y, c):
        return self.L1_u(float(self.model.to_internal(x)), float(self.model.to_internal(y)), c)

    def eval_L2(self, x, y, c):
        return self.L2_u(float(self.model.to_internal(x)), float(self.model.to_internal(y)), c)

    def inner_root_y(self, x, c):
        ux = float(self.model.to_internal(x))
        r = self.inner_root_u(ux, c)
        return None if r is None else float(self.model.from_internal(r))

    def in_middle(self, c) -> bool:
        return (not math.isinf(self.cost.q_minus)) and self.th.c_lower_minus_g < c < self.th.c_upper_plus_g

    def solve_pair_u(self, c, guess=None):
        """Internal coordinates ``(u_x*, u_y*)`` or ``None`` outside the middle region."""
        if not self.in_middle(c):
            return None
        if guess is not None:
            sol = self._newton(c, np.asarray(guess, dtype=float))
            if sol is not None:
                return sol
        ux, uy = self._nested(c)
        sol = self._newton(c, np.array([ux, uy]))
        return sol if sol is not None else (ux, uy)

    def solve_pair(self, c):
        """``(x*(c), y*(c))`` or ``None`` when no solution exists."""
        r = self.solve_pair_u(c)
        if r is None:
            return None
        return float(self.model.from_internal(r[0])), float(self.model.from_internal(r[1]))

    def outer_function_u(self, ux, c):
        """``L2(x, y*(x; c); c)``; ``+inf`` when the inner root does not exist."""
        uy = self.inner_root_u(ux, c)
        if uy is None:
            return math.inf
        return self.L2_u(ux, uy, c)

    def _nested(self, c):
        dm = self.th.dstar_minus(c)
        if not self.model.d_min < dm < self.model.d_max:
            raise BoundaryError(f"d*_-(c) is not interior at c={c:g}")
        b = float(self.model.to_internal(dm))
        F = lambda v: self.outer_function_u(v, c)
        fb = F(b)
        step = 0.05
        # F(d*_-) < 0 in theory; move left slightly if rounding says otherwise
        while fb >= 0 and step < 1.0:
            b -= step * 1e-3
            fb = F(b)
            step *= 2.0
        if fb >= 0:
            raise BoundaryError(f"outer function is not negative at d*_-(c) for c={c:g}")
        step = 0.05
        a = b - step
        lo_cap = self.u_bounds[0]
        while True:
            fa = F(a)
            if fa > 0:
                break
            if a <= lo_cap:
                raise BoundaryError(f"no sign change of the outer function for c={c:g}")
            b, fb = a, fa
            step *= 2.0
            a = max(a - step, lo_cap)
        if math.isinf(fa):
            # shrink the bracket until the inner root exists at the left end
            while True:
                m = 0.5 * (a + b)
                fm = F(m)
                if math.isinf(fm) or fm > 0:
                    a, fa = m, fm
                    if not math.isinf(fm):
                        break
                else:
                    b, fb = m, fm
                if b - a < 1e-13:
                    raise BoundaryError(f"outer bracket collapsed at c={c:g}")
        ux = brentq(F, a, b, xtol=1e-15 * max(1.0, abs(a)), rtol=8.9e-16, maxiter=200)
        return ux, self.inner_root_u(ux, c)

    def _newton(self, c, z, iters=30):
        """Damped Newton on ``(L1, L2)`` with residuals scaled by their largest flux terms."""
        best, best_res = None, math.inf
        for _ in range(iters):
            s = self._residual_scale(z)
            r = np.array([self.L1_u(z[0], z[1], c), self.L2_u(z[0], z[1], c)])
            res = float(np.max(np.abs(r) / s))
            if not np.isfinite(res):
                break
            if res < best_res:
                best, best_res = (float(z[0]), float(z[1])), res
            elif res > 10.0 * best_res:
                break
            if res < 1e-15:
                break
            J = self.jacobian_u(z[0], z[1], c)
            try:
                step = np.linalg.solve(J, r)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(step)):
                break
            big = float(np.max(np.abs(step)))
            if big > 1.0:
                step = step / big
            z = z - step
            if big < 1e-15 * max(1.0, float(np.max(np.abs(z)))):
                break
        if best is None or best_res > 1e-11 or not best[0] < best[1]:
            return None
        # both roots must sit on the correct side of the cost thresholds
        x, y = (float(self.model.from_internal(v)) for v in best)
        if not (x < self.th.dstar_minus(c) and y > self.th.dstar_plus(c)):
            return None
        return best

    def _residual_scale(self, u):
        x, y = (float(self.model.from_internal(v)) for v in u)
        q = self.cost.q_plus + self.cost.q_minus
        return np.array([q * self._flux(self.pair.log_psi, self.pair.u_psi, y),
                         q * abs(self._flux(self.pair.log_phi, self.pair.u_phi, x))])

    # -- one-sided formulas ----------------------------------------------------
    def chat_plus_onesided(self, d):
        """``rho (beta - beta'/(psi'/psi) - q+)``."""
        b, db, _ = self.coeffs.beta_all(d)
        return self.rho * (b - db / self.pair.u_psi(d) - self.cost.q_plus)

    def chat_minus_onesided(self, d):
        """``rho (beta - beta'/(phi'/phi) + q-)``; ``inf`` when irreversible."""
        if math.isinf(self.cost.q_minus):
            return np.full(np.shape(d), math.inf)
        b, db, _ = self.coeffs.beta_all(d)
        return self.rho * (b - db / self.pair.u_phi(d) + self.cost.q_minus)

    def _log_derivative_slope(self, d, u):
        # (f'/f)' = f''/f - (f'/f)^2 with f''/f from the ODE
        d = np.asarray(d, dtype=float)
        s2 = np.asarray(self.model.volatility(d), dtype=float) ** 2
        return 2.0 * (self.rho - self.model.drift(d) * u) / s2 - u * u

    def chat_plus_onesided_prime(self, d):
        b, db, ddb = self.coeffs.beta_all(d)
        u = self.pair.u_psi(d)
        return self.rho * (db - ddb / u + db * self._log_derivative_slope(d, u) / (u * u))

    def chat_minus_onesided_prime(self, d):
        b, db, ddb = self.coeffs.beta_all(d)
        u = self.pair.u_phi(d)
        return self.rho * (db - ddb / u + db * self._log_derivative_slope(d, u) / (u * u))

    def onesided_all(self, d, side):
        """Value and slope of a one-sided boundary together with ``beta'`` and ``f'``."""
        d = np.asarray(d, dtype=float)
        b, db, ddb = self.coeffs.beta_all(d)
        if side > 0:
            u, q, lf = self.pair.u_psi(d), -self.cost.q_plus, self.pair.log_psi(d)
        else:
            u, q, lf = self.pair.u_phi(d), self.cost.q_minus, self.pair.log_phi(d)
        val = self.rho * (b - db / u + q)
        slope = self.rho * (db - ddb / u + db * self._log_derivative_slope(d, u) / (u * u))
        return val, slope, db, np.exp(lf) * u

    # -- junctions -------------------------------------------------------------
    def junction_plus(self):
        """``lim_{c -> c_lower_minus_g} y*(c)``, or ``d_max`` when that capacity is not in the middle region."""
        L = self.th.c_lower_minus_g
        if math.isinf(self.cost.q_minus) or not L < self.th.c_upper_plus_g:
            return self.model.d_max
        start = self.th.dstar_plus(L)
        return self._solve_onesided(lambda u: self.chat_plus_onesided(self.model.from_internal(u)) - L,
                                    float(self.model.to_internal(start)), +1)

    def junction_minus(self):
        """``lim_{c -> c_upper_plus_g} x*(c)``, or ``d_min`` when not applicable."""
        U = self.th.c_upper_plus_g
        if math.isinf(self.cost.q_minus) or not self.th.c_lower_minus_g < U or math.isinf(U):
            return self.model.d_min
        start = self.th.dstar_minus(U)
        return self._solve_onesided(lambda u: self.chat_minus_onesided(self.model.from_internal(u)) - U,
                                    float(self.model.to_internal(start)), -1)

    def _solve_onesided(self, f, u0, direction):
        # the one-sided boundary crosses the level at or beyond u0 in the given direction
        a = u0
        fa = float(f(np.array([a]))[0])
        if fa * direction >= 0:
            return float(self.model.from_internal(a))
        step = 0.05
        while True:
            b = a + direction * step
            fb = float(f(np.array([b]))[0])
            if fb * direction >= 0:
                break
            a, fa = b, fb
            step *= 2.0
            if abs(b) > U_LIMIT:
                raise BoundaryError("one-sided boundary never reaches the junction level")
        lo, hi = sorted((a, b))
        r = brentq(lambda v: float(f(np.array([v]))[0]), lo, hi, xtol=1e-15 * max(1.0, abs(lo)), rtol=8.9e-16)
        return float(self.model.from_internal(r))


def _polish_1d(f, df, r, a, b):
    best, fbest = r, abs(f(r))
    x = r
    for _ in range(3):
        s = df(x)
        if s == 0 or not np.isfinite(s):
            break
        x = x - f(x) / s
        if not a <= x <= b:
            break
        fx = abs(f(x))
        if fx < fbest:
            best, fbest = x, fx
        else:
            break
    return best


@dataclass
class BoundaryTable:
    """Tabulated free boundaries.

    Attributes
    ----------
    c_grid, x_star, y_star : ndarray
        Directly solved pairs at the requested capacities (``nan`` outside
        the middle region).
    region_splits : tuple
        ``(c_lower_minus_g, c_upper_plus_g)``.
    junctions : tuple
        Demand levels where the invest and disinvest boundaries switch between
        their one-sided and two-sided forms.
    """

    system: BoundarySystem
    c_grid: np.ndarray
    x_star: np.ndarray
    y_star: np.ndarray
    region_splits: tuple
    junctions: tuple
    d_range: tuple
    plus_curve: PanelCurve | None
    minus_curve: PanelCurve | None
    mid_x: PanelCurve | None = None
    mid_y: PanelCurve | None = None
    mid_range: tuple | None = None
    failures: list = field(default_factory=list)

    @property
    def model(self):
        return self.system.model

    def chat_plus(self, d):
        """Invest boundary ``c_hat_+(d)``."""
        u = self.model.to_internal(self.model.check_interior(d))
        return self.plus_curve(u)

    def chat_minus(self, d):
        """Disinvest boundary ``c_hat_-(d)`` (``inf`` in the irreversible case)."""
        u = self.model.to_internal(self.model.check_interior(d))
        if self.minus_curve is None:
            return np.full(np.shape(u), math.inf) if np.ndim(u) else math.inf
        return self.minus_curve(u)

    def classify(self, c, d):
        """Region label(s): ``Invest`` if ``c <= c_hat_+(d)``, ``Disinvest`` if ``c >= c_hat_-(d)``."""
        c = np.asarray(c, dtype=float)
        d = np.asarray(d, dtype=float)
        c, d = np.broadcast_arrays(c, d)
        lab = np.full(c.shape, CONTINUE, dtype=object)
        lab[c >= self.chat_minus(d)] = DISINVEST
        lab[c <= self.chat_plus(d)] = INVEST
        return lab if lab.ndim else str(lab)

    def dhat_plus(self, c):
        """Demand level at which capacity ``c`` is topped up (pseudo-inverse of ``c_hat_+``)."""
        return self._dhat(c, self.plus_curve, self.mid_y, +1)

    def dhat_minus(self, c):
        """Demand level at which capacity ``c`` is cut back (pseudo-inverse of ``c_hat_-``)."""
        if self.minus_curve is None:
            return np.full(np.shape(c), self.model.d_min) if np.ndim(c) else self.model.d_min
        return self._dhat(c, self.minus_curve, self.mid_x, -1)

    def _dhat(self, c, curve, mid, side):
        L, U = self.region_splits
        model = self.model

        def one(cv):
            if self.mid_range is not None and self.mid_range[0] <= cv <= self.mid_range[1]:
                return float(model.from_internal(mid(cv)))
            if side > 0 and cv >= U:
                return model.d_max
            if side < 0 and cv <= L:
                return model.d_min
            lo, hi = curve.x_lo, curve.x_hi
            f_lo, f_hi = curve(lo), curve(hi)
            if cv <= f_lo:
                if cv < f_lo and side > 0:
                    raise ValueError(f"capacity {cv:g} below the tabulated invest boundary")
                return float(model.from_internal(lo))
            if cv >= f_hi:
                if cv > f_hi and side < 0:
                    raise ValueError(f"capacity {cv:g} above the tabulated disinvest boundary")
                return float(model.from_internal(hi))
            return float(model.from_internal(invert_monotone(curve, cv, lo, hi)))

        out = np.vectorize(one, otypes=[float])(np.asarray(c, dtype=float))
        return out if out.ndim else float(out)

    def lookup(self, n=20001, margin=0.0):
        """Dense ``(u, c_hat_+, c_hat_-)`` arrays over the tabulated demand range for fast interpolation."""
        u_lo, u_hi = self.plus_curve.x_lo, self.plus_curve.x_hi
        if self.minus_curve is not None:
            u_lo, u_hi = max(u_lo, self.minus_curve.x_lo), min(u_hi, self.minus_curve.x_hi)
        u = np.linspace(u_lo, u_hi, n)
        cm = self.minus_curve(u) if self.minus_curve is not None else np.full(n, math.inf)
        return u, self.plus_curve(u), cm

    def write_csv(self, c_path, d_path, n_d=200):
        """Two CSV files: ``c, x_star, y_star`` and ``d, chat_plus, chat_minus``."""
        with open(c_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["c", "x_star", "y_star"])
            for row in zip(self.c_grid, self.x_star, self.y_star):
                w.writerow([fmt(v) for v in row])
        d = np.geomspace(*self.d_range, n_d) if self.model.log_coordinate else np.linspace(*self.d_range, n_d)
        with open(d_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["d", "chat_plus", "chat_minus"])
            for row in zip(d, self.chat_plus(d), self.chat_minus(d)):
                w.writerow([fmt(v) for v in row])


def fmt(v) -> str:
    """Full-precision scientific notation (17 significant digits)."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.16e}"


def _d_pieces(model, u_lo, u_hi, split=None):
    pieces = []
    edges = [u_lo] + ([split] if split is not None and u_lo < split < u_hi else []) + [u_hi]
    for a, b in zip(edges[:-1], edges[1:]):
        pieces.append((a, b, Coordinate()))
    return pieces


def tabulate(sys: BoundarySystem, c_grid, d_range=None, c_cover=None) -> BoundaryTable:
    """Tabulate both free boundaries.

    Parameters
    ----------
    sys : BoundarySystem
    c_grid : array_like
        Capacities at which the pair ``(x*, y*)`` is solved directly and
        reported; they also widen the covered capacity range.
    d_range : tuple, optional
        Demand interval on which ``c_hat_+`` and ``c_hat_-`` are tabulated.
        Defaults to ``d0 * exp(+-4)`` on the half line.
    c_cover : tuple, optional
        Capacity interval the middle-region curves must reach in addition to
        what ``d_range`` requires.
    """
    model = sys.model
    c_grid = np.asarray(c_grid, dtype=float)
    if d_range is None:
        lo, hi = model.window
        if model.log_coordinate:
            d_range = (model.d0 * math.exp(-4.0), model.d0 * math.exp(4.0))
        else:
            half = 0.1 * (hi - lo)
            d_range = (max(lo, model.d0 - half), min(hi, model.d0 + half))
    d_lo, d_hi = (float(v) for v in d_range)
    u_lo, u_hi = float(model.to_internal(d_lo)), float(model.to_internal(d_hi))
    L, U = sys.th.c_lower_minus_g, sys.th.c_upper_plus_g
    dJ, dJm = sys.junction_plus(), sys.junction_minus()
    uJ = float(model.to_internal(dJ)) if model.d_min < dJ < model.d_max else None
    uJm = float(model.to_internal(dJm)) if model.d_min < dJm < model.d_max else None
    reversible = not math.isinf(sys.cost.q_minus)
    if reversible and not L < U:
        raise BoundaryError("the two-sided capacity interval is empty; only irreversible problems "
                            "are supported in that configuration")
    c_all = list(c_grid) + (list(c_cover) if c_cover else [])
    u_lo, u_hi = _cover(sys, u_lo, u_hi, uJ, uJm, max(c_all) if c_all else None, reversible)
    d_lo, d_hi = float(model.from_internal(u_lo)), float(model.from_internal(u_hi))

    failures = []
    mid_x = mid_y = mid_range = None
    if reversible:
        need_lo = [c for c in c_grid if L < c < U]
        mid_x, mid_y, mid_range = _middle_curves(sys, d_lo, d_hi, need_lo, c_cover)

    # invest boundary on the demand axis
    plus_pieces = []
    one_hi = u_hi if uJ is None else min(u_hi, uJ)
    if one_hi > u_lo:
        plus_pieces.append((u_lo, one_hi, "one"))
    if uJ is not None and uJ < u_hi:
        plus_pieces.append((max(uJ, u_lo), u_hi, "mid"))
    plus_curve = _stitch(sys, plus_pieces, +1, mid_y, mid_range, None if uJ is None else (uJ, L))

    minus_curve = None
    if reversible:
        minus_pieces = []
        top = u_hi if uJm is None else min(u_hi, uJm)
        if top > u_lo:
            minus_pieces.append((u_lo, top, "mid"))
        if uJm is not None and uJm < u_hi:
            minus_pieces.append((max(uJm, u_lo), u_hi, "one"))
        minus_curve = _stitch(sys, minus_pieces, -1, mid_x, mid_range, None if uJm is None else (uJm, U))

    xs = np.full(c_grid.shape, np.nan)
    ys = np.full(c_grid.shape, np.nan)
    for i, c in enumerate(c_grid):
        if not sys.in_middle(c):
            continue
        try:
            guess = None if mid_range is None or not mid_range[0] <= c <= mid_range[1] else (mid_x(c), mid_y(c))
            r = sys.solve_pair_u(c, guess)
            xs[i], ys[i] = (float(model.from_internal(v)) for v in r)
        except (BoundaryError, ValueError) as exc:
            failures.append((float(c), str(exc)))
    return BoundaryTable(sys, c_grid, xs, ys, (L, U), (dJ, dJm), (d_lo, d_hi), plus_curve, minus_curve,
                         mid_x, mid_y, mid_range, failures)


def _cover(sys, u_lo, u_hi, uJ, uJm, c_hi, reversible, margin=0.1, reach=20.0):
    """Widen the demand range so the junctions and the largest requested capacity are inside."""
    u_lo, u_hi = u_lo - margin, u_hi + margin
    if uJ is not None:
        u_hi = max(u_hi, uJ + 0.25)
    if uJm is not None:
        u_lo = min(u_lo, uJm - 0.25)
    cap_lo, cap_hi = sys.u_bounds
    u_lo, u_hi = max(u_lo, cap_lo), min(u_hi, cap_hi)
    if c_hi is None:
        return u_lo, u_hi
    U = sys.th.c_upper_plus_g
    start = u_hi
    at = lambda u, side: float(sys.onesided_all(sys.model.from_internal(np.array([u])), side)[0][0])
    if uJ is None:
        while at(u_hi, +1) < c_hi and u_hi < min(start + reach, cap_hi):
            u_hi += 0.5
    elif reversible and uJm is not None and c_hi >= U:
        while at(u_hi, -1) < c_hi and u_hi < min(start + reach, cap_hi):
            u_hi += 0.5
    return u_lo, min(u_hi, cap_hi)


class _PairCache:
    """Memoised pair solves; each new solve starts Newton from the nearest cached ones."""

    def __init__(self, sys):
        self.sys = sys
        self.store = {}

    def guess(self, c):
        if not self.store:
            return None
        keys = np.array(sorted(self.store))
        order = np.argsort(np.abs(keys - c))[:2]
        if len(order) == 1:
            return self.store[keys[order[0]]]
        c1, c2 = keys[order[0]], keys[order[1]]
        z1, z2 = np.array(self.store[c1]), np.array(self.store[c2])
        return z1 + (z1 - z2) * (c - c1) / (c1 - c2)

    def __call__(self, cs):
        cs = np.atleast_1d(np.asarray(cs, dtype=float))
        out = np.empty((len(cs), 2))
        for i, c in enumerate(cs):
            key = float(c)
            if key not in self.store:
                r = self.sys.solve_pair_u(key, self.guess(key))
                if r is None:
                    raise BoundaryError(f"no boundary pair at c={key:g}")
                self.store[key] = r
            out[i] = self.store[key]
        return out


def _middle_curves(sys, d_lo, d_hi, c_needed, c_cover):
    """Chebyshev panels of ``u_x*(c)`` and ``u_y*(c)`` over the needed part of ``(L, U)``."""
    model = sys.model
    L, U = sys.th.c_lower_minus_g, sys.th.c_upper_plus_g
    u_lo, u_hi = float(model.to_internal(d_lo)), float(model.to_internal(d_hi))
    cache = _PairCache(sys)
    scale = max(1.0, abs(L) if math.isfinite(L) else 0.0, abs(U) if math.isfinite(U) else 0.0,
                sys.rho * (sys.cost.q_plus + sys.cost.q_minus))
    extra = list(c_needed) + ([v for v in c_cover if L < v < U] if c_cover else [])

    def pair_at(c):
        return cache([c])[0]

    # graded ends reach within 1e-8 of a finite threshold; infinite ends are
    # pushed out until the curves leave the demand range
    if math.isfinite(L):
        c_a = L + 1e-8 * scale
        if pair_at(c_a)[0] >= u_lo - 0.5:
            raise BoundaryError("x* does not fall below the demand range near c_lower_minus_g")
    else:
        c_a = (min(extra) if extra else U - scale) - scale
        for _ in range(200):
            if pair_at(c_a)[1] < u_lo - 0.5:
                break
            c_a -= (abs(c_a) + scale)
    if math.isfinite(U):
        c_b = U - 1e-8 * scale
        if pair_at(c_b)[1] <= u_hi + 0.5:
            raise BoundaryError("y* does not exceed the demand range near c_upper_plus_g")
    else:
        c_b = (max(extra) if extra else L + scale) + scale
        for _ in range(200):
            if pair_at(c_b)[0] > u_hi + 0.5:
                break
            c_b += (abs(c_b) + scale)
    if extra:
        c_a = min(c_a, min(extra))
        c_b = max(c_b, max(extra))
    pieces = _c_pieces(L, U, c_a, c_b)
    def floor(a, b):
        # capacities near a finite threshold carry rounding of order eps*|c|/(distance)
        dist = min(a - L if math.isfinite(L) else math.inf, U - b if math.isfinite(U) else math.inf)
        return 100.0 * np.finfo(float).eps * max(abs(a), abs(b), 1.0) / dist if math.isfinite(dist) else 0.0

    mid_x, mid_y = build_family(cache, pieces, deg=16, tol=1e-13, max_depth=7, floor=floor)
    return mid_x, mid_y, (c_a, c_b)


def _c_pieces(L, U, c_a, c_b):
    if math.isfinite(L) and math.isfinite(U):
        mid = 0.5 * (L + U)
        pieces = []
        if c_a < mid:
            pieces.append((c_a, min(mid, c_b), Coordinate("log_above", L)))
        if c_b > mid:
            pieces.append((max(mid, c_a), c_b, Coordinate("log_below", U)))
        return pieces
    if math.isfinite(L):
        return _split_log(c_a, c_b, Coordinate("log_above", L))
    if math.isfinite(U):
        return _split_log(c_a, c_b, Coordinate("log_below", U))
    return [(c_a, c_b, Coordinate())]


def _split_log(a, b, coord):
    # start with panels one unit wide in the graded variable
    ta, tb = sorted((float(coord.to_t(a)), float(coord.to_t(b))))
    n = max(1, int(math.ceil(tb - ta)))
    ts = np.linspace(ta, tb, n + 1)
    xs = sorted(float(coord.to_x(t)) for t in ts)
    xs[0], xs[-1] = min(a, b), max(a, b)
    return [(xs[i], xs[i + 1], coord) for i in range(n)]


def _stitch(sys, pieces, side, mid_curve, mid_range, junction=None):
    """One demand-axis curve from one-sided pieces and inverted middle-region curves."""
    model = sys.model
    fam = []
    for a, b, kind in pieces:
        if b <= a:
            continue
        if kind == "one":
            f = (lambda u: sys.onesided_all(model.from_internal(u), side)[0])
        else:
            f = _inverse_of(mid_curve, mid_range, side, junction)
        n = max(1, int(math.ceil((b - a) / 1.0)))
        edges = np.linspace(a, b, n + 1)
        fam.append(PanelCurve.build(f, [(edges[i], edges[i + 1], Coordinate()) for i in range(n)],
                                    deg=16, tol=1e-14, max_depth=6))
    if not fam:
        raise BoundaryError("empty demand range")
    panels = [p for curve in fam for p in curve.panels]
    return PanelCurve(panels)


def _inverse_of(mid_curve, mid_range, side, junction):
    """Invert a middle-region curve; between its end and the junction interpolate linearly.

    ``junction = (u_J, c_J)`` is the limit point of the curve at the open end
    of the capacity interval, reached only asymptotically by the solver.
    """
    c_a, c_b = mid_range
    ua, ub = float(mid_curve(c_a)), float(mid_curve(c_b))

    def f(us):
        out = np.empty(np.shape(us))
        for i, u in enumerate(np.ravel(us)):
            if ua <= u <= ub:
                out.flat[i] = brentq(lambda c: mid_curve(c) - u, c_a, c_b,
                                     xtol=1e-15 * max(1.0, abs(c_a), abs(c_b)), rtol=8.9e-16)
                continue
            uj, cj = junction if junction is not None else (None, None)
            if uj is not None and side > 0 and uj - 1e-12 <= u < ua:
                out.flat[i] = cj + (c_a - cj) * (u - uj) / (ua - uj)
            elif uj is not None and side < 0 and ub < u <= uj + 1e-12:
                out.flat[i] = c_b + (cj - c_b) * (u - ub) / (uj - ub)
            else:
                raise BoundaryError(
                    f"internal demand coordinate {u:g} lies outside the solved range [{ua:g}, {ub:g}]; "
                    "enlarge the capacity coverage")
        return out

    return f
