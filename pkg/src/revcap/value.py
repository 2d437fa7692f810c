"""Piecewise value function and its optimality checks.

On the closed continuation region ``v = A(c) psi(d) + B(c) phi(d) + V_hat(c, d)``;
in the invest region ``v = z_+(d) - q+ c`` and in the disinvest region
``v = z_-(d) + q- c``.  ``A`` and ``B`` are recovered by integrating their
derivatives in ``c`` from the capacities where they vanish.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .boundary import CONTINUE, DISINVEST, INVEST, BoundaryError, BoundaryTable, fmt
from .cost import ResolventCoeffs, running_cost
from .diffusion import FundamentalPair
from .panels import Coordinate, PanelCurve, invert_monotone
from .quadrature import IntegrationError, integrate_outward, panel_nodes

FAR_EDGES = (0.0, 1e-2, 1e-1, 1.0)  # panels of the substituted variable for coefficient tails


class DegenerateSystemError(ArithmeticError):
    """The two smooth-fit conditions do not determine ``A'`` and ``B'``."""


class Coefficient:
    """A function of capacity assembled from consecutive pieces.

    Each piece is ``(lo, hi, value, slope)`` with vectorised callables.
    Evaluation outside the union of the pieces raises ``ValueError``.
    """

    def __init__(self, name: str, pieces):
        self.name = name
        self.pieces = sorted(pieces, key=lambda p: p[0])

    @property
    def c_range(self):
        return self.pieces[0][0], self.pieces[-1][1]

    def _dispatch(self, c, k):
        c = np.asarray(c, dtype=float)
        flat = np.atleast_1d(c).ravel()
        out = np.full(flat.shape, np.nan)
        done = np.zeros(flat.shape, dtype=bool)
        for piece in self.pieces:
            sel = ~done & (flat >= piece[0]) & (flat <= piece[1])
            if np.any(sel):
                out[sel] = piece[k](flat[sel])
                done |= sel
        if not np.all(done):
            lo, hi = self.c_range
            raise ValueError(f"{self.name}({flat[~done][0]:g}) requested outside the tabulated "
                             f"capacities [{lo:g}, {hi:g}]")
        return out.reshape(c.shape) if c.ndim else float(out[0])

    def __call__(self, c):
        return self._dispatch(c, 2)

    def prime(self, c):
        return self._dispatch(c, 3)


def _zero(lo, hi):
    z = lambda c: np.zeros(np.shape(c))
    return (lo, hi, z, z)


def _linear(lo, hi, c0, v0, s):
    return (lo, hi, lambda c: v0 + s * (np.asarray(c) - c0), lambda c: np.full(np.shape(c), s))


# -- coefficient derivatives ---------------------------------------------------

def _cramer(table: BoundaryTable, c, ux, uy):
    """``(A', B')`` from the first-order fit conditions at ``x = e(ux)``, ``y = e(uy)``."""
    sys = table.system
    model, pair, rho = sys.model, sys.pair, sys.rho
    c = np.asarray(c, dtype=float)
    x, y = model.from_internal(ux), model.from_internal(uy)
    r_y = -sys.cost.q_plus - (c / rho - sys.coeffs.beta(y))
    r_x = sys.cost.q_minus - (c / rho - sys.coeffs.beta(x))
    lpx, lpy = pair.log_psi(x), pair.log_psi(y)
    lfx, lfy = pair.log_phi(x), pair.log_phi(y)
    # determinant divided by psi(y) phi(x); both ratios are below one
    den = 1.0 - np.exp((lpx - lpy) + (lfy - lfx))
    if np.any(np.abs(den) < 1e-14):
        raise DegenerateSystemError("psi(y)phi(x) - phi(y)psi(x) vanishes; the boundary pair is degenerate")
    da = (r_y - r_x * np.exp(lfy - lfx)) / (np.exp(lpy) * den)
    db = (r_x - r_y * np.exp(lpx - lpy)) / (np.exp(lfx) * den)
    return da, db


def _mid_derivatives(table: BoundaryTable, c):
    return _cramer(table, c, table.mid_x(c), table.mid_y(c))


def coeff_derivatives(table: BoundaryTable, c):
    """``(A'(c), B'(c))`` for a scalar capacity.

    In the middle region the first-order fit conditions at both boundaries are
    solved; on one-sided stretches the second-order condition at the single
    boundary gives ``A' = beta'/psi'`` (or ``B' = beta'/phi'``).
    """
    c = float(c)
    sys = table.system
    L, U = table.region_splits
    model = sys.model
    if table.minus_curve is not None and L < c < U:
        c_a, c_b = table.mid_range
        if c_a <= c <= c_b:
            da, db = _mid_derivatives(table, np.array([c]))
            return float(da[0]), float(db[0])
        if c < c_a and math.isfinite(L):
            return coeff_derivatives(table, c_a)
        if c > c_b and math.isfinite(U):
            return coeff_derivatives(table, c_b)
        r = sys.solve_pair_u(c)
        if r is None:
            raise BoundaryError(f"no boundary pair at c={c:g}")
        da, db = _cramer(table, np.array([c]), np.array([r[0]]), np.array([r[1]]))
        return float(da[0]), float(db[0])
    if c <= L:
        d = table.dhat_plus(c)
        if not model.d_min < d < model.d_max:
            return 0.0, 0.0
        _, _, dbeta, fp = sys.onesided_all(np.array([d]), +1)
        return float(dbeta[0] / fp[0]), 0.0
    d = table.dhat_minus(c)
    if not model.d_min < d < model.d_max:
        return 0.0, 0.0
    _, _, dbeta, fp = sys.onesided_all(np.array([d]), -1)
    return 0.0, float(dbeta[0] / fp[0])


# -- integration ---------------------------------------------------------------

def _onesided_piece(table: BoundaryTable, side, u_a, u_b, anchor_value):
    """Coefficient on the capacities swept by a one-sided boundary over ``[u_a, u_b]``.

    The coefficient is integrated in the demand coordinate, where
    ``d/du A(c_hat(d)) = beta'(d) c_hat'(d) / f'(d) * dd/du``.
    """
    sys = table.system
    model = sys.model

    def density(u):
        u = np.asarray(u, dtype=float)
        flat = u.ravel()
        _, slope, dbeta, fp = sys.onesided_all(model.from_internal(flat), side)
        return (dbeta * slope / fp * model.jacobian(flat)).reshape(u.shape)

    n = max(1, int(math.ceil(u_b - u_a)))
    edges = np.linspace(u_a, u_b, n + 1)
    dens = PanelCurve.build(density, [(edges[i], edges[i + 1], Coordinate()) for i in range(n)],
                            deg=16, tol=1e-14, max_depth=6)
    tilde = dens.antiderivative(density, "right" if side > 0 else "left", anchor_value)
    curve = table.plus_curve if side > 0 else table.minus_curve
    c_lo, c_hi = float(curve(u_a)), float(curve(u_b))

    def inverse(c):
        c = np.clip(np.asarray(c, dtype=float), c_lo, c_hi)
        return np.vectorize(lambda cv: invert_monotone(curve, cv, u_a, u_b), otypes=[float])(c)

    def value(c):
        return tilde(inverse(c))

    def slope(c):
        _, _, dbeta, fp = sys.onesided_all(model.from_internal(inverse(c)), side)
        return dbeta / fp

    return (c_lo, c_hi, value, slope), density


def _onesided_span(table: BoundaryTable, side):
    """Internal demand interval on which a boundary takes its one-sided form."""
    model = table.model
    reversible = table.minus_curve is not None
    curve = table.plus_curve if side > 0 else table.minus_curve
    if curve is None:
        return None
    u_lo, u_hi = curve.x_lo, curve.x_hi
    dj = table.junctions[0 if side > 0 else 1]
    interior = model.d_min < dj < model.d_max
    if side > 0:
        if not reversible:
            return u_lo, u_hi
        if not interior:
            return None
        uj = float(model.to_internal(dj))
        return (u_lo, min(uj, u_hi)) if u_lo < uj else None
    if not interior:
        return None
    uj = float(model.to_internal(dj))
    return (max(uj, u_lo), u_hi) if uj < u_hi else None


def _far_integral(table: BoundaryTable, c_end, c_ref, direction, which):
    """``int_{c_end}^{inf} A'`` (direction +1) or ``int_{-inf}^{c_end} B'`` (direction -1).

    The derivative decays like a power ``|c - c_ref|^-p``; with
    ``s = (w / |c - c_ref|)^(p-1)`` the integrand is nearly constant on
    ``(0, 1]`` and a few Gauss-Legendre panels suffice.  Pairs beyond the
    tabulated range are solved directly, each starting from an
    extrapolation of the previous ones.
    """
    sys = table.system
    w = abs(c_end - c_ref)
    c_half = c_ref + direction * 0.5 * w
    f_end = _mid_derivatives(table, np.array([c_end]))[which][0]
    f_half = _mid_derivatives(table, np.array([c_half]))[which][0]
    if f_end == 0.0:
        return 0.0
    p = math.log(abs(f_half / f_end)) / math.log(2.0)
    gamma = p - 1.0
    if not gamma > 0.05:
        raise IntegrationError(f"coefficient derivative decays too slowly (exponent {p:.3g}) "
                               "to anchor the coefficient at an infinite threshold")
    s_nodes, s_weights = [], []
    for a, b in zip(FAR_EDGES[:-1], FAR_EDGES[1:]):
        x, wt = panel_nodes(a, b, b - a)
        s_nodes.append(x)
        s_weights.append(wt)
    s = np.concatenate(s_nodes)
    wts = np.concatenate(s_weights)
    order = np.argsort(-s)  # nearest capacities first
    s, wts = s[order], wts[order]
    cs = c_ref + direction * w * s ** (-1.0 / gamma)
    known = [(math.log(abs(c - c_ref)), np.array([float(table.mid_x(c)), float(table.mid_y(c))]))
             for c in (c_half, c_end)]
    uxs, uys = np.empty(cs.shape), np.empty(cs.shape)
    for i, c in enumerate(cs):
        t = math.log(abs(c - c_ref))
        (t1, z1), (t2, z2) = known[-2], known[-1]
        guess = z2 + (z2 - z1) * (t - t2) / (t2 - t1)
        r = sys.solve_pair_u(float(c), guess)
        if r is None:
            raise BoundaryError(f"no boundary pair at c={c:g} while integrating a coefficient tail")
        known.append((t, np.array(r, dtype=float)))
        uxs[i], uys[i] = r
    f = _cramer(table, cs, uxs, uys)[which]
    return float(np.sum(f * (w / gamma) * s ** (-1.0 / gamma - 1.0) * wts))


def integrate_coeffs(table: BoundaryTable):
    """Coefficient functions ``(A, B)`` over the capacities the table covers.

    ``A`` vanishes from ``c_upper_plus_g`` on and ``B`` up to
    ``c_lower_minus_g``; both are integrated away from those anchors.
    """
    sys = table.system
    L, U = table.region_splits
    reversible = table.minus_curve is not None
    a_pieces, b_pieces = [], []
    if math.isfinite(U):
        a_pieces.append(_zero(U, math.inf))
    if not reversible:
        b_pieces.append(_zero(-math.inf, math.inf))
    elif math.isfinite(L):
        b_pieces.append(_zero(-math.inf, L))

    A_L = B_U = None
    if reversible:
        c_a, c_b = table.mid_range
        (dA_a,), (dB_a,) = _mid_derivatives(table, np.array([c_a]))
        (dA_b,), (dB_b,) = _mid_derivatives(table, np.array([c_b]))
        if math.isfinite(U):
            A_b = -(U - c_b) * dA_b
        else:
            A_b = -_far_integral(table, c_b, L if math.isfinite(L) else c_a, +1, 0)
        if math.isfinite(L):
            B_a = (c_a - L) * dB_a
        else:
            B_a = _far_integral(table, c_a, U if math.isfinite(U) else c_b, -1, 1)
        A_mid = table.mid_x.antiderivative(lambda c: _mid_derivatives(table, c)[0], "right", A_b)
        B_mid = table.mid_x.antiderivative(lambda c: _mid_derivatives(table, c)[1], "left", B_a)
        dA = lambda c: _mid_derivatives(table, c)[0]
        dB = lambda c: _mid_derivatives(table, c)[1]
        a_pieces.append((c_a, c_b, A_mid, dA))
        b_pieces.append((c_a, c_b, B_mid, dB))
        A_a, B_b = float(A_mid(c_a)), float(B_mid(c_b))
        # the gaps next to finite thresholds are shorter than 1e-8 of the capacity scale
        if math.isfinite(L):
            a_pieces.append(_linear(L, c_a, c_a, A_a, dA_a))
            b_pieces.append(_linear(L, c_a, c_a, B_a, dB_a))
            A_L = A_a - (c_a - L) * dA_a
        if math.isfinite(U):
            a_pieces.append(_linear(c_b, U, c_b, A_b, dA_b))
            b_pieces.append(_linear(c_b, U, c_b, B_b, dB_b))
            B_U = B_b + (U - c_b) * dB_b

    span = _onesided_span(table, +1)
    if span is not None:
        u_a, u_b = span
        if reversible:
            anchor = A_L
        else:
            _, density = _onesided_piece(table, +1, u_a, u_b, 0.0)
            stop = sys.u_bounds[1]
            tail, truncated = integrate_outward(density, u_b, +1, stop=stop)
            if truncated:
                warnings.warn("the invest-boundary tail was cut at the edge of the computational window",
                              RuntimeWarning, stacklevel=2)
            anchor = -float(tail[0])
        piece, _ = _onesided_piece(table, +1, u_a, u_b, anchor)
        a_pieces.append(piece)
        if reversible:
            # B vanishes on the one-sided invest stretch
            b_pieces.append(_zero(piece[0], min(piece[1], L)))
    span = _onesided_span(table, -1)
    if span is not None:
        u_a, u_b = span
        piece, _ = _onesided_piece(table, -1, u_a, u_b, B_U)
        b_pieces.append(piece)
    A = Coefficient("A", a_pieces)
    B = Coefficient("B", b_pieces)
    return A, B


# -- the value function ----------------------------------------------------------

@dataclass(frozen=True)
class ValueFunction:
    """Value function assembled from a boundary table.

    Attributes
    ----------
    table : BoundaryTable
    A, B : Coefficient
        ``A`` vanishes for ``c >= c_upper_plus_g`` and ``B`` for
        ``c <= c_lower_minus_g``.
    coeffs : ResolventCoeffs
    pair : FundamentalPair
    """

    table: BoundaryTable
    A: Coefficient
    B: Coefficient
    coeffs: ResolventCoeffs
    pair: FundamentalPair
    rho: float
    q_plus: float
    q_minus: float

    @property
    def model(self):
        return self.pair.model

    def value(self, c, d):
        return value_at(self, c, d)

    def value_c(self, c, d):
        return value_c_at(self, c, d)

    def z_plus(self, d):
        return z_plus(self, d)

    def z_minus(self, d):
        return z_minus(self, d)


def build_value_function(table: BoundaryTable) -> ValueFunction:
    sys = table.system
    A, B = integrate_coeffs(table)
    return ValueFunction(table, A, B, sys.coeffs, sys.pair, sys.rho, sys.cost.q_plus, sys.cost.q_minus)


def _resolvents(vf: ValueFunction, d):
    """``alpha``, ``beta`` and two derivatives, computed once per distinct demand."""
    uniq, inv = np.unique(np.asarray(d, dtype=float), return_inverse=True)
    a = vf.coeffs.alpha_all(uniq)
    b = vf.coeffs.beta_all(uniq)
    return tuple(x[inv] for x in a), tuple(x[inv] for x in b)


def _per_unique(f, c):
    uniq, inv = np.unique(c, return_inverse=True)
    return np.asarray(f(uniq))[inv]


def _continuation(vf: ValueFunction, c, d, order):
    """Continuation-branch formula for ``v`` (order 0) or ``v_c`` (order 1) at flat arrays."""
    (al, _, _), (be, _, _) = _resolvents(vf, d)
    psi, phi = vf.pair.psi(d), vf.pair.phi(d)
    if order == 0:
        return (_per_unique(vf.A, c) * psi + _per_unique(vf.B, c) * phi
                + 0.5 * (c * c / vf.rho - 2.0 * be * c + al))
    return _per_unique(vf.A.prime, c) * psi + _per_unique(vf.B.prime, c) * phi + c / vf.rho - be


def _evaluate(vf: ValueFunction, c, d, order):
    c, d = np.broadcast_arrays(np.asarray(c, dtype=float), np.asarray(d, dtype=float))
    shape = c.shape
    c, d = c.ravel(), d.ravel()
    vf.model.check_interior(d)
    lab = np.atleast_1d(vf.table.classify(c, d))
    out = np.empty(c.shape)
    cont, inv, dis = lab == CONTINUE, lab == INVEST, lab == DISINVEST
    if np.any(cont):
        out[cont] = _continuation(vf, c[cont], d[cont], order)
    if np.any(inv):
        out[inv] = -vf.q_plus if order else z_plus(vf, d[inv]) - vf.q_plus * c[inv]
    if np.any(dis):
        out[dis] = vf.q_minus if order else z_minus(vf, d[dis]) + vf.q_minus * c[dis]
    return out.reshape(shape) if shape else float(out[0])


def value_at(vf: ValueFunction, c, d):
    """``v(c, d)``, vectorised with broadcasting."""
    return _evaluate(vf, c, d, 0)


def value_c_at(vf: ValueFunction, c, d):
    """``v_c(c, d)``: ``-q+`` when investing, ``q-`` when disinvesting."""
    return _evaluate(vf, c, d, 1)


def z_plus(vf: ValueFunction, d):
    """``z_+(d) = v(c_hat_+(d), d) + q+ c_hat_+(d)`` from the continuation branch."""
    d = np.asarray(d, dtype=float)
    flat = np.atleast_1d(d).ravel()
    c = np.atleast_1d(vf.table.chat_plus(flat))
    out = _continuation(vf, c, flat, 0) + vf.q_plus * c
    return out.reshape(d.shape) if d.ndim else float(out[0])


def z_minus(vf: ValueFunction, d):
    """``z_-(d) = v(c_hat_-(d), d) - q- c_hat_-(d)``; undefined in the irreversible case."""
    if vf.table.minus_curve is None:
        raise ValueError("z_minus is undefined without a disinvestment boundary")
    d = np.asarray(d, dtype=float)
    flat = np.atleast_1d(d).ravel()
    c = np.atleast_1d(vf.table.chat_minus(flat))
    out = _continuation(vf, c, flat, 0) - vf.q_minus * c
    return out.reshape(d.shape) if d.ndim else float(out[0])


# -- optimality checks -------------------------------------------------------------

def _fd_weights(offsets, order):
    """Weights of ``f^(order)(0) ~ sum w_k f(offset_k)`` for unit spacing."""
    offsets = np.asarray(offsets, dtype=float)
    n = len(offsets)
    V = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


STENCILS = {
    "central": np.arange(-2, 3),
    "forward": np.arange(0, 5),
    "backward": np.arange(-4, 1),
}


def _stencil_derivatives(f, model, d, lo, hi, step):
    """First and second ``d``-derivatives of ``f`` by 5-point differences in the internal coordinate.

    Stencils that would leave ``[lo, hi]`` (internal coordinates) are shifted to
    one-sided form; the returned mask flags those points.
    """
    u = model.to_internal(d)
    kind = np.full(u.shape, "central", dtype=object)
    kind[u - 2 * step < lo] = "forward"
    kind[u + 2 * step > hi] = "backward"
    f1 = np.empty(u.shape)
    f2 = np.empty(u.shape)
    for name, offs in STENCILS.items():
        sel = kind == name
        if not np.any(sel):
            continue
        pts = u[sel][:, None] + step * offs[None, :]
        vals = f(model.from_internal(pts).ravel()).reshape(pts.shape)
        g1 = vals @ _fd_weights(offs, 1) / step
        g2 = vals @ _fd_weights(offs, 2) / step**2
        # chain rule from the internal coordinate back to d
        jac = model.jacobian(u[sel])
        if model.log_coordinate:
            f1[sel] = g1 / jac
            f2[sel] = (g2 - g1) / jac**2
        else:
            f1[sel], f2[sel] = g1, g2
    return f1, f2, kind != "central"


def vi_residual(vf: ValueFunction, c, d, step=1e-3, with_flags=False):
    """``max{Lv - g, -v_c - q+, v_c - q-}`` with ``Lv = rho v - mu v_d - 0.5 sigma^2 v_dd``.

    Derivatives in ``d`` are analytic on the continuation branch and come from
    5-point differences of ``z_+`` or ``z_-`` in the action regions.
    """
    c, d = np.broadcast_arrays(np.asarray(c, dtype=float), np.asarray(d, dtype=float))
    shape = c.shape
    c, d = c.ravel(), d.ravel()
    model, cost = vf.model, vf.table.system.cost
    lab = np.atleast_1d(vf.table.classify(c, d))
    mu = np.asarray(model.drift(d), dtype=float) * np.ones_like(d)
    s2 = np.asarray(model.volatility(d), dtype=float) ** 2 * np.ones_like(d)
    g = running_cost(cost, c, d)
    gen = np.empty(c.shape)
    vc = np.empty(c.shape)
    flags = np.zeros(c.shape, dtype=bool)

    cont = lab == CONTINUE
    if np.any(cont):
        cc, dd = c[cont], d[cont]
        (al, dal, ddal), (be, dbe, ddbe) = _resolvents(vf, dd)
        A, B = _per_unique(vf.A, cc), _per_unique(vf.B, cc)
        p, dp, ddp = vf.pair.psi(dd), vf.pair.dpsi(dd), vf.pair.ddpsi(dd)
        f, df, ddf = vf.pair.phi(dd), vf.pair.dphi(dd), vf.pair.ddphi(dd)
        v = A * p + B * f + 0.5 * (cc * cc / vf.rho - 2.0 * be * cc + al)
        vd = A * dp + B * df + 0.5 * (-2.0 * dbe * cc + dal)
        vdd = A * ddp + B * ddf + 0.5 * (-2.0 * ddbe * cc + ddal)
        gen[cont] = vf.rho * v - mu[cont] * vd - 0.5 * s2[cont] * vdd
        vc[cont] = _continuation(vf, cc, dd, 1)
    for label, zf, sign, q, curve in ((INVEST, z_plus, -1.0, vf.q_plus, vf.table.plus_curve),
                                      (DISINVEST, z_minus, 1.0, vf.q_minus, vf.table.minus_curve)):
        sel = lab == label
        if not np.any(sel):
            continue
        dd = d[sel]
        z = zf(vf, dd)
        z1, z2, fl = _stencil_derivatives(lambda x: zf(vf, x), model, dd, curve.x_lo, curve.x_hi, step)
        v = z + sign * q * c[sel]
        gen[sel] = vf.rho * v - mu[sel] * z1 - 0.5 * s2[sel] * z2
        vc[sel] = sign * q
        flags[sel] = fl
    with np.errstate(invalid="ignore"):
        res = np.maximum.reduce([gen - g, -vc - vf.q_plus, vc - vf.q_minus])
    res = res.reshape(shape)
    return (res, flags.reshape(shape)) if with_flags else res


def smooth_fit_residual(vf: ValueFunction, c):
    """``A'psi' + B'phi' + V_hat_cd`` at ``d_hat_-(c)`` and ``d_hat_+(c)`` (``nan`` where absent)."""
    model = vf.model
    out = []
    da, db = coeff_derivatives(vf.table, c)
    for d in (vf.table.dhat_minus(c), vf.table.dhat_plus(c)):
        if not model.d_min < d < model.d_max:
            out.append(math.nan)
            continue
        dbeta = float(vf.coeffs.beta_all(np.array([d]))[1][0])
        out.append(float(da * vf.pair.dpsi(d) + db * vf.pair.dphi(d) - dbeta))
    return tuple(out)


def fd_smooth_fit(vf: ValueFunction, c, h):
    """One-sided difference estimates of ``v_cd`` at both boundaries, in boundary-scale units.

    The step ``h`` is taken in demand from the boundary ``d_b`` into the
    continuation region.  The estimate of ``v_cd`` is multiplied by
    ``d_b / q`` with ``q = q+ + q-`` (``q+`` when irreversible), the width of
    the admissible band of ``v_c``.
    """
    scale = vf.q_plus + (vf.q_minus if math.isfinite(vf.q_minus) else 0.0)
    out = []
    for d, sign in ((vf.table.dhat_minus(c), 1.0), (vf.table.dhat_plus(c), -1.0)):
        lo, hi = vf.table.d_range
        if not (lo <= d - h and d + h <= hi):
            out.append(math.nan)
            continue
        diff = value_c_at(vf, c, d + sign * h) - value_c_at(vf, c, d)
        out.append(float(sign * diff / h * abs(d) / scale))
    return tuple(out)


def second_difference(vf: ValueFunction, c, d, eps):
    """``[v(c+eps) - 2 v(c) + v(c-eps)] / eps^2``."""
    c = np.asarray(c, dtype=float)
    return (value_at(vf, c + eps, d) - 2.0 * value_at(vf, c, d) + value_at(vf, c - eps, d)) / eps**2


def residual_grid(vf: ValueFunction, c_range, d_range, n=100):
    """Tensor grid: linear in ``c``, log-spaced in ``d`` on the half line."""
    cs = np.linspace(*c_range, n)
    ds = np.geomspace(*d_range, n) if vf.model.log_coordinate else np.linspace(*d_range, n)
    return np.meshgrid(cs, ds, indexing="ij")


# -- CSV output ------------------------------------------------------------------

def write_surface(vf: ValueFunction, path, c_grid, d_grid):
    """Rows ``c, d, v, v_c, region``."""
    C, D = np.meshgrid(c_grid, d_grid, indexing="ij")
    v, vc = value_at(vf, C, D), value_c_at(vf, C, D)
    lab = vf.table.classify(C, D)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["c", "d", "v", "v_c", "region"])
        for row in zip(C.ravel(), D.ravel(), v.ravel(), vc.ravel(), np.ravel(lab)):
            w.writerow([fmt(x) for x in row[:4]] + [row[4]])


def write_residuals(vf: ValueFunction, path, c_grid, d_grid):
    """Rows ``c, d, vi_residual``."""
    C, D = np.meshgrid(c_grid, d_grid, indexing="ij")
    r = vi_residual(vf, C, D)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["c", "d", "vi_residual"])
        for row in zip(C.ravel(), D.ravel(), r.ravel()):
            w.writerow([fmt(x) for x in row])
    return r


def write_smooth_fit(vf: ValueFunction, path, c_grid):
    """Rows ``c, residual_minus, residual_plus``."""
    rows = [(c, *smooth_fit_residual(vf, c)) for c in c_grid]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["c", "residual_minus", "residual_plus"])
        for row in rows:
            w.writerow([fmt(x) for x in row])
    return rows


def write_coefficients(vf: ValueFunction, path, c_grid):
    """Rows ``c, A, B, A_prime, B_prime``."""
    c = np.asarray(c_grid, dtype=float)
    cols = (c, vf.A(c), vf.B(c), vf.A.prime(c), vf.B.prime(c))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["c", "A", "B", "A_prime", "B_prime"])
        for row in zip(*cols):
            w.writerow([fmt(x) for x in row])
