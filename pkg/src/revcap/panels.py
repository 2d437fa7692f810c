"""Piecewise Chebyshev representations of smooth one-dimensional curves.

Boundary curves and the coefficient functions of the value function are
sampled once at Chebyshev points and then evaluated, differentiated or
integrated without further solves.  Each panel lives in a transformed
coordinate ``t`` (linear, or logarithmic distance to a singular endpoint) so
that power-law behaviour near an endpoint becomes smooth.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as C


@dataclass(frozen=True)
class Coordinate:
    """Monotone map between the natural variable ``x`` and the panel variable ``t``."""

    kind: str = "linear"  # "linear" | "log_above" | "log_below"
    anchor: float = 0.0

    def to_t(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return x
        if self.kind == "log_above":
            return np.log(x - self.anchor)
        return -np.log(self.anchor - x)

    def to_x(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "linear":
            return t
        if self.kind == "log_above":
            return self.anchor + np.exp(t)
        return self.anchor - np.exp(-t)

    def dx_dt(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "linear":
            return np.ones_like(t)
        if self.kind == "log_above":
            return np.exp(t)
        return np.exp(-t)


@dataclass
class Panel:
    x_lo: float
    x_hi: float
    coord: Coordinate
    coef: np.ndarray

    @property
    def t_domain(self):
        return tuple(sorted((float(self.coord.to_t(self.x_lo)), float(self.coord.to_t(self.x_hi)))))

    def __call__(self, x):
        t = self.coord.to_t(x)
        lo, hi = self.t_domain
        return C.chebval((2.0 * t - lo - hi) / (hi - lo), self.coef)


def _fit(g: Callable, lo: float, hi: float, deg: int) -> np.ndarray:
    k = np.arange(deg + 1)
    s = np.cos(np.pi * (k + 0.5) / (deg + 1))
    t = 0.5 * (lo + hi) + 0.5 * (hi - lo) * s
    vals = np.asarray(g(t), dtype=float)
    return C.chebfit(s, vals, deg)


def build_family(f: Callable, pieces, deg: int = 16, tol: float = 1e-13, max_depth: int = 6,
                 floor: Callable | None = None):
    """Fit several curves sharing one panel structure.

    ``f`` maps an array of ``n`` abscissae to an ``(n, k)`` array; a panel is
    split until every column passes the coefficient-decay test.  ``floor``,
    if given, maps a panel ``(x_lo, x_hi)`` to an absolute noise level of the
    samples below which trailing coefficients are not resolved.  Returns a list
    of ``k`` :class:`PanelCurve` objects.
    """
    out = []

    def add(x_lo, x_hi, coord, depth):
        t_lo, t_hi = sorted((float(coord.to_t(x_lo)), float(coord.to_t(x_hi))))
        coef = _fit(lambda t: f(coord.to_x(t)), t_lo, t_hi, deg)
        scale = np.maximum(np.max(np.abs(coef), axis=0), 1e-300)
        tail = np.max(np.abs(coef[-3:]), axis=0)
        allowed = tol * scale + (floor(x_lo, x_hi) if floor is not None else 0.0)
        if depth < max_depth and np.any(tail > allowed):
            x_mid = float(coord.to_x(0.5 * (t_lo + t_hi)))
            add(x_lo, x_mid, coord, depth + 1)
            add(x_mid, x_hi, coord, depth + 1)
        else:
            out.append((x_lo, x_hi, coord, coef))

    for x_lo, x_hi, coord in pieces:
        add(min(x_lo, x_hi), max(x_lo, x_hi), coord, 0)
    out.sort(key=lambda p: p[0])
    k = out[0][3].shape[1]
    return [PanelCurve([Panel(a, b, c, coef[:, j].copy()) for a, b, c, coef in out]) for j in range(k)]


@dataclass
class PanelCurve:
    """A curve on ``[x_lo, x_hi]`` stored as consecutive Chebyshev panels.

    Panels are sorted by ``x``.  Evaluation outside the covered range raises
    ``ValueError``.
    """

    panels: list[Panel] = field(default_factory=list)

    @property
    def breaks(self) -> np.ndarray:
        return np.array([p.x_lo for p in self.panels] + [self.panels[-1].x_hi])

    @property
    def x_lo(self) -> float:
        return self.panels[0].x_lo

    @property
    def x_hi(self) -> float:
        return self.panels[-1].x_hi

    def covers(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        span = abs(self.x_hi - self.x_lo)
        tol = 1e-13 * max(span, abs(self.x_lo), abs(self.x_hi))
        return (x >= self.x_lo - tol) & (x <= self.x_hi + tol)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(self.covers(x)):
            raise ValueError(f"evaluation outside [{self.x_lo:.6g}, {self.x_hi:.6g}]")
        b = self.breaks
        idx = np.clip(np.searchsorted(b, x, side="right") - 1, 0, len(self.panels) - 1)
        out = np.empty(x.shape)
        for i in np.unique(idx):
            sel = idx == i
            out[sel] = self.panels[i](x[sel])
        return out if out.ndim else float(out)

    @classmethod
    def build(cls, f: Callable, pieces, deg: int = 16, tol: float = 1e-13, max_depth: int = 6):
        """Sample ``f`` (vectorised over ``x``) on each ``(x_lo, x_hi, coord)`` piece.

        A piece whose trailing Chebyshev coefficients exceed ``tol`` relative to
        the largest one is bisected in ``t``, up to ``max_depth`` times.
        """
        return build_family(lambda x: np.asarray(f(x), dtype=float)[:, None], pieces, deg, tol, max_depth)[0]

    def resample(self, f: Callable):
        """Same panels, new function.  ``f`` receives ``x`` at the panel nodes."""
        panels = []
        for p in self.panels:
            lo, hi = p.t_domain
            deg = len(p.coef) - 1
            coef = _fit(lambda t, c=p.coord: f(c.to_x(t)), lo, hi, deg)
            panels.append(Panel(p.x_lo, p.x_hi, p.coord, coef))
        return PanelCurve(panels)

    def antiderivative(self, f: Callable, anchor: str = "right", value: float = 0.0):
        """Curve ``F`` with ``F' = f`` on the same panels, fixed to ``value`` at one end.

        ``f`` is sampled at the panel nodes (times the coordinate Jacobian), so
        the result is accurate to the same order as the panel fit.
        """
        pieces = []
        for p in self.panels:
            lo, hi = p.t_domain
            deg = len(p.coef) - 1
            g = lambda t, c=p.coord: f(c.to_x(t)) * c.dx_dt(t)
            coef = _fit(g, lo, hi, deg)
            # d/ds with s in [-1, 1] maps to d/dt * (hi - lo) / 2
            integ = C.chebint(coef, scl=0.5 * (hi - lo))
            pieces.append((p, integ))
        panels = []
        increments = []
        for p, integ in pieces:
            t_x_lo = float(p.coord.to_t(p.x_lo))
            t_x_hi = float(p.coord.to_t(p.x_hi))
            lo, hi = p.t_domain
            s_lo = (2.0 * t_x_lo - lo - hi) / (hi - lo)
            s_hi = (2.0 * t_x_hi - lo - hi) / (hi - lo)
            integ = integ - C.chebval(s_lo, integ) * np.eye(1, len(integ))[0]
            increments.append(float(C.chebval(s_hi, integ)))
            panels.append(Panel(p.x_lo, p.x_hi, p.coord, integ))
        increments = np.array(increments)
        if anchor == "left":
            offsets = value + np.concatenate([[0.0], np.cumsum(increments)[:-1]])
        else:
            total_after = np.concatenate([np.cumsum(increments[::-1])[::-1][1:], [0.0]])
            offsets = value - total_after - increments
        for panel, off in zip(panels, offsets):
            panel.coef = panel.coef.copy()
            panel.coef[0] += off
        return PanelCurve(panels)

    def derivative(self):
        """Derivative curve with respect to ``x``."""
        panels = []
        for p in self.panels:
            lo, hi = p.t_domain
            dcoef = C.chebder(p.coef, scl=2.0 / (hi - lo))
            panels.append(_DerivPanel(p.x_lo, p.x_hi, p.coord, dcoef))
        return PanelCurve(panels)


class _DerivPanel(Panel):
    def __call__(self, x):
        t = self.coord.to_t(x)
        return super().__call__(x) / self.coord.dx_dt(t)


def invert_monotone(curve: Callable, target: float, lo: float, hi: float, xtol: float = 0.0):
    """Solve ``curve(x) = target`` for increasing ``curve`` on ``[lo, hi]`` by bisection+secant."""
    from scipy.optimize import brentq

    f_lo = curve(lo) - target
    f_hi = curve(hi) - target
    if f_lo > 0 or f_hi < 0:
        raise ValueError("target outside the range of the curve")
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    return brentq(lambda x: curve(x) - target, lo, hi, xtol=xtol or 1e-15 * max(abs(lo), abs(hi), 1.0))
