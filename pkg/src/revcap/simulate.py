"""Monte Carlo checks: reflected policies, the stopping game and plain resolvents.

Every estimator draws demand from the counter-based streams of
:mod:`revcap.diffusion`, so path ``p`` sees the same normals in every run with
the same seed and all policies of one comparison share their paths.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .boundary import BoundaryTable, fmt
from .cost import QuadraticCost, running_cost
from .diffusion import BLOCK, DemandStream, DiffusionModel, step_demand

REFLECT, DO_NOTHING = "Reflect", "DoNothing"
LOOKUP_POINTS = 20001


@dataclass(frozen=True)
class PolicySpec:
    """Reflection between ``c_hat_+ + shift_plus`` and ``c_hat_- + shift_minus``, or no action."""

    table: BoundaryTable | None
    shift_plus: float = 0.0
    shift_minus: float = 0.0
    mode: str = REFLECT
    label: str = ""

    def __post_init__(self):
        if self.mode not in (REFLECT, DO_NOTHING):
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if self.mode == REFLECT and self.table is None:
            raise ValueError("a reflecting policy needs a boundary table")

    @property
    def name(self):
        if self.label:
            return self.label
        if self.mode == DO_NOTHING:
            return DO_NOTHING
        return f"Reflect({self.shift_plus:+g},{self.shift_minus:+g})"


@dataclass(frozen=True)
class SimResult:
    """Discounted cost estimate.

    ``discounted_cost`` is the mean over paths (the realised cost for a single
    path); ``total_invest`` and ``total_disinvest`` are mean undiscounted
    control totals at the horizon; ``out_of_range`` is the share of path
    steps whose demand left the tabulated boundary range.
    """

    discounted_cost: float
    total_invest: float
    total_disinvest: float
    n_paths: int
    std_error: float
    horizon: float
    dt: float
    seed: int
    label: str = ""
    out_of_range: float = 0.0

    @property
    def mean(self):
        return self.discounted_cost

    def summary(self):
        out = {"mean": self.discounted_cost, "std_error": self.std_error, "n_paths": self.n_paths,
               "dt": self.dt, "horizon": self.horizon, "seed": self.seed}
        out.update({k: v for k, v in asdict(self).items() if k not in ("discounted_cost",) and k not in out})
        return out


@dataclass(frozen=True)
class GameResult:
    """Mean payoff of the stopping game over independent paths."""

    mean: float
    std_error: float
    n_paths: int
    dt: float
    horizon: float
    seed: int
    c: float
    d: float
    stopped_invest: float
    stopped_disinvest: float

    def summary(self):
        return asdict(self)


def worker_count():
    """Threads used for path blocks: ``REVCAP_THREADS`` capped by the CPU count."""
    cpus = os.cpu_count() or 1
    raw = os.environ.get("REVCAP_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"REVCAP_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(n, cpus))


def growth_rate(model: DiffusionModel) -> float:
    """Decay rate of discounted quadratic costs: ``rho - max(0, 2 mu + sigma^2)`` for GBM, else ``rho``."""
    if model.kind == "gbm":
        return model.rho - max(0.0, 2.0 * model.mu + model.sigma**2)
    return model.rho


def tail_horizon(model: DiffusionModel, scale: float, eps: float) -> float:
    """Horizon ``T = ln(S/eps)/kappa`` after which the discounted tail is below ``eps``."""
    if not (scale > 0 and eps > 0):
        raise ValueError("scale and eps must be positive")
    return max(math.log(scale / eps), 0.0) / growth_rate(model) if scale > eps else 0.0


def _time_grid(dt, horizon):
    if not (dt > 0 and horizon > 0):
        raise ValueError("dt and horizon must be positive")
    n = int(math.ceil(horizon / dt - 1e-9))
    return np.minimum(np.arange(n + 1) * dt, horizon)


class _Lookup:
    """Linear interpolation of both boundaries on a uniform internal-coordinate grid."""

    def __init__(self, table: BoundaryTable, n=LOOKUP_POINTS):
        self.model = table.model
        self.u, self.cp, self.cm = table.lookup(n)
        self.u0 = float(self.u[0])
        self.du = float(self.u[1] - self.u[0])
        self.n = len(self.u)
        self.finite_minus = bool(np.all(np.isfinite(self.cm)))

    def __call__(self, d):
        u = self.model.to_internal(d)
        s = (u - self.u0) / self.du
        out = (s < 0) | (s > self.n - 1)
        s = np.clip(s, 0.0, self.n - 1.0)
        i = np.minimum(s.astype(np.int64), self.n - 2)
        w = s - i
        cp = self.cp[i] + w * (self.cp[i + 1] - self.cp[i])
        if self.finite_minus:
            cm = self.cm[i] + w * (self.cm[i + 1] - self.cm[i])
        else:
            cm = np.full(np.shape(d), math.inf)
        return cp, cm, out


def reflect_step(policy: PolicySpec, c_prev, d_new):
    """``min(max(c_prev, c_hat_+(d) + shift_plus), c_hat_-(d) + shift_minus)`` and the increments."""
    c_prev = np.asarray(c_prev, dtype=float)
    if policy.mode == DO_NOTHING:
        zero = np.zeros_like(c_prev)
        return c_prev + 0.0, zero, zero
    lo = policy.table.chat_plus(d_new) + policy.shift_plus
    hi = policy.table.chat_minus(d_new) + policy.shift_minus
    return _clamp(c_prev, lo, hi)


def _clamp(c_prev, lo, hi):
    c_new = np.minimum(np.maximum(c_prev, lo), hi)
    return c_new, np.maximum(c_new - c_prev, 0.0), np.maximum(c_prev - c_new, 0.0)


def _check_band(policy: PolicySpec, lookup: _Lookup):
    if policy.mode == REFLECT and lookup.finite_minus:
        if np.any(lookup.cp + policy.shift_plus >= lookup.cm + policy.shift_minus):
            raise ValueError(f"shifted boundaries of {policy.name} cross each other")


def _blocks(n_paths, first=0):
    """``(block, n_in_block, start_column)`` triples covering paths ``first .. first+n_paths-1``."""
    out = []
    p = first
    end = first + n_paths
    while p < end:
        b, col = divmod(p, BLOCK)
        take = min(BLOCK - col, end - p)
        out.append((b, col + take, col))
        p += take
    return out


class _Streams:
    """Demand for a group of blocks advanced together."""

    def __init__(self, model, d0, dt, seed, blocks):
        self.model = model
        self.streams = [DemandStream(model, d0, dt, seed, b, n) for b, n, _ in blocks]
        self.cols = [slice(col, n) for _, n, col in blocks]
        self.d = np.full(sum(n - col for _, n, col in blocks), float(d0))

    def step(self, h):
        z = np.concatenate([s.normals()[sl] for s, sl in zip(self.streams, self.cols)])
        self.d = step_demand(self.model, self.d, h, z)
        return self.d


def _run_group(policies, model, cost, c0, d0, times, seed, blocks, lookup, record):
    rho = model.rho
    qp, qm = cost.q_plus, cost.q_minus
    streams = _Streams(model, d0, times[1] - times[0] if len(times) > 1 else 1.0, seed, blocks)
    d = streams.d
    n = d.size
    cp, cm, out = lookup(d) if lookup is not None else (None, None, np.zeros(n, dtype=bool))
    k_pol = len(policies)
    c = np.full((k_pol, n), float(c0))
    cost_acc = np.zeros((k_pol, n))
    inv = np.zeros((k_pol, n))
    dis = np.zeros((k_pol, n))
    out_count = out.astype(float)
    rows = [] if record else None

    def control(j, c_prev, cp, cm, disc):
        pol = policies[j]
        if pol.mode == DO_NOTHING:
            zero = np.zeros(n)
            return c_prev, zero, zero
        c_new, dip, dim = _clamp(c_prev, cp + pol.shift_plus, cm + pol.shift_minus)
        cost_acc[j] += disc * qp * dip
        inv[j] += dip
        if math.isfinite(qm):
            cost_acc[j] += disc * qm * dim
            dis[j] += dim
        return c_new, dip, dim

    for j in range(k_pol):
        c[j], dip, dim = control(j, c[j], cp, cm, 1.0)
        if record and j == 0:
            rows.append((0.0, d.copy(), c[0].copy(), dip, dim))
    g_prev = running_cost(cost, c, d[None, :])
    disc_prev = 1.0
    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        d = streams.step(h)
        disc = math.exp(-rho * times[k + 1])
        if lookup is not None:
            cp, cm, out = lookup(d)
            out_count += out
        for j in range(k_pol):
            c[j], dip, dim = control(j, c[j], cp, cm, disc)
            if record and j == 0:
                rows.append((times[k + 1], d.copy(), c[0].copy(), dip, dim))
        g_new = running_cost(cost, c, d[None, :])
        cost_acc += 0.5 * h * (disc_prev * g_prev + disc * g_new)
        g_prev, disc_prev = g_new, disc
    return cost_acc, inv, dis, out_count / len(times), rows


def _run(policies, model, cost, c0, d0, dt, horizon, n_paths, seed, first=0, record=False):
    model.check_interior(d0)
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    times = _time_grid(dt, horizon)
    tables = {id(p.table): p.table for p in policies if p.mode == REFLECT}
    if len(tables) > 1:
        raise ValueError("policies compared on common paths must share one boundary table")
    lookup = _Lookup(next(iter(tables.values()))) if tables else None
    for p in policies:
        if lookup is not None:
            _check_band(p, lookup)
    blocks = _blocks(n_paths, first)
    workers = min(worker_count(), len(blocks)) if not record else 1
    # contiguous groups keep the path order, so the reduction is scheduling-independent
    bounds = np.linspace(0, len(blocks), workers + 1).astype(int)
    groups = [blocks[bounds[i]:bounds[i + 1]] for i in range(workers)]
    args = (policies, model, cost, c0, d0, times, seed)
    if workers == 1:
        parts = [_run_group(*args, groups[0], lookup, record)]
    else:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda g: _run_group(*args, g, lookup, False), groups))
        parts = [tuple(np.concatenate([p[i] for p in parts], axis=-1) for i in range(4)) + (None,)]
    cost_acc, inv, dis, out_frac, rows = parts[0]
    return cost_acc, inv, dis, out_frac, rows, times


def _summarise(policies, cost_acc, inv, dis, out_frac, n_paths, horizon, dt, seed):
    results = []
    for j, p in enumerate(policies):
        x = cost_acc[j]
        se = float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
        results.append(SimResult(float(np.mean(x)), float(np.mean(inv[j])), float(np.mean(dis[j])),
                                 int(n_paths), se, float(horizon), float(dt), int(seed), p.name,
                                 float(np.mean(out_frac)) if p.mode == REFLECT else 0.0))
    return results


def simulate_policy(policy: PolicySpec, model: DiffusionModel, cost: QuadraticCost, c0, d0, dt, horizon, seed,
                    path_index=0, record=False):
    """Realised discounted cost along one path (path ``path_index`` of the seeded batch).

    With ``record=True`` the path itself is returned as well, as rows
    ``(t, D, C, dI+, dI-)``.
    """
    cost_acc, inv, dis, out_frac, rows, times = _run([policy], model, cost, c0, d0, dt, horizon, 1, seed,
                                                     first=path_index, record=record)
    res = SimResult(float(cost_acc[0, 0]), float(inv[0, 0]), float(dis[0, 0]), 1, 0.0, float(horizon),
                    float(dt), int(seed), policy.name, float(out_frac[0]))
    if not record:
        return res
    path = [(t, float(D[0]), float(C[0]), float(a[0]), float(b[0])) for t, D, C, a, b in rows]
    return res, path


def write_path_csv(path_rows, file):
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "D", "C", "dI_plus", "dI_minus"])
        for row in path_rows:
            w.writerow([fmt(v) for v in row])


def mc_value(policy: PolicySpec, model: DiffusionModel, cost: QuadraticCost, c0, d0, dt, horizon, n_paths, seed):
    """Mean discounted cost and standard error over ``n_paths`` independent paths."""
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    cost_acc, inv, dis, out_frac, _, _ = _run([policy], model, cost, c0, d0, dt, horizon, n_paths, seed)
    return _summarise([policy], cost_acc, inv, dis, out_frac, n_paths, horizon, dt, seed)[0]


def compare_policies(specs, model: DiffusionModel, cost: QuadraticCost, c0, d0, dt, horizon, n_paths, seed):
    """All policies on common paths; results sorted by mean cost, cheapest first."""
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    cost_acc, inv, dis, out_frac, _, _ = _run(list(specs), model, cost, c0, d0, dt, horizon, n_paths, seed)
    res = _summarise(list(specs), cost_acc, inv, dis, out_frac, n_paths, horizon, dt, seed)
    return sorted(res, key=lambda r: r.discounted_cost)


# -- stopping game ---------------------------------------------------------------

def _game_group(model, cost, c, d, x, y, times, seed, blocks):
    rho = model.rho
    streams = _Streams(model, d, times[1] - times[0] if len(times) > 1 else 1.0, seed, blocks)
    dd = streams.d
    n = dd.size
    pay = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    hit_up = np.zeros(n, dtype=bool)
    hit_dn = np.zeros(n, dtype=bool)
    # the maximiser (invest trigger) acts first when both apply at time zero
    up0 = dd >= y
    dn0 = ~up0 & (dd <= x)
    pay[up0] = -cost.q_plus
    pay[dn0] = cost.q_minus
    hit_up |= up0
    hit_dn |= dn0
    alive &= ~(up0 | dn0)
    gc_prev = c - np.asarray(cost.beta0(dd), dtype=float)
    disc_prev = 1.0
    for k in range(len(times) - 1):
        if not np.any(alive):
            break
        h = times[k + 1] - times[k]
        dd = streams.step(h)
        disc = math.exp(-rho * times[k + 1])
        gc = c - np.asarray(cost.beta0(dd), dtype=float)
        pay[alive] += 0.5 * h * (disc_prev * gc_prev[alive] + disc * gc[alive])
        up = alive & (dd >= y)
        dn = alive & (dd <= x)
        pay[up] -= disc * cost.q_plus
        if math.isfinite(cost.q_minus):
            pay[dn] += disc * cost.q_minus
        hit_up |= up
        hit_dn |= dn
        alive &= ~(up | dn)
        gc_prev, disc_prev = gc, disc
    return pay, hit_up, hit_dn


def _game_triggers(table: BoundaryTable, c):
    x = float(table.dhat_minus(c))
    y = float(table.dhat_plus(c))
    return x, y


def dynkin_payoff(model: DiffusionModel, cost: QuadraticCost, c, d, table: BoundaryTable, dt, horizon, seed,
                  path_index=0):
    """Realised payoff of the game frozen at capacity ``c`` under the hitting-time strategies.

    The minimiser stops when demand falls to ``d_hat_-(c)`` and pays
    ``q-``; the maximiser stops when it reaches ``d_hat_+(c)`` and receives
    ``q+``; until then ``g_c(c, D)`` accrues.  A game still running at the
    horizon contributes only its integral.
    """
    model.check_interior(d)
    x, y = _game_triggers(table, c)
    times = _time_grid(dt, horizon)
    pay, _, _ = _game_group(model, cost, float(c), float(d), x, y, times, seed, _blocks(1, path_index))
    return float(pay[0])


def game_value(model: DiffusionModel, cost: QuadraticCost, c, d, table: BoundaryTable, dt, horizon, n_paths,
               seed) -> GameResult:
    """Monte Carlo mean of :func:`dynkin_payoff` over ``n_paths`` paths."""
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    model.check_interior(d)
    x, y = _game_triggers(table, c)
    times = _time_grid(dt, horizon)
    pay, up, dn = _game_group(model, cost, float(c), float(d), x, y, times, seed, _blocks(n_paths))
    se = float(np.std(pay, ddof=1) / math.sqrt(n_paths))
    return GameResult(float(np.mean(pay)), se, int(n_paths), float(dt), float(horizon), int(seed), float(c),
                      float(d), float(np.mean(up)), float(np.mean(dn)))


def game_horizon(model: DiffusionModel, cost: QuadraticCost, c, table: BoundaryTable, eps):
    """Tail-rule horizon for the game: payoffs and the accrued integrand are bounded by ``S``."""
    x, y = _game_triggers(table, c)
    lo = x if model.d_min < x else float(model.window[0])
    hi = y if y < model.d_max else float(model.window[1])
    gmax = max(abs(c - float(np.asarray(cost.beta0(np.array([v])))[0])) for v in (lo, hi))
    q = cost.q_plus + (cost.q_minus if math.isfinite(cost.q_minus) else 0.0)
    return tail_horizon(model, q + gmax / model.rho, eps)


# -- resolvents ------------------------------------------------------------------

def mc_resolvent(model: DiffusionModel, f, d, dt, horizon, n_paths, seed):
    """Monte Carlo ``E int_0^T e^(-rho t) f(D_t) dt`` with its standard error."""
    model.check_interior(d)
    times = _time_grid(dt, horizon)
    streams = _Streams(model, d, dt, seed, _blocks(n_paths))
    acc = np.zeros(streams.d.size)
    f_prev = np.asarray(f(streams.d), dtype=float) * np.ones_like(acc)
    disc_prev = 1.0
    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        dd = streams.step(h)
        disc = math.exp(-model.rho * times[k + 1])
        f_new = np.asarray(f(dd), dtype=float) * np.ones_like(acc)
        acc += 0.5 * h * (disc_prev * f_prev + disc * f_new)
        f_prev, disc_prev = f_new, disc
    return float(np.mean(acc)), float(np.std(acc, ddof=1) / math.sqrt(n_paths))
