"""Command line interface.

Usage: ``revcap SUBCOMMAND --config FILE [--out DIR] [options]`` with
subcommands ``boundaries``, ``value``, ``verify``, ``simulate``, ``dynkin``
and ``closed-form``.  Exit status is 0 when every requested check passes,
1 when a verification fails and 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import re
import sys
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .boundary import BoundarySystem, fmt, tabulate
from .cost import QuadraticCost, preset, resolvent_coeffs, vhat
from .diffusion import DiffusionModel, DomainError, fundamental_pair
from .simulate import (DO_NOTHING, PolicySpec, compare_policies, game_horizon, game_value, mc_value,
                       simulate_policy, tail_horizon, write_path_csv)
from .value import (build_value_function, second_difference, smooth_fit_residual, vi_residual,
                    write_coefficients, write_residuals, write_smooth_fit, write_surface)

log = logging.getLogger("revcap")

D0_HELP = ("When d0 is missing it defaults to the geometric midpoint of (d_min, d_max): sqrt(d_min*d_max) "
           "for a positive bounded interval, 1 on the half line, the arithmetic midpoint for other bounded "
           "intervals, 0 on the real line and one unit inside a single finite end.")


class ConfigError(ValueError):
    """Invalid configuration; the message carries ``file:line``."""


@dataclass(frozen=True)
class Numerics:
    c_min: float = -5.0
    c_max: float = 20.0
    d_lo: float = 0.5
    d_hi: float = 50.0
    grid: int = 100
    tolerance: float = 1e-5
    smooth_fit_tolerance: float = 1e-8
    convexity_tolerance: float = 1e-6
    dt: float = 1e-3
    horizon: float | None = None
    tail_eps: float = 1e-4
    n_paths: int = 100_000
    seed: int = 7
    c0: float = 0.0
    d_start: float = 10.0
    game_c: float | None = None
    game_d: float | None = None
    sim_width: float = 5.0


@dataclass(frozen=True)
class ProblemSpec:
    """Validated problem: diffusion, cost and numerical settings."""

    model: DiffusionModel
    cost: QuadraticCost
    numerics: Numerics
    settings: dict = field(default_factory=dict)


# -- configuration ---------------------------------------------------------------

class _Locator:
    """Line numbers of ``key = value`` entries per section."""

    def __init__(self, path: Path, text: str):
        self.path = path
        self.lines = {}
        section = None
        for i, line in enumerate(text.splitlines(), start=1):
            m = re.match(r"\s*\[([^\]]+)\]", line)
            if m:
                section = m.group(1).strip().lower()
                self.lines[(section, None)] = i
                continue
            m = re.match(r"\s*([A-Za-z0-9_]+)\s*[=:]", line)
            if m and section is not None:
                self.lines[(section, m.group(1).lower())] = i

    def where(self, section, key=None):
        line = self.lines.get((section, key)) or self.lines.get((section, None))
        return f"{self.path}:{line}" if line else f"{self.path}"


def _geometric_midpoint(lo, hi):
    if math.isfinite(lo) and math.isfinite(hi):
        return math.sqrt(lo * hi) if lo > 0 else 0.5 * (lo + hi)
    if lo == 0.0 and math.isinf(hi):
        return 1.0
    if math.isinf(lo) and math.isinf(hi):
        return 0.0
    return lo + 1.0 if math.isfinite(lo) else hi - 1.0


def _number(raw: str) -> float:
    t = raw.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    return float(t)


def _tabulated(path: Path):
    """Monotone cubic interpolant through ``d, value`` rows of a CSV file (header optional)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    try:
        data = np.array([[float(r[0]), float(r[1])] for r in rows])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"cannot read samples from {path}: {exc}") from None
    if len(data) < 4:
        raise ValueError(f"{path} needs at least four samples")
    f = PchipInterpolator(data[:, 0], data[:, 1], extrapolate=True)
    return lambda d: f(np.asarray(d, dtype=float))


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def _coefficient(raw: str, base: Path):
    t = raw.strip()
    if t.lower().startswith("tabulated:"):
        p = Path(t.split(":", 1)[1].strip())
        return _tabulated(p if p.is_absolute() else base / p), None, t
    return preset(t)


def parse_config(path) -> ProblemSpec:
    """Read and validate an INI file with sections ``[diffusion]``, ``[cost]`` and ``[numerics]``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration: {exc.strerror}") from None
    loc = _Locator(path, text)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for sec in ("diffusion", "cost"):
        if not cp.has_section(sec):
            raise ConfigError(f"{path}: missing section [{sec}]")

    def get(sec, key, default=None, conv=_number, required=False):
        if not cp.has_option(sec, key):
            if required:
                raise ConfigError(f"{loc.where(sec)}: [{sec}] needs '{key}'")
            return default
        raw = cp.get(sec, key)
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{loc.where(sec, key)}: {key} = {raw!r}: {exc}") from None

    diff = {k: v for k, v in cp.items("diffusion")}
    kind = get("diffusion", "kind", "gbm", str).strip().lower()
    mu = get("diffusion", "mu", required=True)
    sigma = get("diffusion", "sigma", required=True)
    rho = get("diffusion", "rho", required=True)
    if kind == "gbm":
        d_min, d_max = 0.0, math.inf
        for key in ("d_min", "d_max"):
            if key in diff and _number(diff[key]) != (0.0 if key == "d_min" else math.inf):
                raise ConfigError(f"{loc.where('diffusion', key)}: geometric Brownian motion lives on (0, inf)")
    elif kind == "abm":
        d_min = get("diffusion", "d_min", -math.inf)
        d_max = get("diffusion", "d_max", math.inf)
    else:
        raise ConfigError(f"{loc.where('diffusion', 'kind')}: unknown diffusion kind {kind!r}; use gbm or abm")
    d0 = get("diffusion", "d0")
    if d0 is None:
        d0 = _geometric_midpoint(d_min, d_max)
        warnings.warn(f"{path}: d0 missing, using the geometric midpoint {d0:g} of ({d_min:g}, {d_max:g})",
                      UserWarning, stacklevel=2)
    try:
        if kind == "gbm":
            model = DiffusionModel.gbm(mu, sigma, rho, d0=d0)
        else:
            model = DiffusionModel.generic(lambda d, m=mu: m + 0.0 * np.asarray(d, dtype=float),
                                           lambda d, s=sigma: s + 0.0 * np.asarray(d, dtype=float),
                                           rho, d_min=d_min, d_max=d_max, d0=d0)
    except (DomainError, ValueError) as exc:
        key = "rho" if "discount" in str(exc) or "rho" in str(exc) else "d0" if "d0" in str(exc) else None
        raise ConfigError(f"{loc.where('diffusion', key)}: {exc}") from None

    base = path.parent
    try:
        fa, _, la = _coefficient(get("cost", "alpha0", "square", str), base)
    except ValueError as exc:
        raise ConfigError(f"{loc.where('cost', 'alpha0')}: {exc}") from None
    try:
        fb, inv, lb = _coefficient(get("cost", "beta0", "identity", str), base)
    except ValueError as exc:
        raise ConfigError(f"{loc.where('cost', 'beta0')}: {exc}") from None
    q_plus = get("cost", "q_plus", required=True)
    q_minus = get("cost", "q_minus", math.inf)
    try:
        cost = QuadraticCost(fa, fb, q_plus, q_minus, inv, (la, lb))
    except ValueError as exc:
        key = "q_plus" if "q_plus" in str(exc) else "q_minus"
        raise ConfigError(f"{loc.where('cost', key)}: {exc}") from None
    try:
        cost.validate(model)
    except ValueError as exc:
        key = "beta0" if "beta0" in str(exc) else "alpha0"
        raise ConfigError(f"{loc.where('cost', key)}: {exc}") from None

    num = Numerics()
    if cp.has_section("numerics"):
        values = {}
        for f_name, f_def in asdict(num).items():
            if not cp.has_option("numerics", f_name):
                continue
            conv = int if f_name in ("grid", "n_paths", "seed") else _number
            values[f_name] = get("numerics", f_name, conv=conv)
        unknown = set(cp.options("numerics")) - set(asdict(num))
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"{loc.where('numerics', key)}: unknown numerics key '{key}'")
        num = replace(num, **values)
    _check_numerics(num, model, loc)
    settings = {"diffusion": {"kind": kind, "mu": mu, "sigma": sigma, "rho": rho, "d_min": d_min,
                              "d_max": d_max, "d0": d0},
                "cost": {"alpha0": la, "beta0": lb, "q_plus": q_plus, "q_minus": q_minus},
                "numerics": asdict(num)}
    return ProblemSpec(model, cost, num, settings)


def _check_numerics(num: Numerics, model: DiffusionModel, loc: _Locator):
    def bad(key, msg):
        raise ConfigError(f"{loc.where('numerics', key)}: {msg}")

    if not num.c_min < num.c_max:
        bad("c_max", "c_max must exceed c_min")
    if not (model.d_min < num.d_lo < num.d_hi < model.d_max):
        bad("d_hi", "need d_min < d_lo < d_hi < d_max")
    if num.grid < 2:
        bad("grid", "grid needs at least two points")
    for key in ("tolerance", "smooth_fit_tolerance", "convexity_tolerance", "dt", "tail_eps"):
        if not getattr(num, key) > 0:
            bad(key, f"{key} must be positive")
    if num.horizon is not None and not num.horizon > 0:
        bad("horizon", "horizon must be positive")
    if num.n_paths < 2:
        bad("n_paths", "n_paths must be at least 2")
    if not model.d_min < num.d_start < model.d_max:
        bad("d_start", "d_start must be inside the state interval")


# -- pipeline helpers --------------------------------------------------------------

def _system(spec: ProblemSpec):
    pair = fundamental_pair(spec.model)
    coeffs = resolvent_coeffs(spec.model, pair, spec.cost)
    return BoundarySystem(pair, spec.cost, coeffs)


def _table(spec: ProblemSpec, d_range=None, extra_c=()):
    num = spec.numerics
    c_grid = np.linspace(num.c_min, num.c_max, num.grid)
    if extra_c:
        c_grid = np.union1d(c_grid, np.asarray(extra_c, dtype=float))
    sysm = _system(spec)
    return tabulate(sysm, c_grid, d_range=d_range or (num.d_lo, num.d_hi))


def _simulation_range(spec: ProblemSpec, d_start, horizon):
    """Demand range a path leaves only with small probability before the horizon."""
    model = spec.model
    u0 = float(model.to_internal(d_start))
    mu_u, sig_u = (float(np.asarray(v)) for v in model.internal_coefficients(np.array(u0)))
    half = abs(mu_u) * horizon + spec.numerics.sim_width * sig_u * math.sqrt(horizon)
    lo, hi = model.window
    u_lo = max(u0 - half, float(model.to_internal(lo)))
    u_hi = min(u0 + half, float(model.to_internal(hi)))
    num = spec.numerics
    u_lo = min(u_lo, float(model.to_internal(num.d_lo)))
    u_hi = max(u_hi, float(model.to_internal(num.d_hi)))
    return float(model.from_internal(u_lo)), float(model.from_internal(u_hi))


def _header(spec: ProblemSpec, out: Path, command: str, extra=None):
    manifest = {"command": command, **spec.settings}
    if extra:
        manifest.update(extra)
    text = json.dumps(manifest, indent=2, default=_json_default)
    print(text)
    (out / f"{command}_settings.json").write_text(text + "\n")


def _json_default(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(repr(v))


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def _write_json(path: Path, data):
    text = json.dumps(_clean(data), indent=2, sort_keys=True)
    path.write_text(text + "\n")
    print(text)


# -- subcommands -------------------------------------------------------------------

def cmd_boundaries(spec: ProblemSpec, out: Path, args):
    tab = _table(spec)
    tab.write_csv(out / "boundaries_c.csv", out / "boundaries_d.csv")
    for c, msg in tab.failures:
        log.warning("pair solve failed at c=%g: %s", c, msg)
    return 1 if tab.failures else 0


def cmd_value(spec: ProblemSpec, out: Path, args):
    tab = _table(spec)
    vf = build_value_function(tab)
    c, d = _grid_axes(spec)
    write_surface(vf, out / "value_surface.csv", c, d)
    write_coefficients(vf, out / "coefficients.csv", c)
    return 0


def _grid_axes(spec: ProblemSpec):
    num = spec.numerics
    return residual_grid_axes(spec.model, (num.c_min, num.c_max), (num.d_lo, num.d_hi), num.grid)


def residual_grid_axes(model, c_range, d_range, n):
    cs = np.linspace(*c_range, n)
    ds = np.geomspace(*d_range, n) if model.log_coordinate else np.linspace(*d_range, n)
    return cs, ds


def verify_report(spec: ProblemSpec, vf):
    """Rows ``(check, value, tolerance, passed)`` for the residual and structure checks."""
    num = spec.numerics
    tab = vf.table
    cs, ds = _grid_axes(spec)
    C, D = np.meshgrid(cs, ds, indexing="ij")
    rows = []
    vi = np.abs(vi_residual(vf, C, D))
    rows.append(("vi_residual_max", float(np.max(vi)), num.tolerance, bool(np.max(vi) < num.tolerance)))
    sf = []
    for c in cs:
        for r in smooth_fit_residual(vf, c):
            if math.isfinite(r):
                sf.append(abs(r))
    sf_max = max(sf) if sf else 0.0
    rows.append(("smooth_fit_residual_max", sf_max, num.smooth_fit_tolerance, sf_max < num.smooth_fit_tolerance))
    tol = num.convexity_tolerance
    inner = (cs > cs[0]) & (cs < cs[-1])
    for eps in (1e-2, 1e-3):
        sd = second_difference(vf, C[inner], D[inner], eps)
        lo = float(np.min(sd))
        hi = float(np.max(sd)) - 1.0 / spec.model.rho
        rows.append((f"convexity_lower_eps{eps:g}", lo, -tol, lo >= -tol))
        rows.append((f"convexity_upper_eps{eps:g}", hi, tol, hi <= tol))
    vc = vf.value_c(C, D)
    rise = float(np.max(np.diff(vc, axis=1)))
    rows.append(("v_c_nonincreasing_in_d", rise, 1e-9, rise <= 1e-9))
    band = float(max(np.max(-vc - vf.q_plus), np.max(vc - vf.q_minus)))
    rows.append(("v_c_within_costs", band, 1e-9, band <= 1e-9))
    th = tab.system.th
    gap_p = float(np.max(tab.chat_plus(ds) - th.chat_plus_g(ds)))
    rows.append(("chat_plus_below_myopic", gap_p, 1e-9, gap_p <= 1e-9))
    if tab.minus_curve is not None:
        gap_m = float(np.max(th.chat_minus_g(ds) - tab.chat_minus(ds)))
        rows.append(("chat_minus_above_myopic", gap_m, 1e-9, gap_m <= 1e-9))
        order = float(np.max(tab.chat_plus(ds) - tab.chat_minus(ds)))
        rows.append(("chat_plus_below_chat_minus", order, 0.0, order < 0.0))
    return rows


def cmd_verify(spec: ProblemSpec, out: Path, args):
    tab = _table(spec)
    vf = build_value_function(tab)
    rows = verify_report(spec, vf)
    with open(out / "verify.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "value", "tolerance", "passed"])
        for name, val, tol, ok in rows:
            w.writerow([name, fmt(val), fmt(tol), "pass" if ok else "FAIL"])
    cs, ds = _grid_axes(spec)
    write_residuals(vf, out / "vi_residuals.csv", cs, ds)
    write_smooth_fit(vf, out / "smooth_fit.csv", cs)
    failed = [r for r in rows if not r[3]]
    for name, val, tol, _ in rows:
        print(f"{name:32s} {val: .3e}  tol {tol:.1e}  {'pass' if _ else ''}".rstrip())
    for name, val, tol, _ in failed:
        print(f"FAILED {name}: {val:.3e} against {tol:.1e}", file=sys.stderr)
    return 1 if failed else 0


def _horizon(spec: ProblemSpec, vf_scale):
    num = spec.numerics
    if num.horizon is not None:
        return num.horizon
    return tail_horizon(spec.model, max(vf_scale, 1.0), num.tail_eps)


def cmd_simulate(spec: ProblemSpec, out: Path, args):
    num = spec.numerics
    coeffs = resolvent_coeffs(spec.model, fundamental_pair(spec.model), spec.cost)
    scale = float(vhat(coeffs, num.c0, num.d_start))
    T = _horizon(spec, scale)
    tab = _table(spec, d_range=_simulation_range(spec, num.d_start, T), extra_c=(num.c0,))
    policy = PolicySpec(tab, label="optimal")
    res = mc_value(policy, spec.model, spec.cost, num.c0, num.d_start, num.dt, T, num.n_paths, num.seed)
    data = res.summary()
    if args.compare:
        shift = 0.1 * spec.model.rho * spec.cost.q_plus
        specs = [policy, PolicySpec(tab, shift, label="shift_plus"), PolicySpec(tab, -shift, label="shift_minus"),
                 PolicySpec(None, mode=DO_NOTHING)]
        ranked = compare_policies(specs, spec.model, spec.cost, num.c0, num.d_start, num.dt, T, num.n_paths,
                                  num.seed)
        data["comparison"] = [r.summary() for r in ranked]
    if args.dump_path:
        _, rows = simulate_policy(policy, spec.model, spec.cost, num.c0, num.d_start, num.dt, T, num.seed,
                                  record=True)
        write_path_csv(rows, out / "path.csv")
    _write_json(out / "simulate.json", data)
    return 0


def cmd_dynkin(spec: ProblemSpec, out: Path, args):
    num = spec.numerics
    c = num.game_c if num.game_c is not None else num.c0
    d = num.game_d if num.game_d is not None else num.d_start
    tab = _table(spec, extra_c=(c,))
    T = num.horizon if num.horizon is not None else game_horizon(spec.model, spec.cost, c, tab, num.tail_eps)
    res = game_value(spec.model, spec.cost, c, d, tab, num.dt, T, num.n_paths, num.seed)
    data = res.summary()
    bound_ok = -spec.cost.q_plus - 3 * res.std_error <= res.mean <= spec.cost.q_minus + 3 * res.std_error
    data["within_cost_bounds"] = bool(bound_ok)
    _write_json(out / "dynkin.json", data)
    return 0 if bound_ok else 1


def closed_form_constants(model: DiffusionModel, cost: QuadraticCost):
    """``m``, ``a``, ``b`` of the irreversible GBM solution with ``beta0(d) = d``."""
    if model.kind != "gbm" or not cost.irreversible or cost.labels[1] != "identity":
        raise ValueError("the closed form needs geometric Brownian motion, beta0 = identity and q_minus = inf")
    pair = fundamental_pair(model)
    m = pair.m
    rho, mu = model.rho, model.mu
    a = rho * (m - 1.0) / (m * (rho - mu))
    b = rho * cost.q_plus
    k = model.d0**m * a ** (m - 1.0) / ((rho - mu) * m * (m - 2.0))
    return m, a, b, (lambda c: -k * (np.asarray(c, dtype=float) + b) ** (2.0 - m))


def cmd_closed_form(spec: ProblemSpec, out: Path, args):
    num = spec.numerics
    try:
        m, a, b, A = closed_form_constants(spec.model, spec.cost)
    except ValueError as exc:
        print(f"closed-form: {exc}", file=sys.stderr)
        return 2
    tab = _table(spec)
    vf = build_value_function(tab)
    ds = np.geomspace(num.d_lo, num.d_hi, 200)
    dev_c = float(np.max(np.abs(tab.chat_plus(ds) - (a * ds - b))))
    lo = max(num.c_min, vf.A.c_range[0], -b + 1e-9)
    cs = np.linspace(lo, num.c_max, 200)
    dev_a = float(np.max(np.abs(vf.A(cs) - A(cs))))
    sample = [num.c_min, 0.0, num.c_max]
    data = {"m": m, "a": a, "b": b, "A": {fmt(c): float(A(c)) for c in sample if c > -b},
            "max_dev_chat_plus": dev_c, "max_dev_A": dev_a, "tolerance": 1e-8,
            "passed": bool(dev_c < 1e-8 and dev_a < 1e-8)}
    _write_json(out / "closed_form.json", data)
    return 0 if data["passed"] else 1


COMMANDS = {
    "boundaries": cmd_boundaries,
    "value": cmd_value,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "dynkin": cmd_dynkin,
    "closed-form": cmd_closed_form,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="INI file with [diffusion], [cost], [numerics]")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory (created if missing)")
    common.add_argument("--paths", type=int, help="Monte Carlo paths (numerics.n_paths)")
    common.add_argument("--seed", type=int, help="random seed (numerics.seed)")
    common.add_argument("--dt", type=float, help="time step (numerics.dt)")
    common.add_argument("--grid", type=int, help="grid size (numerics.grid)")
    common.add_argument("--tolerance", type=float, help="residual tolerance (numerics.tolerance)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="revcap", description=__doc__.split("\n\n")[0], epilog=D0_HELP)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], epilog=D0_HELP)
        if name == "simulate":
            p.add_argument("--compare", action="store_true", help="also run shifted and do-nothing policies")
            p.add_argument("--dump-path", action="store_true", help="write path 0 as t, D, C, dI+, dI- CSV")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            spec = parse_config(args.config)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        overrides = {k: v for k, v in (("n_paths", args.paths), ("seed", args.seed), ("dt", args.dt),
                                        ("grid", args.grid), ("tolerance", args.tolerance)) if v is not None}
        if overrides:
            num = replace(spec.numerics, **overrides)
            _check_numerics(num, spec.model, _Locator(args.config, ""))
            settings = dict(spec.settings, numerics=asdict(num))
            spec = replace(spec, numerics=num, settings=settings)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    args.out.mkdir(parents=True, exist_ok=True)
    _header(spec, args.out, args.command.replace("-", "_"))
    return COMMANDS[args.command](spec, args.out, args)


if __name__ == "__main__":
    sys.exit(main())
