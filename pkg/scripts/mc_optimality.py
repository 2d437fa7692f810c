"""Monte Carlo cost of the reflected policy against shifted and do-nothing policies.

Irreversible reference instance, common random numbers, tail-rule horizon.
Writes ``mc_optimality.csv``.
"""
import argparse
import csv
import math
from pathlib import Path

from revcap.boundary import fmt, tabulate
from revcap.cost import vhat
from revcap.simulate import DO_NOTHING, PolicySpec, compare_policies, tail_horizon
from revcap.value import build_value_function, value_at

from _common import reference


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--shift", type=float, default=0.1, help="shift as a fraction of rho * q_plus")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    model, cost, sys = reference(math.inf)
    table = tabulate(sys, [-5.0, 25.0], d_range=(10.0 * math.exp(-12.0), 10.0 * math.exp(12.0)))
    vf = build_value_function(table)
    shift = args.shift * model.rho * cost.q_plus
    rows = []
    for c0, d0 in ((0.0, 10.0), (0.0, 1.0), (-5.0, 20.0)):
        v = value_at(vf, c0, d0)
        T = tail_horizon(model, max(float(vhat(vf.coeffs, c0, d0)), 1.0), 1e-4)
        specs = [PolicySpec(table, label="optimal"), PolicySpec(table, shift, label="shift_plus"),
                 PolicySpec(table, -shift, label="shift_minus"), PolicySpec(None, mode=DO_NOTHING)]
        for r in compare_policies(specs, model, cost, c0, d0, args.dt, T, args.paths, args.seed):
            z = (r.mean - v) / r.std_error
            print(f"({c0:g},{d0:g}) {r.label:12s} {r.mean:.5f} +- {r.std_error:.5f}  v={v:.5f}  z={z:+.2f}")
            rows.append((c0, d0, r.label, r.mean, r.std_error, v, T))
    with open(args.out / "mc_optimality.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["c0", "d0", "policy", "mean", "std_error", "value", "horizon"])
        for c0, d0, lab, m, se, v, T in rows:
            w.writerow([fmt(c0), fmt(d0), lab, fmt(m), fmt(se), fmt(v), fmt(T)])


if __name__ == "__main__":
    main()
