"""One-sided difference estimates of v_cd at the free boundaries as the step halves."""
import argparse
import csv
import math
from pathlib import Path

import numpy as np

from revcap.boundary import fmt, tabulate
from revcap.value import build_value_function, fd_smooth_fit

from _common import reference


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    hs = [1e-2 / 2**k for k in range(6)]
    rows = []
    for q_minus, cs in ((math.inf, (0.0, 10.0)), (1.0, (8.0, 10.0, 20.0))):
        _, _, sys = reference(q_minus)
        vf = build_value_function(tabulate(sys, np.linspace(6.5, 30.0, 24), d_range=(0.5, 50.0)))
        for c in cs:
            for h in hs:
                lo, hi = fd_smooth_fit(vf, c, h)
                rows.append((q_minus, c, h, lo, hi))
                print(f"q-={q_minus:<4g} c={c:<5g} h={h:.2e}  at d_hat-: {lo: .3e}  at d_hat+: {hi: .3e}")
    with open(args.out / "smooth_fit_convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["q_minus", "c", "h", "at_dhat_minus", "at_dhat_plus"])
        for row in rows:
            w.writerow([fmt(v) for v in row])


if __name__ == "__main__":
    main()
