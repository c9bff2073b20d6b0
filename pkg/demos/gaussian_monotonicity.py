"""Shared reward of the two-robot force game as both robots grow more risk averse."""
import argparse

import numpy as np

from rqe_lab.games import make_example_force_game
from rqe_lab.gaussian import monotonicity_scan

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--abar", type=float, default=1.0)
ap.add_argument("--eps", type=float, default=1.0)
args = ap.parse_args()

rows = monotonicity_scan(make_example_force_game(args.abar), args.eps, np.linspace(0, 2.2, 12))
print(f"{'tau':>5} {'valid':>5} {'mean':>8} {'J':>9} {'utility':>9}")
for r in rows:
    if r["valid"]:
        print(f"{r['tau']:5.2f} {'yes':>5} {r['means'][0, 0]:8.4f} {r['J']:9.4f} {r['utilities'][0]:9.4f}")
    else:
        print(f"{r['tau']:5.2f} {'no':>5}   (entropic risk is infinite: tau * eps >= 2)")
