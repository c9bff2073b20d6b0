"""Trace how the equilibria of the collaborate/defect game merge as risk aversion grows."""
import argparse

import numpy as np

from rqe_lab.finite import free_riding_bound, merge_point, tau_scan
from rqe_lab.games import make_example_coordination_game

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--eps", type=float, default=0.2)
ap.add_argument("--tau-max", type=float, default=8.0)
ap.add_argument("--starts", type=int, default=64)
args = ap.parse_args()

game = make_example_coordination_game()
rows = tau_scan(game, args.eps, np.round(np.arange(0, args.tau_max + 1e-9, 0.5), 10), args.starts)
print(f"{'tau':>5} {'#eq':>4} {'max fr':>8} {'bound':>8}  collaborate probabilities")
for r in rows:
    probs = "  ".join(f"({p1:.3f},{p2:.3f})" for p1, p2 in r.collaborate_probs)
    print(f"{r.tau:5.1f} {len(r.equilibria):4d} {r.max_degree:8.4f} {free_riding_bound(game, args.eps, r.tau):8.3f}  "
          f"{probs}")
print(f"single equilibrium from tau = {merge_point(rows)}")
