"""Train IPPO and SRPO populations on the gridworld and compare them in cross-play.

The defaults match the desk-scale acceptance experiment; shrink --steps or
--seeds for a quick look (a full run takes several minutes per method).
"""
import argparse

import numpy as np

from rqe_lab.crossplay import TrainedAgent, cross_play, free_riding_profile, tp_cp_stats
from rqe_lab.overcooked import GridConfig
from rqe_lab.train import TrainerConfig, train_ippo, train_srpo

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--seeds", type=int, default=5)
ap.add_argument("--steps", type=int, default=200_000)
ap.add_argument("--tau", type=float, default=10.0)
ap.add_argument("--eps", type=float, default=0.1)
ap.add_argument("--episodes", type=int, default=100)
args = ap.parse_args()

env = GridConfig()
agents = []
for method, trainer in (("ippo", train_ippo), ("srpo", train_srpo)):
    for s in range(args.seeds):
        res = trainer(TrainerConfig(total_steps=args.steps, seed=s, tau=args.tau, entropy_coef=args.eps), env)
        agents.append(TrainedAgent(f"{method}{s}", method, tuple(res.policies)))
        c1, c2, fr = free_riding_profile(agents[-1], env, args.episodes)
        print(f"{method} seed {s}: self-play costs {c1:.1f} / {c2:.1f}, free-riding degree {fr:.2f}")

M = cross_play(agents, env, episodes=args.episodes)
np.set_printoptions(precision=0, suppress=True, linewidth=160)
print(M.values)
for label, s in tp_cp_stats(M).items():
    print(f"{label}: training partner {s['tp_mean']:.1f}, cross-play {s['cp_mean']:.1f}, drop {s['drop']:.1f}")
