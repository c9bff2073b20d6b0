"""Zero-shot pairing of independently trained agents.

An *agent* here is one training run: the pair of tables it produced for slot 1
and slot 2. Cross-play entry ``(i, j)`` pairs run ``i``'s slot-1 policy with run
``j``'s slot-2 policy, so the diagonal replays each run with its own training
partner.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .overcooked import GridConfig
from .train import GridEnv, PolicyParams, _Sampler


@dataclass(frozen=True)
class TrainedAgent:
    agent_id: str
    label: str
    policies: tuple

    def __post_init__(self):
        if len(self.policies) != 2:
            raise ValueError("an agent holds one policy per slot")


@dataclass(frozen=True)
class CrossPlayMatrix:
    agent_ids: list
    labels: list
    values: np.ndarray
    stds: np.ndarray
    episodes: int
    episode_len: int

    def __post_init__(self):
        n = len(self.agent_ids)
        if self.values.shape != (n, n) or self.stds.shape != (n, n) or len(self.labels) != n:
            raise ValueError("cross-play matrix must be square with one label per agent")


@dataclass(frozen=True)
class PairEvaluation:
    team_return: np.ndarray
    private_cost_1: np.ndarray
    private_cost_2: np.ndarray

    @property
    def mean_return(self) -> float:
        return float(self.team_return.mean())


def evaluate_pair(policy_a: PolicyParams, policy_b: PolicyParams, env_config: GridConfig,
                  episodes: int, episode_len: int, seed) -> PairEvaluation:
    """Roll out ``episodes`` fixed-length episodes without touching the policies.

    ``seed`` may be an int or a :class:`numpy.random.SeedSequence`.
    """
    n_obs = env_config.n_observations
    for p in (policy_a, policy_b):
        if p.logits.shape[0] != n_obs:
            raise ValueError("policy table does not match the environment's observation space")
    cfg = replace(env_config, episode_len=episode_len)
    env_ss, act_ss = np.random.SeedSequence(seed).spawn(2) if not isinstance(seed, np.random.SeedSequence) \
        else seed.spawn(2)
    env = GridEnv(cfg, env_ss)
    rng = np.random.default_rng(act_ss)
    samplers = (_Sampler(policy_a), _Sampler(policy_b))
    ret = np.zeros(episodes)
    c1 = np.zeros(episodes)
    c2 = np.zeros(episodes)
    for e in range(episodes):
        us = rng.random((episode_len, 2)).tolist()
        for t in range(episode_len):
            a0 = samplers[0](env.observe(0), us[t][0])
            a1 = samplers[1](env.observe(1), us[t][1])
            res, _ = env.step(a0, a1)
            ret[e] += res.r1 + res.r2
            c1[e] -= res.private[0]
            c2[e] -= res.private[1]
    return PairEvaluation(ret, c1, c2)


def _worker_count(requested: int | None) -> int:
    cap = os.environ.get("RQE_LAB_THREADS")
    n = requested if requested is not None else 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def _cell(args):
    pa, pb, cfg, episodes, episode_len, ss = args
    ev = evaluate_pair(pa, pb, cfg, episodes, episode_len, ss)
    return ev.mean_return, float(ev.team_return.std(ddof=1)) if episodes > 1 else 0.0


def cross_play(agents: list, env_config: GridConfig, episodes: int = 100, episode_len: int = 100,
               seed: int = 0, workers: int | None = None) -> CrossPlayMatrix:
    """Mean team return for every (slot-1 agent, slot-2 agent) combination.

    Each cell has its own seed derived from ``(seed, i, j)``, so results do not
    depend on the number of workers.
    """
    n = len(agents)
    jobs = [(agents[i].policies[0], agents[j].policies[1], env_config, episodes, episode_len,
             np.random.SeedSequence([seed, i, j])) for i in range(n) for j in range(n)]
    k = _worker_count(workers)
    if k > 1:
        with ProcessPoolExecutor(k) as pool:
            out = list(pool.map(_cell, jobs))
    else:
        out = [_cell(j) for j in jobs]
    vals = np.array([o[0] for o in out]).reshape(n, n)
    stds = np.array([o[1] for o in out]).reshape(n, n)
    return CrossPlayMatrix([a.agent_id for a in agents], [a.label for a in agents], vals, stds,
                           episodes, episode_len)


def _groups_from_labels(labels) -> dict:
    groups: dict[str, list] = {}
    for k, lab in enumerate(labels):
        groups.setdefault(lab, []).append(k)
    return groups


def tp_cp_stats(matrix: CrossPlayMatrix, groups: dict | None = None) -> dict:
    """Training (diagonal) versus cross-play (intra-group off-diagonal) summary per group."""
    groups = groups or _groups_from_labels(matrix.labels)
    out = {}
    for name, idx in groups.items():
        idx = list(idx)
        tp = np.array([matrix.values[i, i] for i in idx])
        cp = np.array([matrix.values[i, j] for i in idx for j in idx if i != j])
        tp_mean = float(tp.mean()) if tp.size else float("nan")
        cp_mean = float(cp.mean()) if cp.size else float("nan")
        out[name] = {
            "tp_mean": tp_mean, "tp_std": float(tp.std()) if tp.size else float("nan"),
            "cp_mean": cp_mean, "cp_std": float(cp.std()) if cp.size else float("nan"),
            "drop": tp_mean - cp_mean,
        }
    return out


def free_riding_profile(agent: TrainedAgent, env_config: GridConfig, episodes: int = 100,
                        seed: int = 0, episode_len: int = 100) -> tuple[float, float, float]:
    """Mean per-episode private costs of the two slots and their absolute gap."""
    ev = evaluate_pair(agent.policies[0], agent.policies[1], env_config, episodes, episode_len, seed)
    c1, c2 = float(ev.private_cost_1.mean()), float(ev.private_cost_2.mean())
    return c1, c2, abs(c1 - c2)


def role_signs(agents: list, env_config: GridConfig, episodes: int = 100, seed: int = 0,
               episode_len: int = 100) -> np.ndarray:
    """``sign(cost_1 - cost_2)`` from each agent's self-play: +1 when slot 1 does the work."""
    profiles = [free_riding_profile(a, env_config, episodes, seed, episode_len) for a in agents]
    return np.array([np.sign(c1 - c2) for c1, c2, _ in profiles])


def checkerboard_score(matrix: CrossPlayMatrix, signs, members=None) -> float:
    """Mean off-diagonal return of complementary-role pairings minus that of same-role pairings.

    Pairing run ``i``'s slot 1 with run ``j``'s slot 2 combines complementary roles
    exactly when both runs put the worker in the same slot (equal signs).
    """
    signs = np.asarray(signs)
    idx = range(len(signs)) if members is None else members
    mixed, same = [], []
    for i in idx:
        for j in idx:
            if i == j:
                continue
            (mixed if signs[i] == signs[j] else same).append(matrix.values[i, j])
    if not mixed or not same:
        return float("nan")
    return float(np.mean(mixed) - np.mean(same))


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def write_matrix_csv(matrix: CrossPlayMatrix, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent"] + list(matrix.agent_ids))
        for aid, row in zip(matrix.agent_ids, matrix.values):
            w.writerow([aid] + [repr(float(v)) for v in row])


def write_long_csv(matrix: CrossPlayMatrix, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent_i", "agent_j", "mean", "std", "episodes"])
        n = len(matrix.agent_ids)
        for i in range(n):
            for j in range(n):
                w.writerow([matrix.agent_ids[i], matrix.agent_ids[j], repr(float(matrix.values[i, j])),
                            repr(float(matrix.stds[i, j])), matrix.episodes])


def write_stats_json(stats: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
