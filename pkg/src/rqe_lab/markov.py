"""Exact tabular evaluation of two-player risk-adjusted Markov games.

Player ``i`` picks actions from ``pi[i]`` and faces an adversary ``p[i]`` that
chooses the *opponent's* action. The adversary pays ``KL(p_i, pi_-i) / tau_i``
per state for deviating from the real opponent and the player earns an
entropy bonus ``-eps_i * negH(pi_i)``. The player maximizes the resulting
return and the adversary minimizes it.

Every routine works on a "player view": rewards and transitions are transposed
so that the player's own action is always the first action axis. Public
outputs that are indexed by joint actions keep the ``(state, a1, a2)`` order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .games import RiskProfile
from .risk import kl_divergence, neg_entropy, softmax

ROW_ATOL = 1e-12


class SupportViolation(ValueError):
    """An adversary row puts mass where the real opponent never acts: infinite KL."""


def _stochastic(a: np.ndarray, name: str) -> np.ndarray:
    a = np.array(a, dtype=float)
    if np.any(a < 0) or np.abs(a.sum(axis=-1) - 1).max() > ROW_ATOL * 10:
        raise ValueError(f"{name} rows must be probability distributions")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TabularMarkovGame:
    """``transition[s, a1, a2, s']`` and ``rewards[i, s, a1, a2]`` in ``[0, 1]``."""

    transition: np.ndarray
    rewards: np.ndarray
    gamma: float
    rho0: np.ndarray

    def __post_init__(self):
        P = _stochastic(self.transition, "transition")
        if P.ndim != 4 or P.shape[0] != P.shape[3]:
            raise ValueError("transition must have shape (S, A1, A2, S)")
        r = np.array(self.rewards, dtype=float)
        if r.shape != (2,) + P.shape[:3]:
            raise ValueError("rewards must have shape (2, S, A1, A2)")
        if r.min() < 0 or r.max() > 1:
            raise ValueError("rewards must lie in [0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        r.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "rho0", _stochastic(self.rho0, "rho0"))
        if self.rho0.shape != (P.shape[0],):
            raise ValueError("rho0 must have one entry per state")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> tuple[int, int]:
        return self.transition.shape[1], self.transition.shape[2]

    def view(self, i: int):
        """``(r_i[s, own, opp], P[s, own, opp, s'])``."""
        if i == 0:
            return self.rewards[0], self.transition
        if i == 1:
            return self.rewards[1].transpose(0, 2, 1), self.transition.transpose(0, 2, 1, 3)
        raise IndexError("only players 0 and 1 exist")


@dataclass(frozen=True)
class TabularPolicyPair:
    """``pi[i][s, own]`` and adversaries ``p[i][s, opponent action]``."""

    pi: tuple
    p: tuple

    def __post_init__(self):
        pi = tuple(_stochastic(x, "policy") for x in self.pi)
        p = tuple(_stochastic(x, "adversary") for x in self.p)
        if len(pi) != 2 or len(p) != 2:
            raise ValueError("need two policies and two adversaries")
        if p[0].shape != pi[1].shape or p[1].shape != pi[0].shape:
            raise ValueError("adversary i must act over the opponent's action set")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "p", p)

    def replace(self, i: int, pi=None, p=None) -> TabularPolicyPair:
        pis, ps = list(self.pi), list(self.p)
        if pi is not None:
            pis[i] = pi
        if p is not None:
            ps[i] = p
        return TabularPolicyPair(tuple(pis), tuple(ps))


def _parts(mg, pols, i, profile):
    r, P = mg.view(i)
    return r, P, pols.pi[i], pols.p[i], pols.pi[1 - i], float(profile.tau[i]), float(profile.eps[i])


def _state_regularizer(pi, p, pi_opp, tau, eps) -> np.ndarray:
    kl = kl_divergence(p, pi_opp)
    if np.any(np.isinf(kl)):
        raise SupportViolation(f"adversary leaves the opponent's support at states {np.flatnonzero(np.isinf(kl))}")
    if tau <= 0:
        raise ValueError("tau must be positive for the adversarial evaluation")
    return kl / tau - eps * neg_entropy(pi)


def _policy_transition(P, pi, p) -> np.ndarray:
    return np.einsum("sa,sb,sabt->st", pi, p, P)


def _solve_value(mg, pols, i, profile):
    r, P, pi, p, pi_opp, tau, eps = _parts(mg, pols, i, profile)
    r_bar = np.einsum("sa,sb,sab->s", pi, p, r) + _state_regularizer(pi, p, pi_opp, tau, eps)
    M = np.eye(mg.n_states) - mg.gamma * _policy_transition(P, pi, p)
    return np.linalg.solve(M, r_bar)


def risk_adjusted_value(mg: TabularMarkovGame, pols: TabularPolicyPair, i: int,
                        profile: RiskProfile) -> np.ndarray:
    """Per-state regularized value of player ``i`` by an exact linear solve.

    Raises :class:`SupportViolation` when the KL regularizer is infinite.
    """
    return _solve_value(mg, pols, i, profile)


def _own_q(mg, pols, i, profile, V=None):
    r, P, *_ = _parts(mg, pols, i, profile)
    if V is None:
        V = _solve_value(mg, pols, i, profile)
    return r + mg.gamma * P @ V


def q_function(mg: TabularMarkovGame, pols: TabularPolicyPair, i: int, profile: RiskProfile) -> np.ndarray:
    """``Q_i[s, a1, a2] = r_i + gamma E[V_i(s')]`` in joint-action order."""
    Q = _own_q(mg, pols, i, profile)
    return Q if i == 0 else Q.transpose(0, 2, 1)


def bellman_residual(mg, pols, i, profile) -> float:
    """Max gap in ``V = pi^T Q p + KL/tau - eps negH`` over states."""
    _, _, pi, p, pi_opp, tau, eps = _parts(mg, pols, i, profile)
    V = _solve_value(mg, pols, i, profile)
    Q = _own_q(mg, pols, i, profile, V)
    rhs = np.einsum("sa,sb,sab->s", pi, p, Q) + _state_regularizer(pi, p, pi_opp, tau, eps)
    return float(np.abs(V - rhs).max())


def discounted_visitation(mg: TabularMarkovGame, pi_i, p_i, s0: int | None = None, i: int = 0) -> np.ndarray:
    """``(1 - gamma) sum_t gamma^t Pr(s_t = x)`` under ``pi_i x p_i``.

    ``s0=None`` starts from ``rho0``.
    """
    _, P = mg.view(i)
    start = mg.rho0 if s0 is None else np.eye(mg.n_states)[s0]
    M = np.eye(mg.n_states) - mg.gamma * _policy_transition(P, np.asarray(pi_i), np.asarray(p_i))
    d = (1 - mg.gamma) * np.linalg.solve(M.T, start)
    return np.maximum(d, 0.0)


def _score_gradient(weights, probs, q) -> np.ndarray:
    """``weights[x] * probs[x, c] * (q[x, c] - <probs[x], q[x]>)``."""
    centred = q - np.sum(probs * q, axis=1, keepdims=True)
    return weights[:, None] * probs * centred


def policy_gradient_pi(mg: TabularMarkovGame, pols: TabularPolicyPair, i: int, profile: RiskProfile,
                       s0: int | None = None) -> np.ndarray:
    """Gradient of the start-state value with respect to player ``i``'s per-state logits."""
    _, _, pi, p, _, _, eps = _parts(mg, pols, i, profile)
    Q = _own_q(mg, pols, i, profile)
    d = discounted_visitation(mg, pi, p, s0, i)
    q_eff = np.einsum("sab,sb->sa", Q, p) - eps * (np.log(pi) + 1.0)
    return _score_gradient(d / (1 - mg.gamma), pi, q_eff)


def policy_gradient_p(mg: TabularMarkovGame, pols: TabularPolicyPair, i: int, profile: RiskProfile,
                      s0: int | None = None) -> np.ndarray:
    """Gradient of the same value with respect to adversary ``i``'s per-state logits."""
    _, _, pi, p, pi_opp, tau, _ = _parts(mg, pols, i, profile)
    Q = _own_q(mg, pols, i, profile)
    d = discounted_visitation(mg, pi, p, s0, i)
    q_eff = np.einsum("sab,sa->sb", Q, pi) + (np.log(p) - np.log(pi_opp) + 1.0) / tau
    return _score_gradient(d / (1 - mg.gamma), p, q_eff)


def _visitation_matrix(mg, pi, p, i):
    _, P = mg.view(i)
    M = np.eye(mg.n_states) - mg.gamma * _policy_transition(P, pi, p)
    return (1 - mg.gamma) * np.linalg.inv(M)


def pdl_check_pi(mg: TabularMarkovGame, pols: TabularPolicyPair, i: int, profile: RiskProfile,
                 pi_alt) -> float:
    """Max over start states of ``|V(pi) - V(pi_alt) - advantage term|``."""
    alt = pols.replace(i, pi=pi_alt)
    _, _, pi, p, pi_opp, tau, eps = _parts(mg, pols, i, profile)
    V, V_alt = _solve_value(mg, pols, i, profile), _solve_value(mg, alt, i, profile)
    Q_alt = _own_q(mg, alt, i, profile, V_alt)
    adv = np.einsum("sa,sb,sab->s", pi, p, Q_alt) + _state_regularizer(pi, p, pi_opp, tau, eps) - V_alt
    rhs = _visitation_matrix(mg, pi, p, i) @ adv / (1 - mg.gamma)
    return float(np.abs(V - V_alt - rhs).max())


def pdl_check_p(mg: TabularMarkovGame, pols: TabularPolicyPair, i: int, profile: RiskProfile,
                p_alt) -> float:
    """Adversary-side counterpart of :func:`pdl_check_pi`."""
    alt = pols.replace(i, p=p_alt)
    _, _, pi, p, pi_opp, tau, eps = _parts(mg, pols, i, profile)
    V, V_alt = _solve_value(mg, pols, i, profile), _solve_value(mg, alt, i, profile)
    Q_alt = _own_q(mg, alt, i, profile, V_alt)
    adv = np.einsum("sa,sb,sab->s", pi, p, Q_alt) + _state_regularizer(pi, p, pi_opp, tau, eps) - V_alt
    rhs = _visitation_matrix(mg, pi, p, i) @ adv / (1 - mg.gamma)
    return float(np.abs(V - V_alt - rhs).max())


# ---------------------------------------------------------------------------
# random instances and the finite-difference sweep
# ---------------------------------------------------------------------------

def random_markov_game(rng: np.random.Generator, max_states: int = 4, max_actions: int = 3,
                       max_gamma: float = 0.9) -> TabularMarkovGame:
    S = int(rng.integers(2, max_states + 1))
    A1, A2 = (int(k) for k in rng.integers(2, max_actions + 1, size=2))
    P = rng.dirichlet(np.ones(S), size=(S, A1, A2))
    r = rng.uniform(0, 1, size=(2, S, A1, A2))
    return TabularMarkovGame(P, r, float(rng.uniform(0.1, max_gamma)), rng.dirichlet(np.ones(S)))


def random_policies(rng: np.random.Generator, mg: TabularMarkovGame) -> TabularPolicyPair:
    S, (A1, A2) = mg.n_states, mg.n_actions
    pi = (softmax(rng.normal(size=(S, A1))), softmax(rng.normal(size=(S, A2))))
    p = (softmax(rng.normal(size=(S, A2))), softmax(rng.normal(size=(S, A1))))
    return TabularPolicyPair(pi, p)


def finite_difference_gradient(mg, pols, i, profile, target: str, h: float = 1e-6) -> np.ndarray:
    """Central differences of the rho0-averaged value in the logits of ``pi_i`` or ``p_i``."""
    base = pols.pi[i] if target == "pi" else pols.p[i]
    logits = np.log(base)
    grad = np.zeros_like(logits)
    for idx in np.ndindex(*logits.shape):
        vals = []
        for sgn in (1.0, -1.0):
            z = logits.copy()
            z[idx] += sgn * h
            q = pols.replace(i, **{target: softmax(z)})
            vals.append(mg.rho0 @ _solve_value(mg, q, i, profile))
        grad[idx] = (vals[0] - vals[1]) / (2 * h)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def verify_markov_identities(n_instances: int = 20, seed: int = 0, grad_tol: float = 1e-4,
                         pdl_tol: float = 1e-8, fault: str | None = None) -> dict:
    """Check both policy gradients against finite differences and both PDL identities.

    ``fault="sign_flip"`` negates the analytic player gradient, a negative control
    that must make the report fail.
    """
    if fault not in (None, "sign_flip"):
        raise ValueError(f"unknown fault {fault!r}")
    rng = np.random.default_rng(seed)
    instances = []
    for k in range(n_instances):
        mg = random_markov_game(rng)
        pols = random_policies(rng, mg)
        profile = RiskProfile(rng.uniform(0.5, 5.0, 2), rng.uniform(0.05, 1.0, 2))
        i = int(rng.integers(0, 2))
        g_pi = policy_gradient_pi(mg, pols, i, profile)
        if fault == "sign_flip":
            g_pi = -g_pi
        g_p = policy_gradient_p(mg, pols, i, profile)
        alt = random_policies(rng, mg)
        row = {
            "instance": k, "player": i, "n_states": mg.n_states, "gamma": mg.gamma,
            "grad_pi_rel_err": relative_error(g_pi, finite_difference_gradient(mg, pols, i, profile, "pi")),
            "grad_p_rel_err": relative_error(g_p, finite_difference_gradient(mg, pols, i, profile, "p")),
            "pdl_pi_residual": pdl_check_pi(mg, pols, i, profile, alt.pi[i]),
            "pdl_p_residual": pdl_check_p(mg, pols, i, profile, alt.p[i]),
        }
        row["pass"] = bool(row["grad_pi_rel_err"] < grad_tol and row["grad_p_rel_err"] < grad_tol
                           and row["pdl_pi_residual"] < pdl_tol and row["pdl_p_residual"] < pdl_tol)
        instances.append(row)
    keys = ("grad_pi_rel_err", "grad_p_rel_err", "pdl_pi_residual", "pdl_p_residual")
    return {
        "seed": seed,
        "n_instances": n_instances,
        "fault": fault,
        "tolerances": {"gradient_rel": grad_tol, "pdl_abs": pdl_tol},
        "max": {k: max(r[k] for r in instances) for k in keys},
        "instances": instances,
        "pass": all(r["pass"] for r in instances),
    }


def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
