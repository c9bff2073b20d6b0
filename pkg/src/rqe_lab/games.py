"""Collaborative game families and their risk-neutral utilities.

Two families are supported:

* :class:`FiniteCollabGame` -- a 2-player finite game with a shared reward
  matrix ``R[a1, a2]`` and a private cost vector ``c`` common to both players.
* :class:`QuadraticAggregativeGame` -- an N-player continuous game whose shared
  reward depends on the aggregate action ``a_1 + ... + a_N``.

Action index 0 is always the "collaborate" action in the canonical examples.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

PROB_ATOL = 1e-12


def _frozen(a: Any, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def as_strategy(probs: Sequence[float] | np.ndarray, n: int | None = None) -> np.ndarray:
    """Validate a mixed strategy and return it as a float array."""
    x = np.asarray(probs, dtype=float)
    if x.ndim != 1:
        raise ValueError("mixed strategy must be a 1-d vector")
    if n is not None and x.shape[0] != n:
        raise ValueError(f"strategy has {x.shape[0]} entries, expected {n}")
    if np.any(x < -PROB_ATOL) or abs(x.sum() - 1.0) > 1e-9:
        raise ValueError(f"not a probability vector: {x}")
    return x


@dataclass(frozen=True)
class MixedStrategy:
    """A probability vector over a finite action set."""

    probs: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.probs, dtype=float)
        if x.ndim != 1 or np.any(x < 0) or abs(x.sum() - 1.0) > PROB_ATOL * max(1, x.size):
            raise ValueError(f"invalid mixed strategy {x}")
        object.__setattr__(self, "probs", _frozen(x))

    @classmethod
    def uniform(cls, n: int) -> MixedStrategy:
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def pure(cls, n: int, a: int) -> MixedStrategy:
        x = np.zeros(n)
        x[a] = 1.0
        return cls(x)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def __len__(self) -> int:
        return self.probs.shape[0]


def _probs(x) -> np.ndarray:
    return x.probs if isinstance(x, MixedStrategy) else np.asarray(x, dtype=float)


@dataclass(frozen=True)
class FiniteCollabGame:
    """Two-player finite game with utility ``u_i = R(a1, a2) - c(a_i)``."""

    shared_reward: np.ndarray
    private_cost: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        R = np.array(self.shared_reward, dtype=float)
        c = np.array(self.private_cost, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError("shared_reward must be a square n x n matrix")
        if c.shape != (R.shape[0],):
            raise ValueError("private_cost must have one entry per action")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(c))):
            raise ValueError("game entries must be finite")
        if self.symmetric and not np.array_equal(R, R.T):
            raise ValueError("symmetric flag set but R is not symmetric")
        object.__setattr__(self, "shared_reward", _frozen(R))
        object.__setattr__(self, "private_cost", _frozen(c))

    @property
    def n_actions(self) -> int:
        return self.shared_reward.shape[0]

    def reward_for(self, i: int) -> np.ndarray:
        """Shared reward indexed as ``[own action, opponent action]`` for player ``i``."""
        _check_player(i, 2)
        return self.shared_reward if i == 0 else self.shared_reward.T

    # spread constants used by the free-riding bounds
    @property
    def c_max(self) -> float:
        return float(self.private_cost.max())

    @property
    def c_min(self) -> float:
        return float(self.private_cost.min())

    @property
    def v_spread(self) -> float:
        """``v_max - v_min`` with ``v_min = min R - c_max`` and ``v_max = max R - c_min``."""
        v_min = self.shared_reward.min() - self.c_max
        v_max = self.shared_reward.max() - self.c_min
        return float(v_max - v_min)

    def to_dict(self) -> dict:
        return {
            "n_actions": self.n_actions,
            "shared_reward": self.shared_reward.ravel().tolist(),
            "private_cost": self.private_cost.tolist(),
            "symmetric": bool(self.symmetric),
        }

    @classmethod
    def from_dict(cls, d: dict) -> FiniteCollabGame:
        n = int(d["n_actions"])
        R = np.asarray(d["shared_reward"], dtype=float).reshape(n, n)
        return cls(R, np.asarray(d["private_cost"], dtype=float), bool(d.get("symmetric", False)))


def _check_player(i: int, n_players: int) -> None:
    if not 0 <= i < n_players:
        raise IndexError(f"player index {i} out of range for {n_players} players")


def utility(game: FiniteCollabGame, i: int, a1: int, a2: int) -> float:
    """Risk-neutral utility of player ``i`` at the pure action pair ``(a1, a2)``."""
    _check_player(i, 2)
    n = game.n_actions
    if not (0 <= a1 < n and 0 <= a2 < n):
        raise IndexError(f"action pair {(a1, a2)} out of range")
    own = a1 if i == 0 else a2
    return float(game.shared_reward[a1, a2] - game.private_cost[own])


def expected_utility(game: FiniteCollabGame, i: int, x1, x2) -> float:
    """``x1^T R x2 - <c, x_i>``."""
    _check_player(i, 2)
    p1, p2 = _probs(x1), _probs(x2)
    n = game.n_actions
    if p1.shape != (n,) or p2.shape != (n,):
        raise ValueError("strategy dimension does not match the game")
    own = p1 if i == 0 else p2
    return float(p1 @ game.shared_reward @ p2 - game.private_cost @ own)


def free_riding_degree(game: FiniteCollabGame, x1, x2) -> float:
    """Absolute gap between the two players' expected private costs."""
    c = game.private_cost
    return float(abs(c @ _probs(x1) - c @ _probs(x2)))


def make_example_coordination_game() -> FiniteCollabGame:
    """Collaborate/defect game: reward 1 unless both defect, collaborating costs 0.4."""
    R = np.array([[1.0, 1.0], [1.0, 0.0]])
    c = np.array([0.4, 0.0])
    return FiniteCollabGame(R, c, symmetric=True)


@dataclass(frozen=True)
class QuadraticAggregativeGame:
    """N-player game with reward ``1/2 <A, H A> + <h, A>``, ``A = sum_i a_i``.

    Player ``i`` pays ``rho_i / 2 * |a_i|^2``. When ``target`` is given the game
    was built from the form ``-1/2 |A - target|^2_Hbar`` with ``H = -Hbar`` and
    ``h = Hbar @ target``; the constant ``-1/2 <target, Hbar target>`` dropped
    by that conversion is tracked in :attr:`reward_offset`.
    """

    H: np.ndarray
    h: np.ndarray
    rho: np.ndarray
    target: np.ndarray | None = None

    def __post_init__(self):
        H = np.atleast_2d(np.array(self.H, dtype=float))
        h = np.atleast_1d(np.array(self.h, dtype=float))
        rho = np.atleast_1d(np.array(self.rho, dtype=float))
        n = H.shape[0]
        if H.shape != (n, n) or h.shape != (n,):
            raise ValueError("H must be n x n and h length n")
        if not np.allclose(H, H.T, atol=1e-12):
            raise ValueError("H must be symmetric")
        if np.linalg.eigvalsh(H).max() >= -1e-12:
            raise ValueError("H must be negative definite")
        if np.any(rho <= 0):
            raise ValueError("rho must be positive")
        object.__setattr__(self, "H", _frozen(H))
        object.__setattr__(self, "h", _frozen(h))
        object.__setattr__(self, "rho", _frozen(rho))
        if self.target is not None:
            t = np.atleast_1d(np.array(self.target, dtype=float))
            if t.shape != (n,):
                raise ValueError("target must have length n")
            object.__setattr__(self, "target", _frozen(t))

    @classmethod
    def from_target(cls, H_bar, target, rho) -> QuadraticAggregativeGame:
        """Build from the ``-1/2 |sum a - target|^2_Hbar`` form."""
        H_bar = np.atleast_2d(np.asarray(H_bar, dtype=float))
        target = np.atleast_1d(np.asarray(target, dtype=float))
        return cls(-H_bar, H_bar @ target, rho, target=target)

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    @property
    def n_players(self) -> int:
        return self.rho.shape[0]

    @property
    def H_bar(self) -> np.ndarray:
        return -self.H

    @property
    def reward_offset(self) -> float:
        if self.target is None:
            return 0.0
        return float(-0.5 * self.target @ self.H_bar @ self.target)

    def shared_reward(self, actions) -> float:
        """Shared reward at a joint action given as an ``(N, n)`` array."""
        A = np.asarray(actions, dtype=float).reshape(self.n_players, self.dim).sum(axis=0)
        return float(0.5 * A @ self.H @ A + self.h @ A + self.reward_offset)

    def private_cost(self, i: int, a_i) -> float:
        _check_player(i, self.n_players)
        a_i = np.asarray(a_i, dtype=float)
        return float(0.5 * self.rho[i] * a_i @ a_i)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "n_players": self.n_players,
            "H": self.H.ravel().tolist(),
            "h": self.h.tolist(),
            "rho": self.rho.tolist(),
            "target": None if self.target is None else self.target.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> QuadraticAggregativeGame:
        n = int(d["dim"])
        H = np.asarray(d["H"], dtype=float).reshape(n, n)
        rho = np.asarray(d["rho"], dtype=float)
        if "n_players" in d and len(rho) != int(d["n_players"]):
            raise ValueError("rho length must equal n_players")
        target = d.get("target")
        return cls(H, np.asarray(d["h"], dtype=float), rho,
                   None if target is None else np.asarray(target, dtype=float))


def make_example_force_game(a_bar: float) -> QuadraticAggregativeGame:
    """Two robots pushing an object to ``a_bar``: reward ``-1/2 (a1 + a2 - a_bar)^2``, cost ``a_i^2 / 2``."""
    return QuadraticAggregativeGame.from_target([[1.0]], [a_bar], [1.0, 1.0])


@dataclass(frozen=True)
class RiskProfile:
    """Per-player risk aversion ``tau`` and bounded rationality ``eps``.

    ``tau = 0`` is accepted as the explicit risk-neutral sentinel.
    """

    tau: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        tau = np.atleast_1d(np.array(self.tau, dtype=float))
        eps = np.atleast_1d(np.array(self.eps, dtype=float))
        if tau.shape != eps.shape:
            raise ValueError("tau and eps must have one entry per player")
        if np.any(tau < 0) or not np.all(np.isfinite(tau)):
            raise ValueError("tau must be finite and >= 0")
        if np.any(eps <= 0):
            raise ValueError("eps must be positive")
        object.__setattr__(self, "tau", _frozen(tau))
        object.__setattr__(self, "eps", _frozen(eps))

    @classmethod
    def shared(cls, tau: float, eps: float, n_players: int = 2) -> RiskProfile:
        return cls(np.full(n_players, float(tau)), np.full(n_players, float(eps)))

    @property
    def n_players(self) -> int:
        return self.tau.shape[0]


def load_game(path) -> FiniteCollabGame | QuadraticAggregativeGame:
    """Read either game family from its JSON document."""
    with open(path) as fh:
        d = json.load(fh)
    if "n_actions" in d:
        return FiniteCollabGame.from_dict(d)
    return QuadraticAggregativeGame.from_dict(d)


def save_game(game, path) -> None:
    with open(path, "w") as fh:
        json.dump(game.to_dict(), fh, indent=2)
