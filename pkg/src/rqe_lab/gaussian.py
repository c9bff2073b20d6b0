"""Gaussian RQE of quadratic aggregative games.

Against Gaussian opponents, the risk-averse quantal best response of a
quadratic game is Gaussian with a covariance that does not depend on the risk
level, and a mean that is affine in the opponents' means. Equilibria are
therefore the Nash equilibria of a quadratic "game of the means", found here by
one dense linear solve.

Player ``i``'s utility is written in block form over ``(a_i, a_-i)``::

    H_ii = H - rho_i I,  H_i,-i = [H ... H],  H_-i,-i = ones(N-1, N-1) ⊗ H,
    h_i = h,             h_-i = [h ... h].
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .games import QuadraticAggregativeGame, RiskProfile

EIG_TOL = 1e-10
COND_LIMIT = 1e12


class InfiniteRisk(ValueError):
    """The opponents' tilted precision is not positive definite: entropic risk diverges."""


class SingularSystem(np.linalg.LinAlgError):
    """The first-order system of the game of the means is numerically singular."""


@dataclass(frozen=True)
class GaussianStrategy:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.array(self.mean, dtype=float))
        S = np.atleast_2d(np.array(self.cov, dtype=float))
        if S.shape != (m.size, m.size):
            raise ValueError("covariance shape does not match mean")
        if np.abs(S - S.T).max() > 1e-10:
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(S).min() <= 0:
            raise ValueError("covariance must be positive definite")
        m.setflags(write=False)
        S.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", S)


@dataclass(frozen=True)
class GaussianRqeReport:
    strategies: list = field(default_factory=list)
    valid: bool = False
    shared_reward: float = float("nan")
    private_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))


# ---------------------------------------------------------------------------
# block assembly
# ---------------------------------------------------------------------------

def _blocks(game: QuadraticAggregativeGame, i: int):
    n, N = game.dim, game.n_players
    H, h = game.H, game.h
    H_ii = H - game.rho[i] * np.eye(n)
    H_io = np.tile(H, (1, N - 1))
    H_oo = np.kron(np.ones((N - 1, N - 1)), H)
    h_o = np.tile(h, N - 1)
    return H_ii, H_io, H_oo, h, h_o


def _others(i: int, N: int) -> list[int]:
    return [j for j in range(N) if j != i]


def best_response_covariance(game: QuadraticAggregativeGame, i: int, eps_i: float) -> np.ndarray:
    """``-eps_i H_ii^{-1} = eps_i (rho_i I - H)^{-1}``, independent of risk aversion."""
    H_ii = game.H - game.rho[i] * np.eye(game.dim)
    S = -eps_i * np.linalg.inv(H_ii)
    return 0.5 * (S + S.T)


def _block_diag(mats) -> np.ndarray:
    n = sum(m.shape[0] for m in mats)
    out = np.zeros((n, n))
    k = 0
    for m in mats:
        d = m.shape[0]
        out[k:k + d, k:k + d] = m
        k += d
    return out


def _tilted_precision(game, i, covs, tau_i):
    """``P_-i = Sigma_-i^{-1} / tau_i + H_-i,-i`` (requires ``tau_i > 0``)."""
    _, _, H_oo, _, _ = _blocks(game, i)
    S_inv = _block_diag([np.linalg.inv(covs[j]) for j in _others(i, game.n_players)])
    P = S_inv / tau_i + H_oo
    return 0.5 * (P + P.T)


def _response_terms(game, i, covs, tau_i):
    """Coefficients of the affine best-response mean ``A_i m_i = b_i + C_i m_-i``.

    Uses ``K = (I + tau Sigma_-i H_-i,-i)^{-1}`` so the expressions stay finite at ``tau = 0``.
    """
    H_ii, H_io, H_oo, h_i, h_o = _blocks(game, i)
    S_o = _block_diag([covs[j] for j in _others(i, game.n_players)])
    K = np.linalg.inv(np.eye(S_o.shape[0]) + tau_i * S_o @ H_oo)
    A = -H_ii + tau_i * H_io @ K @ S_o @ H_io.T
    C = H_io @ K
    b = h_i - tau_i * H_io @ K @ S_o @ h_o
    return A, b, C


def _check_finite_risk(game, i, covs, tau_i):
    if tau_i > 0:
        lam = np.linalg.eigvalsh(_tilted_precision(game, i, covs, tau_i)).min()
        if lam <= EIG_TOL:
            raise InfiniteRisk(f"player {i}: tilted precision has eigenvalue {lam:.3g} <= 0")


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def gaussian_best_response(game: QuadraticAggregativeGame, i: int, others, tau_i: float,
                           eps_i: float) -> GaussianStrategy:
    """Risk-averse quantal best response of player ``i`` to Gaussian opponents.

    ``others`` lists the other players' strategies in player order (``i`` skipped),
    or all ``N`` strategies, in which case entry ``i`` is ignored.
    """
    N = game.n_players
    if not 0 <= i < N:
        raise IndexError(f"player index {i} out of range")
    others = list(others)
    if len(others) == N - 1:
        others = others[:i] + [None] + others[i:]
    if len(others) != N:
        raise ValueError("need one strategy per other player")
    covs = [None if s is None else s.cov for s in others]
    _check_finite_risk(game, i, covs, tau_i)
    A, b, C = _response_terms(game, i, covs, tau_i)
    m_o = np.concatenate([others[j].mean for j in _others(i, N)])
    mean = np.linalg.solve(A, b + C @ m_o)
    return GaussianStrategy(mean, best_response_covariance(game, i, eps_i))


def validity_condition(game: QuadraticAggregativeGame, profile: RiskProfile) -> bool:
    """True iff every player's tilted opponent precision is positive definite."""
    covs = [best_response_covariance(game, j, profile.eps[j]) for j in range(game.n_players)]
    for i in range(game.n_players):
        tau = float(profile.tau[i])
        if tau > 0 and np.linalg.eigvalsh(_tilted_precision(game, i, covs, tau)).min() <= EIG_TOL:
            return False
    return True


def _foc_system(game, profile):
    n, N = game.dim, game.n_players
    covs = [best_response_covariance(game, j, profile.eps[j]) for j in range(N)]
    G = np.zeros((n * N, n * N))
    rhs = np.zeros(n * N)
    for i in range(N):
        A, b, C = _response_terms(game, i, covs, float(profile.tau[i]))
        sl = slice(i * n, (i + 1) * n)
        G[sl, sl] = A
        rhs[sl] = b
        for k, j in enumerate(_others(i, N)):
            G[sl, j * n:(j + 1) * n] = -C[:, k * n:(k + 1) * n]
    return G, rhs, covs


def solve_gaussian_rqe(game: QuadraticAggregativeGame, profile: RiskProfile) -> GaussianRqeReport:
    """Gaussian RQE via the stacked first-order conditions of the game of the means.

    Raises :class:`InfiniteRisk` when the validity condition fails and
    :class:`SingularSystem` when the system's condition number exceeds 1e12.
    """
    if profile.n_players != game.n_players:
        raise ValueError("profile must have one entry per player")
    if not validity_condition(game, profile):
        raise InfiniteRisk("validity condition violated: risk is infinite for some player")
    G, rhs, covs = _foc_system(game, profile)
    if np.linalg.cond(G) > COND_LIMIT:
        raise SingularSystem("first-order system is numerically singular")
    m = np.linalg.solve(G, rhs).reshape(game.n_players, game.dim)
    strategies = [GaussianStrategy(m[i], covs[i]) for i in range(game.n_players)]
    return GaussianRqeReport(strategies, True, expected_shared_reward(game, strategies),
                             expected_private_costs(game, strategies))


def iterate_gaussian_rqe(game: QuadraticAggregativeGame, profile: RiskProfile, damping: float = 0.5,
                         tol: float = 1e-14, max_iter: int = 100000):
    """Damped simultaneous best-response iteration on the means.

    Returns ``(strategies, converged)``. Used to cross-check the linear solve.
    """
    N = game.n_players
    covs = [best_response_covariance(game, j, profile.eps[j]) for j in range(N)]
    strategies = [GaussianStrategy(np.zeros(game.dim), covs[j]) for j in range(N)]
    for _ in range(max_iter):
        br = [gaussian_best_response(game, i, strategies, profile.tau[i], profile.eps[i]) for i in range(N)]
        new = [(1 - damping) * s.mean + damping * b.mean for s, b in zip(strategies, br)]
        step = max(np.abs(a - s.mean).max() for a, s in zip(new, strategies))
        strategies = [GaussianStrategy(a, covs[j]) for j, a in enumerate(new)]
        if step < tol:
            return strategies, True
    return strategies, False


def expected_shared_reward(game: QuadraticAggregativeGame, strategies) -> float:
    """``E[R]`` for independent Gaussian strategies, including the target-form constant."""
    m = sum(s.mean for s in strategies)
    S = sum(s.cov for s in strategies)
    return float(0.5 * (m @ game.H @ m + np.trace(game.H @ S)) + game.h @ m + game.reward_offset)


def expected_private_costs(game: QuadraticAggregativeGame, strategies) -> np.ndarray:
    return np.array([0.5 * game.rho[i] * (s.mean @ s.mean + np.trace(s.cov))
                     for i, s in enumerate(strategies)])


def monotonicity_scan(game: QuadraticAggregativeGame, eps: float, tau_grid) -> list[dict]:
    """Solve the Gaussian RQE along a sorted tau grid with player-shared ``(tau, eps)``.

    Invalid tau values produce a row with ``valid=False`` and NaN statistics.
    """
    rows = []
    N = game.n_players
    for tau in np.asarray(tau_grid, dtype=float):
        profile = RiskProfile.shared(tau, eps, N)
        row = {"tau": float(tau), "valid": False, "J": float("nan"),
               "costs": np.full(N, np.nan), "utilities": np.full(N, np.nan),
               "means": np.full((N, game.dim), np.nan)}
        try:
            rep = solve_gaussian_rqe(game, profile)
        except (InfiniteRisk, SingularSystem):
            rows.append(row)
            continue
        row.update(valid=True, J=rep.shared_reward, costs=rep.private_costs,
                   utilities=rep.shared_reward - rep.private_costs,
                   means=np.array([s.mean for s in rep.strategies]))
        rows.append(row)
    return rows


def write_monotonicity_csv(rows: list[dict], path, header_comment: str | None = None) -> None:
    N, n = rows[0]["means"].shape
    cols = ["tau", "valid", "J"] + [f"cost_{i + 1}" for i in range(N)] \
        + [f"utility_{i + 1}" for i in range(N)] \
        + [f"mean_{i + 1}_{k}" for i in range(N) for k in range(n)]
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(r["tau"]), int(r["valid"]), repr(float(r["J"])),
                        *(repr(float(v)) for v in r["costs"]),
                        *(repr(float(v)) for v in r["utilities"]),
                        *(repr(float(v)) for v in np.ravel(r["means"]))])
