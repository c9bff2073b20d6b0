"""Risk-averse quantal responses and equilibria of finite 2-player collaborative games.

The best response of player ``i`` to an opponent strategy ``y`` maximises::

    -(1/tau) log E_{j~y} exp(-tau (R_i^T x)_j) - <c, x> - eps * sum_a x_a log x_a

which is strictly concave in ``x``. Its stationarity condition is the logit
fixed point ``x = softmax((R_i p*(x) - c) / eps)``, where ``p*(x)`` is the Gibbs
worst-case adversary. We solve it by damped Newton iteration on logits; all
internal kernels are batched over a leading axis so that many starting points
can be driven at once.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .games import FiniteCollabGame, MixedStrategy, RiskProfile, free_riding_degree
from .risk import entropic_risk_value, log_softmax, neg_entropy, softmax

DEFAULT_TOL = 1e-10
DEFAULT_DEDUP_TOL = 1e-3
DAMPING = 0.5


# ---------------------------------------------------------------------------
# batched best-response kernel
# ---------------------------------------------------------------------------

def _adversary(R_i: np.ndarray, x: np.ndarray, y: np.ndarray, tau: float) -> np.ndarray:
    """Gibbs tilt of ``y`` against the conditional shared reward ``x @ R_i``; shape (B, m)."""
    z = np.log(np.maximum(y, 1e-300)) - tau * (x @ R_i)
    return softmax(z)


def _logit_map(R_i, c, x, y, tau, eps):
    p = _adversary(R_i, x, y, tau)
    return (p @ R_i.T - c) / eps, p


def _qbr_batch(R_i, c, y, tau, eps, logits=None, tol=1e-13, max_iter=100):
    """Solve the best-response logit fixed point for a batch of opponents ``y`` (B, m).

    Returns ``(x, logits, residual, iterations)``. ``logits`` is a warm start.
    """
    y = np.atleast_2d(y)
    if tau == 0:
        l = (y @ R_i.T - c) / eps
        return softmax(l), l, np.zeros(len(y)), 0
    if logits is None:
        logits = (y @ R_i.T - c) / eps
    l = np.array(logits, dtype=float, copy=True)
    n = R_i.shape[0]
    eye = np.eye(n)

    def resid(l_):
        x_ = softmax(l_)
        T, p_ = _logit_map(R_i, c, x_, y, tau, eps)
        return l_ - T, x_, p_

    F, x, p = resid(l)
    fnorm = np.abs(F).max(axis=1)
    it = 0
    while it < max_iter and fnorm.max() > tol:
        it += 1
        # J = I + (tau/eps) R Cov_p R^T Cov_x, invertible since both covariances are PSD
        cov_p = p[:, :, None] * np.eye(p.shape[1]) - p[:, :, None] * p[:, None, :]
        cov_x = x[:, :, None] * eye - x[:, :, None] * x[:, None, :]
        M = (tau / eps) * np.einsum("ij,bjk,lk->bil", R_i, cov_p, R_i)
        J = eye + M @ cov_x
        delta = np.linalg.solve(J, F[:, :, None])[:, :, 0]
        step = np.ones(len(l))
        active = fnorm > tol
        for _ in range(40):
            cand = l - step[:, None] * delta
            Fc, xc, pc = resid(cand)
            fc = np.abs(Fc).max(axis=1)
            ok = (fc < fnorm) | ~active
            upd = ok & active
            l[upd], F[upd], x[upd], p[upd], fnorm[upd] = cand[upd], Fc[upd], xc[upd], pc[upd], fc[upd]
            active = active & ~ok
            if not active.any():
                break
            step[active] *= 0.5
        else:
            break  # no further progress possible at machine precision
    return softmax(l), l, fnorm, it


def _prep(game: FiniteCollabGame, i: int):
    return game.reward_for(i), game.private_cost


def _as_probs(x) -> np.ndarray:
    return np.asarray(getattr(x, "probs", x), dtype=float)


def qbr_objective(game: FiniteCollabGame, i: int, x, x_opp, tau: float, eps: float) -> float:
    """Risk- and entropy-adjusted utility of playing ``x`` against ``x_opp``."""
    R_i, c = _prep(game, i)
    x, y = _as_probs(x), _as_probs(x_opp)
    v = x @ R_i
    risk = float(y @ v) if tau == 0 else entropic_risk_value(v, y, tau)
    return risk - float(c @ x) - eps * neg_entropy(x)


def risk_averse_qbr(game: FiniteCollabGame, i: int, x_opp, tau: float, eps: float,
                    tol: float = 1e-12, max_iter: int = 200) -> MixedStrategy:
    """Unique maximiser of the risk- and entropy-adjusted utility of player ``i``.

    At ``tau == 0`` this is exactly the quantal response ``softmax((R x_opp - c) / eps)``.
    Non-convergence is not fatal; the best iterate is returned.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    R_i, c = _prep(game, i)
    y = _as_probs(x_opp)[None, :]
    x, _, _, _ = _qbr_batch(R_i, c, y, tau, eps, tol=tol, max_iter=max_iter)
    x = x[0]
    return MixedStrategy(x / x.sum())


# ---------------------------------------------------------------------------
# equilibria
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RqeSolveReport:
    strategies: tuple[MixedStrategy, MixedStrategy]
    residual: float
    iterations: int
    converged: bool


def _solve_batch(game, profile, X1, X2, tol, max_iter, damping=DAMPING):
    """Damped simultaneous best-response iteration for a batch of start pairs.

    Returns ``(X1, X2, residual, iterations, converged)`` arrays.
    """
    tau1, tau2 = (float(t) for t in profile.tau[:2])
    eps1, eps2 = (float(e) for e in profile.eps[:2])
    R1, c = _prep(game, 0)
    R2, _ = _prep(game, 1)
    X1 = np.array(X1, dtype=float)
    X2 = np.array(X2, dtype=float)
    B = len(X1)
    res = np.full(B, np.inf)
    iters = np.zeros(B, dtype=int)
    done = np.zeros(B, dtype=bool)
    L1 = L2 = None
    for k in range(max_iter + 1):
        act = ~done
        if not act.any():
            break
        b1, l1, _, _ = _qbr_batch(R1, c, X2[act], tau1, eps1, None if L1 is None else L1[act])
        b2, l2, _, _ = _qbr_batch(R2, c, X1[act], tau2, eps2, None if L2 is None else L2[act])
        if L1 is None:
            L1, L2 = np.zeros_like(X1), np.zeros_like(X2)
        L1[act], L2[act] = l1, l2
        r = np.maximum(np.abs(b1 - X1[act]).max(axis=1), np.abs(b2 - X2[act]).max(axis=1))
        res[act] = r
        iters[act] = k
        fin = r <= tol
        idx = np.flatnonzero(act)
        done[idx[fin]] = True
        if k == max_iter:
            break
        mov = idx[~fin]
        X1[mov] = (1 - damping) * X1[mov] + damping * b1[~fin]
        X2[mov] = (1 - damping) * X2[mov] + damping * b2[~fin]
    return X1, X2, res, iters, done


def solve_rqe(game: FiniteCollabGame, profile: RiskProfile, init=None,
              tol: float = DEFAULT_TOL, max_iter: int = 20000) -> RqeSolveReport:
    """Find an RQE by damped simultaneous best responses from ``init``.

    Simultaneous (rather than alternating) updates keep symmetric starts on
    symmetric games exactly symmetric.
    """
    n = game.n_actions
    if init is None:
        init = (np.full(n, 1 / n), np.full(n, 1 / n))
    x1, x2 = (_as_probs(s) for s in init)
    X1, X2, res, it, conv = _solve_batch(game, profile, x1[None], x2[None], tol, max_iter)
    return RqeSolveReport(
        (MixedStrategy(X1[0] / X1[0].sum()), MixedStrategy(X2[0] / X2[0].sum())),
        float(res[0]), int(it[0]), bool(conv[0]))


def verify_rqe(game: FiniteCollabGame, x1, x2, profile: RiskProfile) -> float:
    """Best-response gap ``max_i |BR_i(x_-i) - x_i|_inf``; zero exactly at an RQE."""
    x1, x2 = _as_probs(x1), _as_probs(x2)
    b1 = risk_averse_qbr(game, 0, x2, float(profile.tau[0]), float(profile.eps[0])).probs
    b2 = risk_averse_qbr(game, 1, x1, float(profile.tau[1]), float(profile.eps[1])).probs
    return float(max(np.abs(b1 - x1).max(), np.abs(b2 - x2).max()))


def _start_pairs(n: int, n_starts: int, rng: np.random.Generator):
    uni = np.full(n, 1 / n)
    starts = [(uni, uni)]
    kappa = 0.1
    corners = [(1 - kappa) * np.eye(n)[a] + kappa * uni for a in sorted({0, n - 1})]
    starts += [(a, b) for a in corners for b in corners]
    starts = starts[:n_starts]
    k = n_starts - len(starts)
    if k > 0:
        D = rng.dirichlet(np.ones(n), size=(k, 2))
        starts += [(d[0], d[1]) for d in D]
    X1 = np.array([s[0] for s in starts])
    X2 = np.array([s[1] for s in starts])
    return X1, X2


def _dedup(X1, X2, res, dedup_tol):
    order = np.argsort(-X1[:, 0], kind="stable")
    keep: list[int] = []
    for j in order:
        z = np.concatenate([X1[j], X2[j]])
        if all(np.abs(z - np.concatenate([X1[k], X2[k]])).max() >= dedup_tol for k in keep):
            keep.append(j)
    keep.sort(key=lambda j: (-X1[j, 0], X2[j, 0]))
    return [(MixedStrategy(X1[j] / X1[j].sum()), MixedStrategy(X2[j] / X2[j].sum())) for j in keep], \
        [float(res[j]) for j in keep]


def enumerate_rqe(game: FiniteCollabGame, profile: RiskProfile, n_starts: int = 64, seed=0,
                  tol: float = DEFAULT_TOL, dedup_tol: float = DEFAULT_DEDUP_TOL,
                  max_iter: int = 20000, extra_starts=None, return_residuals: bool = False):
    """Multi-start search for distinct RQE.

    Starts are, in order: the uniform pair, the near-corner pairs built from the
    first and last actions, then Dirichlet(1, ..., 1) draws. Only converged runs
    are kept; runs closer than ``dedup_tol`` in the inf-norm are merged.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    rng = np.random.default_rng(seed)
    X1, X2 = _start_pairs(game.n_actions, n_starts, rng)
    if extra_starts:
        X1 = np.vstack([np.array([_as_probs(a) for a, _ in extra_starts]), X1])
        X2 = np.vstack([np.array([_as_probs(b) for _, b in extra_starts]), X2])
    X1, X2, res, _, conv = _solve_batch(game, profile, X1, X2, tol, max_iter)
    eqs, residuals = _dedup(X1[conv], X2[conv], res[conv], dedup_tol)
    return (eqs, residuals) if return_residuals else eqs


# ---------------------------------------------------------------------------
# tau scans and free-riding bounds
# ---------------------------------------------------------------------------

@dataclass
class TauScanRow:
    tau: float
    equilibria: list = field(default_factory=list)
    degrees: list = field(default_factory=list)
    collaborate_probs: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    @property
    def max_degree(self) -> float:
        return max(self.degrees) if self.degrees else float("nan")


def tau_scan(game: FiniteCollabGame, eps: float, tau_grid, n_starts: int = 64, seed=0,
             tol: float = DEFAULT_TOL, dedup_tol: float = DEFAULT_DEDUP_TOL,
             max_iter: int = 20000) -> list[TauScanRow]:
    """Enumerate RQE along a sorted grid of risk-aversion levels.

    Each row is warm-started from the previous row's equilibria plus fresh
    multi-starts drawn from a per-row seed stream.
    """
    grid = np.asarray(tau_grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("tau_grid must be sorted")
    rows: list[TauScanRow] = []
    prev: list = []
    ss = np.random.SeedSequence(seed)
    for tau, child in zip(grid, ss.spawn(len(grid))):
        profile = RiskProfile.shared(tau, eps)
        eqs, res = enumerate_rqe(game, profile, n_starts, np.random.default_rng(child), tol,
                                 dedup_tol, max_iter, extra_starts=prev, return_residuals=True)
        rows.append(TauScanRow(
            float(tau), eqs,
            [free_riding_degree(game, a, b) for a, b in eqs],
            [(float(a.probs[0]), float(b.probs[0])) for a, b in eqs],
            res))
        prev = eqs
    return rows


def merge_point(rows: list[TauScanRow]) -> float | None:
    """Smallest grid value from which every later row has a single equilibrium."""
    tau_star = None
    for row in reversed(rows):
        if len(row.equilibria) != 1:
            break
        tau_star = row.tau
    return tau_star


def write_tau_scan_csv(rows: list[TauScanRow], path, header_comment: str | None = None) -> None:
    """One line per (tau, equilibrium); 2-action columns as documented, wider games append extra ``x*_k``."""
    n = len(rows[0].equilibria[0][0]) if rows and rows[0].equilibria else 2
    cols = ["tau", "eq_index"] + [f"x1_{k}" for k in range(n)] + [f"x2_{k}" for k in range(n)] \
        + ["delta", "collab_prob_1", "collab_prob_2", "residual"]
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            for k, ((a, b), d, (p1, p2), r) in enumerate(
                    zip(row.equilibria, row.degrees, row.collaborate_probs, row.residuals)):
                w.writerow([repr(row.tau), k, *(repr(float(v)) for v in a.probs),
                            *(repr(float(v)) for v in b.probs), repr(d), repr(p1), repr(p2), repr(r)])


def free_riding_threshold(game: FiniteCollabGame, eps: float, delta: float) -> float:
    """Risk-aversion level above which no RQE has free-riding degree above ``delta``.

    ``2 (eps log n + v_spread) (c_max - c_min)^2 / (eps delta^2)``; zero for constant costs.
    """
    if delta <= 0 or eps <= 0:
        raise ValueError("delta and eps must be positive")
    spread = game.c_max - game.c_min
    if spread == 0:
        return 0.0
    n = game.n_actions
    return 2 * (eps * np.log(n) + game.v_spread) * spread ** 2 / (eps * delta ** 2)


def free_riding_bound(game: FiniteCollabGame, eps: float, tau: float) -> float:
    """Largest free-riding degree any RQE at risk aversion ``tau`` can have."""
    if tau <= 0:
        return float("inf")
    spread = game.c_max - game.c_min
    return float(spread * np.sqrt(2 * (eps * np.log(game.n_actions) + game.v_spread) / (eps * tau)))


def min_support_mass(game: FiniteCollabGame, eps: float) -> float:
    """Lower bound ``exp(-v_spread / eps) / n`` on every entry of an RQE strategy."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return float(np.exp(-game.v_spread / eps) / game.n_actions)
