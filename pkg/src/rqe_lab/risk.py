"""Entropic risk, its Gibbs worst-case adversary, KL divergence and negative entropy.

All functions broadcast over leading axes; the last axis indexes outcomes.
Exponentials are always max-shifted so that ``tau * v`` in the hundreds is safe.
"""
from __future__ import annotations

import numpy as np

#: Returned by :func:`kl_divergence` when ``p`` is not absolutely continuous w.r.t. ``q``.
INFINITE_KL = float("inf")

PROB_FLOOR = 1e-300


def _arr(x) -> np.ndarray:
    return np.asarray(getattr(x, "probs", x), dtype=float)


def kl_divergence(p, q):
    """``sum_j p_j log(p_j / q_j)`` with ``0 log 0 = 0``; :data:`INFINITE_KL` on support violation."""
    p, q = _arr(p), _arr(q)
    if p.shape[-1] != q.shape[-1]:
        raise ValueError("dimension mismatch")
    p, q = np.broadcast_arrays(p, q)
    support = p > 0
    bad = np.any(support & (q <= 0), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(support, p * (np.log(np.maximum(p, PROB_FLOOR)) - np.log(np.maximum(q, PROB_FLOOR))), 0.0)
    out = np.where(bad, INFINITE_KL, np.maximum(terms.sum(axis=-1), 0.0))
    return float(out) if out.ndim == 0 else out


def neg_entropy(p):
    """``sum_j p_j log p_j``, in ``[-log n, 0]``."""
    p = _arr(p)
    out = np.sum(np.where(p > 0, p * np.log(np.maximum(p, PROB_FLOOR)), 0.0), axis=-1)
    return float(out) if out.ndim == 0 else out


def _check_tau(tau) -> None:
    if np.any(np.asarray(tau) <= 0):
        raise ValueError("tau must be positive")


def entropic_risk_value(v, x_opp, tau):
    """``-(1/tau) log sum_j x_opp_j exp(-tau v_j)``.

    Equals ``min_p <v, p> + KL(p, x_opp) / tau`` over the simplex.
    """
    _check_tau(tau)
    v, x = _arr(v), _arr(x_opp)
    tau = np.asarray(tau, dtype=float)
    support = x > 0
    # outcomes outside the support of x_opp carry no weight
    vmin = np.min(np.where(support, v, np.inf), axis=-1, keepdims=True)
    gap = np.where(support, v - vmin, 0.0)
    # log1p/expm1 keep the tiny-tau regime accurate: the sum below would round to 1
    s = np.sum(np.where(support, x * np.expm1(-tau[..., None] * gap), 0.0), axis=-1)
    out = vmin[..., 0] - np.log1p(s) / tau
    return float(out) if np.ndim(out) == 0 else out


def worst_case_adversary(v, x_opp, tau):
    """Minimiser of ``<v, p> + KL(p, x_opp) / tau``: ``p_j ∝ x_opp_j exp(-tau v_j)``."""
    _check_tau(tau)
    v, x = _arr(v), _arr(x_opp)
    tau = np.asarray(tau, dtype=float)
    support = x > 0
    z = np.where(support, np.log(np.maximum(x, PROB_FLOOR)) - tau[..., None] * v, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    w = np.where(support, np.exp(z), 0.0)
    return w / w.sum(axis=-1, keepdims=True)


def penalized_value(v, p, x_opp, tau) -> float:
    """Primal objective ``<v, p> + KL(p, x_opp) / tau`` (the quantity the adversary minimises)."""
    return float(np.dot(_arr(v), _arr(p)) + kl_divergence(p, x_opp) / tau)


def softmax(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
