import csv

import numpy as np
import pytest

from rqe_lab.games import QuadraticAggregativeGame, RiskProfile, make_example_force_game
from rqe_lab.gaussian import (GaussianStrategy, InfiniteRisk, SingularSystem, best_response_covariance,
                              expected_private_costs, expected_shared_reward, gaussian_best_response,
                              iterate_gaussian_rqe, monotonicity_scan, solve_gaussian_rqe,
                              validity_condition, write_monotonicity_csv)


def random_game(rng, n, N):
    B = rng.normal(size=(n, n))
    H = -(B @ B.T + 0.5 * np.eye(n))
    return QuadraticAggregativeGame(H, rng.normal(size=n), np.full(N, rng.uniform(0.5, 2.0)))


def closed_form_example_mean(abar, tau, eps):
    return abar / (3 - tau * eps / 2)


# --- oracle: entropic risk of the conditional reward by quadrature ---------

def risk_by_quadrature(game, m, cov, m_o, cov_o, tau, order=40):
    """Entropic risk over the opponent's Gaussian action, computed by tensor Gauss-Hermite."""
    n = game.dim
    z, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / w.sum()
    grids = np.meshgrid(*([z] * n), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.prod(np.stack(np.meshgrid(*([w] * n), indexing="ij"), axis=0).reshape(n, -1), axis=0)
    a_o = m_o + pts @ np.linalg.cholesky(cov_o).T
    A = m + a_o
    v = 0.5 * np.einsum("ki,ij,kj->k", A, game.H, A) + 0.5 * np.trace(game.H @ cov) + A @ game.h
    e = -tau * v
    top = e.max()
    return -(top + np.log(wts @ np.exp(e - top))) / tau


def zoom_argmax(f, centre, width, levels=8, k=21):
    centre = np.array(centre, dtype=float)
    for _ in range(levels):
        axes = [np.linspace(c - width, c + width, k) for c in centre]
        grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        vals = np.array([f(p) for p in grid])
        centre = grid[np.argmax(vals)]
        width *= 2.5 / (k - 1) * 2
    return centre


# --- best response --------------------------------------------------------

@pytest.mark.parametrize("tau", [0.0, 0.5, 1.5])
def test_example_covariance_is_half_eps(tau):
    g = make_example_force_game(1.0)
    opp = GaussianStrategy([0.2], [[0.35]])
    br = gaussian_best_response(g, 0, [opp], tau, 0.7)
    assert br.cov[0, 0] == pytest.approx(0.35, abs=1e-14)


def test_vanishing_tau_gives_risk_neutral_response():
    rng = np.random.default_rng(2)
    g = random_game(rng, 2, 2)
    opp = GaussianStrategy(rng.normal(size=2), best_response_covariance(g, 1, 0.4))
    br = gaussian_best_response(g, 0, [opp], 1e-8, 0.4)
    # maximiser of the risk-neutral objective 1/2 (m+mo)'H(m+mo) + h'(m+mo) - rho/2 |m|^2
    expect = np.linalg.solve(g.rho[0] * np.eye(2) - g.H, g.H @ opp.mean + g.h)
    np.testing.assert_allclose(br.mean, expect, atol=1e-7)


def test_best_response_mean_matches_quadrature_grid():
    rng = np.random.default_rng(5)
    g = random_game(rng, 2, 2)
    eps, tau = 0.5, 0.3
    cov = best_response_covariance(g, 0, eps)
    opp = GaussianStrategy(rng.normal(size=2), best_response_covariance(g, 1, eps))

    def objective(m):
        return risk_by_quadrature(g, m, cov, opp.mean, opp.cov, tau) - 0.5 * g.rho[0] * (m @ m + np.trace(cov))

    br = gaussian_best_response(g, 0, [opp], tau, eps)
    best = zoom_argmax(objective, np.zeros(2), 4.0)
    np.testing.assert_allclose(br.mean, best, atol=1e-3)


def test_best_response_accepts_full_profile_and_checks_lengths():
    g = make_example_force_game(1.0)
    s = GaussianStrategy([0.1], [[0.5]])
    a = gaussian_best_response(g, 1, [s], 0.5, 1.0)
    b = gaussian_best_response(g, 1, [s, GaussianStrategy([9.0], [[1.0]])], 0.5, 1.0)
    np.testing.assert_allclose(a.mean, b.mean)
    with pytest.raises(ValueError):
        gaussian_best_response(g, 0, [], 0.5, 1.0)
    with pytest.raises(IndexError):
        gaussian_best_response(g, 2, [s], 0.5, 1.0)


def test_best_response_raises_on_infinite_risk():
    g = make_example_force_game(1.0)
    with pytest.raises(InfiniteRisk):
        gaussian_best_response(g, 0, [GaussianStrategy([0.0], [[2.0]])], 1.0, 1.0)


# --- validity ------------------------------------------------------------

@pytest.mark.parametrize("tau_eps,ok", [(0.5, True), (1.9, True), (2.5, False), (4.0, False)])
def test_example_validity_is_tau_eps_below_two(tau_eps, ok):
    g = make_example_force_game(1.0)
    assert validity_condition(g, RiskProfile.shared(tau_eps, 1.0)) is ok


def test_validity_holds_for_tiny_tau():
    rng = np.random.default_rng(0)
    for _ in range(5):
        g = random_game(rng, 3, 3)
        assert validity_condition(g, RiskProfile.shared(1e-9, 5.0, 3))


# --- equilibrium ---------------------------------------------------------

@pytest.mark.parametrize("tau,eps", [(1e-9, 1.0), (0.5, 1.0), (1.0, 1.0), (1.0, 1.5), (0.2, 3.0)])
def test_example_equilibrium_closed_form(tau, eps):
    abar = 1.7
    g = make_example_force_game(abar)
    rep = solve_gaussian_rqe(g, RiskProfile.shared(tau, eps))
    m = closed_form_example_mean(abar, tau, eps)
    for s in rep.strategies:
        assert s.mean[0] == pytest.approx(m, abs=1e-10)
        assert s.cov[0, 0] == pytest.approx(eps / 2, abs=1e-14)
    assert rep.shared_reward == pytest.approx(-0.5 * ((2 * m - abar) ** 2 + 2 * eps / 2), abs=1e-12)


def test_example_zero_tau_is_one_third():
    rep = solve_gaussian_rqe(make_example_force_game(1.0), RiskProfile.shared(0.0, 1.0))
    for s in rep.strategies:
        assert s.mean[0] == pytest.approx(1 / 3, abs=1e-8)


def test_solver_rejects_invalid_profile():
    with pytest.raises(InfiniteRisk):
        solve_gaussian_rqe(make_example_force_game(1.0), RiskProfile.shared(2.5, 1.0))


def test_solver_flags_singular_system():
    # tau * eps just below 2 pushes the scalar system to the edge of singularity
    g = make_example_force_game(1.0)
    with pytest.raises((SingularSystem, InfiniteRisk)):
        solve_gaussian_rqe(g, RiskProfile.shared(2.0 - 1e-13, 1.0))


@pytest.mark.parametrize("seed", range(5))
def test_solve_agrees_with_iteration(seed):
    rng = np.random.default_rng(seed)
    N = 2 + seed % 2
    g = random_game(rng, 2, N)
    prof = RiskProfile.shared(rng.uniform(0.05, 0.5), rng.uniform(0.2, 1.0), N)
    if not validity_condition(g, prof):
        pytest.skip("profile invalid for this draw")
    rep = solve_gaussian_rqe(g, prof)
    it, ok = iterate_gaussian_rqe(g, prof, damping=0.3)
    assert ok
    for a, b in zip(rep.strategies, it):
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-8)


@pytest.mark.parametrize("seed", range(6))
def test_fixed_point_certificate(seed):
    rng = np.random.default_rng(100 + seed)
    N = 2 + seed % 2
    g = random_game(rng, 1 + seed % 3, N)
    prof = RiskProfile.shared(rng.uniform(0.0, 0.3), rng.uniform(0.2, 1.0), N)
    rep = solve_gaussian_rqe(g, prof)
    for i, s in enumerate(rep.strategies):
        br = gaussian_best_response(g, i, rep.strategies, prof.tau[i], prof.eps[i])
        assert np.abs(br.mean - s.mean).max() < 1e-8
        assert np.abs(br.cov - s.cov).max() < 1e-10


def test_symmetric_players_share_the_mean():
    g = random_game(np.random.default_rng(4), 2, 3)
    rep = solve_gaussian_rqe(g, RiskProfile.shared(0.1, 0.5, 3))
    for s in rep.strategies[1:]:
        np.testing.assert_allclose(s.mean, rep.strategies[0].mean, atol=1e-12)


def test_covariance_does_not_depend_on_tau():
    g = random_game(np.random.default_rng(9), 3, 2)
    a = solve_gaussian_rqe(g, RiskProfile.shared(0.01, 0.5))
    b = solve_gaussian_rqe(g, RiskProfile.shared(0.2, 0.5))
    for s, t in zip(a.strategies, b.strategies):
        np.testing.assert_array_equal(s.cov, t.cov)


# --- expectations --------------------------------------------------------

def test_expected_reward_point_mass_limit():
    g = make_example_force_game(0.0)
    tiny = [GaussianStrategy([0.0], [[1e-300]])] * 2
    assert expected_shared_reward(g, tiny) == pytest.approx(0.0, abs=1e-12)
    g = make_example_force_game(2.0)
    assert expected_shared_reward(g, tiny) == pytest.approx(-2.0, abs=1e-12)


def test_expected_reward_matches_monte_carlo():
    rng = np.random.default_rng(21)
    g = random_game(rng, 2, 2)
    strats = [GaussianStrategy(rng.normal(size=2), best_response_covariance(g, i, 0.6)) for i in range(2)]
    draws = sum(rng.multivariate_normal(s.mean, s.cov, size=1_000_000) for s in strats)
    samples = 0.5 * np.einsum("ki,ij,kj->k", draws, g.H, draws) + draws @ g.h
    se = samples.std() / np.sqrt(len(samples))
    assert abs(expected_shared_reward(g, strats) - samples.mean()) < 3 * se


def test_private_costs():
    g = make_example_force_game(1.0)
    s = GaussianStrategy([0.5], [[0.25]])
    np.testing.assert_allclose(expected_private_costs(g, [s, s]), [0.5 * (0.25 + 0.25)] * 2)


# --- monotonicity --------------------------------------------------------

def test_example_monotone_and_utility_rises_then_falls():
    g = make_example_force_game(1.0)
    rows = monotonicity_scan(g, 1.0, np.linspace(0.01, 1.9, 60))
    J = np.array([r["J"] for r in rows])
    assert all(r["valid"] for r in rows)
    assert np.all(np.diff(J) > -1e-10)
    u = np.array([r["utilities"][0] for r in rows])
    risk_neutral = monotonicity_scan(g, 1.0, [0.0])[0]["utilities"][0]
    assert u.max() > risk_neutral
    assert u[-1] < u.max()


def test_invalid_rows_are_flagged_not_fatal():
    rows = monotonicity_scan(make_example_force_game(1.0), 1.0, [1.0, 2.5])
    assert rows[0]["valid"] and not rows[1]["valid"]
    assert np.isnan(rows[1]["J"])


@pytest.mark.parametrize("seed", range(20))
def test_random_games_are_monotone(seed):
    rng = np.random.default_rng(1000 + seed)
    n, N = int(rng.integers(1, 4)), int(rng.integers(2, 4))
    g = random_game(rng, n, N)
    eps = rng.uniform(0.1, 1.0)
    rows = [r for r in monotonicity_scan(g, eps, np.linspace(0.0, 3.0, 40)) if r["valid"]]
    J = np.array([r["J"] for r in rows])
    assert len(J) >= 2
    assert np.all(np.diff(J) > -1e-10)


def test_scan_csv(tmp_path):
    rows = monotonicity_scan(make_example_force_game(1.0), 1.0, [0.5, 2.5])
    p = tmp_path / "scan.csv"
    write_monotonicity_csv(rows, p, "hdr")
    lines = p.read_text().splitlines()
    assert lines[0] == "# hdr"
    data = list(csv.DictReader(lines[1:]))
    assert list(data[0]) == ["tau", "valid", "J", "cost_1", "cost_2", "utility_1", "utility_2",
                             "mean_1_0", "mean_2_0"]
    assert data[1]["valid"] == "0"


def test_strategy_validation():
    with pytest.raises(ValueError):
        GaussianStrategy([0.0, 0.0], [[1.0, 0.5], [0.4, 1.0]])
    with pytest.raises(ValueError):
        GaussianStrategy([0.0], [[0.0]])
    with pytest.raises(ValueError):
        GaussianStrategy([0.0, 1.0], [[1.0]])
