import csv
import struct

import numpy as np
import pytest

from rqe_lab.overcooked import N_ACTIONS, GridConfig
from rqe_lab.train import (CURVE_COLUMNS, AgentBatch, CriticParams, GridEnv, PolicyParams, TrainerConfig,
                           TrainingDiverged, clipped_surrogate_loss, collect_rollout, config_hash,
                           critic_loss, gae, gae_advantages, ippo_loss, joint_loss, load_checkpoint,
                           normalize_advantages, save_checkpoint, srpo_adversary_loss, srpo_agent_loss,
                           train_ippo, train_srpo, write_curve_csv)

N_OBS, N_ACT, T = 6, 4, 40
ENV = GridConfig()


def table(rng, scale=1.0):
    return PolicyParams(rng.normal(scale=scale, size=(N_OBS, N_ACT)))


def synthetic_batch(seed=0, with_partner=True, drift=0.3):
    """Samples drawn from 'old' policies; the returned tables sit ``drift`` away in logit space."""
    rng = np.random.default_rng(seed)
    old_a, old_b = table(rng), table(rng)
    obs = rng.integers(N_OBS, size=T)
    pobs = rng.integers(N_OBS, size=T)

    def draw(pol, o):
        p = pol.probs()[o]
        return np.array([rng.choice(N_ACT, p=row) for row in p])

    act, pact = draw(old_a, obs), draw(old_b, pobs)
    batch = AgentBatch(obs, act, old_a.log_probs()[obs, act], rng.normal(size=T),
                       pobs if with_partner else None, pact if with_partner else None,
                       old_b.log_probs()[pobs, pact] if with_partner else None)
    theta = PolicyParams(old_a.logits + drift * rng.normal(size=(N_OBS, N_ACT)))
    phi = PolicyParams(old_b.logits + drift * rng.normal(size=(N_OBS, N_ACT)))
    anchor = table(rng)
    return batch, theta, phi, anchor


def fd(f, logits, h=1e-6):
    g = np.zeros_like(logits)
    for idx in np.ndindex(*logits.shape):
        up, dn = logits.copy(), logits.copy()
        up[idx] += h
        dn[idx] -= h
        g[idx] = (f(up) - f(dn)) / (2 * h)
    return g


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


# --- gradient checks -----------------------------------------------------

@pytest.mark.parametrize("seed", range(4))
def test_clipped_surrogate_gradient(seed):
    batch, theta, phi, _ = synthetic_batch(seed)
    _, g = clipped_surrogate_loss(batch, theta, 0.2, partner=phi)
    num = fd(lambda z: clipped_surrogate_loss(batch, PolicyParams(z), 0.2, partner=phi)[0], theta.logits)
    assert rel(g, num) < 1e-5
    solo = AgentBatch(batch.obs, batch.actions, batch.logp_old, batch.advantages)
    _, g = clipped_surrogate_loss(solo, theta, 0.2)
    num = fd(lambda z: clipped_surrogate_loss(solo, PolicyParams(z), 0.2)[0], theta.logits)
    assert rel(g, num) < 1e-5


@pytest.mark.parametrize("seed", range(4))
def test_agent_loss_gradient(seed):
    batch, theta, phi, _ = synthetic_batch(seed)
    _, g = srpo_agent_loss(batch, theta, 0.1, phi, 0.2)
    num = fd(lambda z: srpo_agent_loss(batch, PolicyParams(z), 0.1, phi, 0.2)[0], theta.logits)
    assert rel(g, num) < 1e-5


@pytest.mark.parametrize("seed", range(4))
def test_adversary_loss_gradient(seed):
    batch, theta, phi, anchor = synthetic_batch(seed)
    _, g = srpo_adversary_loss(batch, phi, anchor, 3.0, theta, 0.2)
    num = fd(lambda z: srpo_adversary_loss(batch, PolicyParams(z), anchor, 3.0, theta, 0.2)[0], phi.logits)
    assert rel(g, num) < 1e-5


@pytest.mark.parametrize("seed", range(3))
def test_joint_loss_gradients(seed):
    batch, theta, phi, anchor = synthetic_batch(seed)
    _, g_t, g_p = joint_loss(batch, theta, phi, anchor, 2.0, 0.1, 0.2)
    num_t = fd(lambda z: joint_loss(batch, PolicyParams(z), phi, anchor, 2.0, 0.1, 0.2)[0], theta.logits)
    num_p = fd(lambda z: joint_loss(batch, theta, PolicyParams(z), anchor, 2.0, 0.1, 0.2)[0], phi.logits)
    assert rel(g_t, num_t) < 1e-5
    assert rel(g_p, num_p) < 1e-5


def test_some_samples_are_clipped():
    # guards the gradient checks above against a batch where clipping never binds
    batch, theta, phi, _ = synthetic_batch(0)
    lr = theta.log_probs()[batch.obs, batch.actions] - batch.logp_old \
        + phi.log_probs()[batch.partner_obs, batch.partner_actions] - batch.partner_logp_old
    r = np.exp(lr)
    assert np.any((r < 0.8) | (r > 1.2)) and np.any((r > 0.8) & (r < 1.2))


# --- identities ----------------------------------------------------------

def test_on_policy_loss_is_mean_advantage():
    batch, _, _, _ = synthetic_batch(1, drift=0.0)
    rng = np.random.default_rng(1)
    old = table(rng)
    batch.logp_old = old.log_probs()[batch.obs, batch.actions]
    loss, _ = clipped_surrogate_loss(batch, old, 0.2)
    assert loss == pytest.approx(batch.advantages.mean(), abs=1e-14)


def test_zero_advantages_give_zero_loss_and_gradient():
    batch, theta, phi, _ = synthetic_batch(2)
    batch.advantages = np.zeros(T)
    loss, g = clipped_surrogate_loss(batch, theta, 0.2, partner=phi)
    assert loss == 0.0 and not g.any()


def test_agent_loss_without_entropy_is_clipped_loss():
    batch, theta, phi, _ = synthetic_batch(3)
    a, ga = srpo_agent_loss(batch, theta, 0.0, phi, 0.2)
    b, gb = clipped_surrogate_loss(batch, theta, 0.2, partner=phi)
    assert a == b
    np.testing.assert_array_equal(ga, gb)


def test_entropy_pushes_toward_uniform():
    batch, _, phi, _ = synthetic_batch(4)
    logits = np.zeros((N_OBS, N_ACT))
    logits[:, 2] = 8.0
    _, g = srpo_agent_loss(batch, PolicyParams(logits), 100.0, phi, 0.2)
    visited = np.unique(batch.obs)
    assert np.all(g[visited, 2] < 0)


def test_ippo_equivalence_with_adversary_disabled():
    batch, theta, _, _ = synthetic_batch(5, with_partner=False)
    a, ga = srpo_agent_loss(batch, theta, 0.1, None, 0.2)
    b, gb = ippo_loss(batch, theta, 0.2, 0.1)
    assert abs(a - b) < 1e-10
    assert np.abs(ga - gb).max() < 1e-10
    # partner samples present but no adversary table: still the IPPO loss
    full, _, _, _ = synthetic_batch(5)
    c, _ = srpo_agent_loss(full, theta, 0.1, None, 0.2)
    assert abs(c - b) < 1e-10


def test_adversary_anchored_at_partner_has_no_kl():
    batch, theta, phi, _ = synthetic_batch(6)
    loss, _ = srpo_adversary_loss(batch, phi, phi, 1.0, theta, 0.2)
    clip, _ = clipped_surrogate_loss(batch, theta, 0.2, partner=phi)
    assert loss == pytest.approx(-clip, abs=1e-14)


def test_small_tau_gradient_follows_kl():
    batch, theta, phi, anchor = synthetic_batch(7)
    _, g = srpo_adversary_loss(batch, phi, anchor, 1e-6, theta, 0.2)
    # isolated KL gradient: phi-only loss with zero advantages
    zero = AgentBatch(batch.obs, batch.actions, batch.logp_old, np.zeros(T),
                      batch.partner_obs, batch.partner_actions, batch.partner_logp_old)
    _, g_kl = srpo_adversary_loss(zero, phi, anchor, 1.0, theta, 0.2)
    cos = np.sum(g * g_kl) / (np.linalg.norm(g) * np.linalg.norm(g_kl))
    assert np.degrees(np.arccos(min(cos, 1.0))) < 1.0


def test_large_tau_adversary_just_minimizes_the_surrogate():
    batch, theta, phi, anchor = synthetic_batch(8)
    _, g = srpo_adversary_loss(batch, phi, anchor, 1e9, theta, 0.2)
    _, _, g_phi = joint_loss(batch, theta, phi, phi, 1.0, 0.0, 0.2)
    np.testing.assert_allclose(g, -g_phi, atol=1e-8)


def test_joint_loss_consistency():
    batch, theta, phi, anchor = synthetic_batch(9)
    tau, ent = 2.5, 0.1
    val, g_t, g_p = joint_loss(batch, theta, phi, anchor, tau, ent, 0.2)
    agent, ga = srpo_agent_loss(batch, theta, ent, phi, 0.2)
    adv, gq = srpo_adversary_loss(batch, phi, anchor, tau, theta, 0.2)
    np.testing.assert_allclose(g_t, ga, atol=1e-12)
    np.testing.assert_allclose(-g_p, gq, atol=1e-12)
    clip, _ = clipped_surrogate_loss(batch, theta, 0.2, partner=phi)
    kl_over_tau = -adv - clip
    assert val == pytest.approx(agent + kl_over_tau, abs=1e-10)


def test_adversary_rejects_nonpositive_tau():
    batch, theta, phi, anchor = synthetic_batch(0)
    with pytest.raises(ValueError):
        srpo_adversary_loss(batch, phi, anchor, 0.0, theta)
    with pytest.raises(ValueError):
        joint_loss(batch, theta, phi, anchor, -1.0, 0.1)


# --- advantages and critic -----------------------------------------------

def test_gae_lambda_zero_is_td_residual():
    rng = np.random.default_rng(0)
    r, v, nv = rng.normal(size=10), rng.normal(size=10), rng.normal(size=10)
    dones = np.zeros(10, dtype=bool)
    dones[4] = True
    adv = gae(r, v, nv, dones, 0.9, 0.0)
    expect = r + 0.9 * nv * ~dones - v
    np.testing.assert_allclose(adv, expect, atol=1e-14)


def test_gae_lambda_one_constant_reward_is_geometric():
    n, gamma = 12, 0.9
    adv = gae(np.ones(n), np.zeros(n), np.zeros(n), np.zeros(n, dtype=bool), gamma, 1.0)
    expect = [(1 - gamma ** (n - t)) / (1 - gamma) for t in range(n)]
    np.testing.assert_allclose(adv, expect, atol=1e-12)


def test_gae_zero_rewards_zero_critic():
    assert not gae(np.zeros(5), np.zeros(5), np.zeros(5), np.zeros(5, dtype=bool), 0.99, 0.95).any()


def test_normalization_guard():
    a = normalize_advantages(np.array([1.0, 2.0, 3.0]))
    assert a.mean() == pytest.approx(0) and a.std() == pytest.approx(1)
    np.testing.assert_array_equal(normalize_advantages(np.full(4, 2.5)), 0.0)


def test_gae_advantages_fills_columns():
    env = GridEnv(ENV, 0)
    pol = PolicyParams.uniform(ENV.n_observations)
    batch = collect_rollout(env, pol, pol, 300, np.random.default_rng(0))
    out = gae_advantages(batch, CriticParams.zeros(ENV.n_observations), 0.99, 0.95)
    for s in (0, 1):
        assert abs(out.advantages[:, s].mean()) < 1e-10
        raw = gae(batch.rewards[:, s], np.zeros(300), np.zeros(300), batch.dones, 0.99, 0.95)
        np.testing.assert_allclose(out.returns[:, s], raw)


def test_critic_mse_non_increasing():
    rng = np.random.default_rng(0)
    obs = rng.integers(20, size=200)
    returns = rng.normal(size=200) + obs * 0.1
    critic = CriticParams(rng.normal(size=20))
    losses = []
    for _ in range(50):
        loss, g = critic_loss(obs, returns, critic)
        losses.append(loss)
        critic.values -= 1e-3 * g
    assert all(b <= a for a, b in zip(losses, losses[1:]))


# --- rollouts ------------------------------------------------------------

def test_rollout_is_deterministic_and_consistent():
    pol = PolicyParams(np.random.default_rng(1).normal(size=(ENV.n_observations, N_ACTIONS)))

    def run():
        return collect_rollout(GridEnv(ENV, 3), pol, pol, 500, np.random.default_rng(4))
    a, b = run(), run()
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(a.rewards, b.rewards)
    assert len(a) == 500 and np.all(np.isfinite(a.logp_old))
    np.testing.assert_allclose(a.rewards, a.shared[:, None] + a.private, atol=1e-12)


def test_uniform_policy_samples_uniformly():
    pol = PolicyParams.uniform(ENV.n_observations)
    batch = collect_rollout(GridEnv(ENV, 0), pol, pol, 10_000, np.random.default_rng(0))
    counts = np.bincount(batch.actions[:, 0], minlength=N_ACTIONS)
    sigma = np.sqrt(10_000 * 0.2 * 0.8)
    assert np.all(np.abs(counts - 2000) < 3 * sigma)


# --- trainers ------------------------------------------------------------

SMALL = dict(rollout_len=256, total_steps=1000, epochs_per_update=2, minibatches=2)


def test_ippo_budget_and_determinism():
    cfg = TrainerConfig(**SMALL, seed=3)
    a, b = train_ippo(cfg, ENV), train_ippo(cfg, ENV)
    assert a.env_steps == 1000
    assert a.curve[-1]["step"] == 1000
    assert [p.checksum() for p in a.policies] == [p.checksum() for p in b.policies]


def test_srpo_budget_counts_both_agents():
    cfg = TrainerConfig(**SMALL, seed=3)
    res = train_srpo(cfg, ENV)
    assert res.env_steps == 1000
    assert len(res.adversaries) == 2
    again = train_srpo(cfg, ENV)
    assert [p.checksum() for p in res.policies] == [p.checksum() for p in again.policies]


@pytest.mark.parametrize("trainer", [train_ippo, train_srpo])
def test_zero_learning_rates_leave_policies_alone(trainer):
    cfg = TrainerConfig(**SMALL, lr_policy=0.0, lr_adversary=0.0, lr_critic=0.0)
    res = trainer(cfg, ENV)
    for p in res.policies:
        assert not p.logits.any()


def test_adversary_reset_switch_changes_training():
    keep = train_srpo(TrainerConfig(**SMALL, seed=1), ENV)
    reset = train_srpo(TrainerConfig(**SMALL, seed=1, adversary_reset=True), ENV)
    assert not TrainerConfig().adversary_reset
    assert [p.checksum() for p in keep.adversaries] != [p.checksum() for p in reset.adversaries]


def test_srpo_rejects_zero_tau():
    with pytest.raises(ValueError):
        train_srpo(TrainerConfig(**SMALL, tau=0.0), ENV)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_guard():
    with pytest.raises(TrainingDiverged):
        train_ippo(TrainerConfig(**SMALL, lr_policy=np.inf), ENV)


def test_config_validation_and_hash():
    with pytest.raises(ValueError):
        TrainerConfig(clip_range=0.0)
    with pytest.raises(ValueError):
        TrainerConfig(gae_lambda=1.5)
    with pytest.raises(ValueError):
        TrainerConfig.from_dict({"lr": 0.1})
    a = config_hash(TrainerConfig().to_dict(), ENV.to_dict())
    assert a == config_hash(TrainerConfig().to_dict(), ENV.to_dict())
    assert a != config_hash(TrainerConfig(seed=1).to_dict(), ENV.to_dict())
    assert len(a) == 16


# --- artifacts -----------------------------------------------------------

def test_checkpoint_round_trip_and_layout(tmp_path):
    rng = np.random.default_rng(0)
    tables = {"policy": rng.normal(size=(7, 5)), "critic": rng.normal(size=7)}
    p = tmp_path / "x.ckpt"
    save_checkpoint(p, "abc123", tables)
    h, back = load_checkpoint(p)
    assert h == "abc123"
    np.testing.assert_array_equal(back["policy"], tables["policy"])
    np.testing.assert_array_equal(back["critic"][:, 0], tables["critic"])
    raw = p.read_bytes()
    assert raw[:5] == b"SRPO1"
    assert struct.unpack_from("<H", raw, 5)[0] == 6
    assert struct.unpack_from("<I", raw, 13)[0] == 2
    name_len = struct.unpack_from("<H", raw, 17)[0]
    rows, cols = struct.unpack_from("<II", raw, 19 + name_len)
    assert (rows, cols) == (7, 5)
    first = struct.unpack_from("<d", raw, 27 + name_len)[0]
    assert first == tables["policy"][0, 0]
    (tmp_path / "bad.ckpt").write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_curve_csv(tmp_path):
    res = train_ippo(TrainerConfig(**SMALL), ENV)
    p = tmp_path / "curve.csv"
    write_curve_csv(res.curve, p, "hdr")
    lines = p.read_text().splitlines()
    assert lines[0] == "# hdr"
    rows = list(csv.DictReader(lines[1:]))
    assert tuple(rows[0]) == CURVE_COLUMNS
    assert len(rows) == len(res.curve)
