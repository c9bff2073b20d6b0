"""Tabular IPPO and SRPO trainers for the cooking gridworld.

Policies, adversaries and critics are plain lookup tables indexed by the
egocentric observation of the slot they play. All losses come with exact
analytic gradients, so no autodiff framework is needed.

SGD steps are normalized per observation: the minibatch-mean gradient of a
table row is rescaled by ``batch_size / visits(row)``. Each visited row thus
moves by ``lr`` times its own average per-sample gradient, which keeps a single
learning rate meaningful across a table with ten thousand rows.
"""
from __future__ import annotations

import bisect
import csv
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .overcooked import N_ACTIONS, GridConfig, encode_observation, reset, step
from .risk import log_softmax, softmax

KL_CLAMP = 1e3
ADV_STD_FLOOR = 1e-8
CHECKPOINT_MAGIC = b"SRPO1"


class TrainingDiverged(FloatingPointError):
    """A loss or parameter table became non-finite."""


# ---------------------------------------------------------------------------
# parameter tables and configuration
# ---------------------------------------------------------------------------

@dataclass
class PolicyParams:
    logits: np.ndarray

    @classmethod
    def uniform(cls, n_obs: int, n_actions: int = N_ACTIONS) -> PolicyParams:
        return cls(np.zeros((n_obs, n_actions)))

    def probs(self) -> np.ndarray:
        return softmax(self.logits)

    def log_probs(self) -> np.ndarray:
        return log_softmax(self.logits)

    def copy(self) -> PolicyParams:
        return PolicyParams(self.logits.copy())

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.logits, dtype="<f8").tobytes()).hexdigest()


@dataclass
class CriticParams:
    values: np.ndarray

    @classmethod
    def zeros(cls, n_obs: int) -> CriticParams:
        return cls(np.zeros(n_obs))

    def copy(self) -> CriticParams:
        return CriticParams(self.values.copy())


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_range: float = 0.2
    lr_policy: float = 1.0
    lr_adversary: float = 1.0
    lr_critic: float = 0.1
    epochs_per_update: int = 4
    minibatches: int = 4
    rollout_len: int = 1024
    total_steps: int = 200_000
    entropy_coef: float = 0.1
    tau: float = 10.0
    seed: int = 0
    # False keeps each adversary across iterations; True re-anchors it to the partner before every rollout
    adversary_reset: bool = False

    def __post_init__(self):
        if self.clip_range <= 0:
            raise ValueError("clip_range must be positive")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if min(self.lr_policy, self.lr_adversary, self.lr_critic) < 0:
            raise ValueError("learning rates must be non-negative")
        if self.epochs_per_update < 1 or self.minibatches < 1 or self.rollout_len < 1 or self.total_steps < 1:
            raise ValueError("epoch, minibatch, rollout and budget counts must be positive")
        if self.tau < 0 or self.entropy_coef < 0:
            raise ValueError("tau and entropy_coef must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainerConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown trainer config keys: {sorted(unknown)}")
        return cls(**d)


def config_hash(*parts: dict) -> str:
    """Short stable digest of JSON-serializable configuration dicts."""
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------

class GridEnv:
    """Resumable environment that owns its random stream and restarts finished episodes."""

    def __init__(self, config: GridConfig, seed):
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.state = reset(config, self.rng)

    def observe(self, slot: int) -> int:
        return encode_observation(self.config, self.state, slot)

    def step(self, a1: int, a2: int):
        res = step(self.config, self.state, a1, a2, self.rng)
        done = res.state.step_count >= self.config.episode_len
        self.state = reset(self.config, self.rng) if done else res.state
        return res, done


class _Sampler:
    """Inverse-CDF sampling from a frozen snapshot of a policy table."""

    def __init__(self, policy: PolicyParams):
        cdf = np.cumsum(policy.probs(), axis=1)
        cdf[:, -1] = 1.0
        self._cdf = cdf
        self._rows: dict[int, list] = {}

    def __call__(self, obs: int, u: float) -> int:
        row = self._rows.get(obs)
        if row is None:
            row = self._rows[obs] = self._cdf[obs].tolist()
        return min(bisect.bisect_right(row, u), len(row) - 1)


@dataclass
class RolloutBatch:
    """Per-step records for both slots; column ``k`` of a 2-column array belongs to slot ``k``."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    shared: np.ndarray
    private: np.ndarray
    logp_old: np.ndarray
    dones: np.ndarray
    last_obs: np.ndarray
    episodes: list = field(default_factory=list)
    values: np.ndarray | None = None
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return self.obs.shape[0]

    def agent_view(self, slot: int, with_partner: bool = False) -> AgentBatch:
        if self.advantages is None:
            raise ValueError("advantages have not been computed")
        other = 1 - slot
        return AgentBatch(
            self.obs[:, slot], self.actions[:, slot], self.logp_old[:, slot], self.advantages[:, slot],
            self.obs[:, other] if with_partner else None,
            self.actions[:, other] if with_partner else None,
            self.logp_old[:, other] if with_partner else None,
        )


@dataclass
class AgentBatch:
    """What one learner's losses need: its own samples plus, for SRPO, the adversary's."""

    obs: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    advantages: np.ndarray
    partner_obs: np.ndarray | None = None
    partner_actions: np.ndarray | None = None
    partner_logp_old: np.ndarray | None = None

    def __len__(self) -> int:
        return self.obs.shape[0]

    def subset(self, idx) -> AgentBatch:
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return AgentBatch(*(pick(getattr(self, f)) for f in self.__dataclass_fields__))

    @property
    def has_partner(self) -> bool:
        return self.partner_obs is not None


def collect_rollout(env: GridEnv, policy_a: PolicyParams, policy_b: PolicyParams, steps: int,
                    rng: np.random.Generator) -> RolloutBatch:
    """Run ``steps`` transitions with ``policy_a`` in slot 0 and ``policy_b`` in slot 1."""
    samplers = (_Sampler(policy_a), _Sampler(policy_b))
    us = rng.random((steps, 2)).tolist()
    obs = np.empty((steps, 2), dtype=np.int64)
    act = np.empty((steps, 2), dtype=np.int64)
    rew = np.empty((steps, 2))
    priv = np.empty((steps, 2))
    shared = np.empty(steps)
    dones = np.zeros(steps, dtype=bool)
    episodes = []
    ep = [0.0, 0.0, 0.0]
    for t in range(steps):
        o0, o1 = env.observe(0), env.observe(1)
        a0, a1 = samplers[0](o0, us[t][0]), samplers[1](o1, us[t][1])
        res, done = env.step(a0, a1)
        obs[t] = o0, o1
        act[t] = a0, a1
        rew[t] = res.r1, res.r2
        priv[t] = res.private
        shared[t] = res.shared
        dones[t] = done
        ep[0] += res.shared
        ep[1] -= res.private[0]
        ep[2] -= res.private[1]
        if done:
            episodes.append({"shared": ep[0], "private_cost_1": ep[1], "private_cost_2": ep[2],
                             "team_return": 2 * ep[0] - ep[1] - ep[2]})
            ep = [0.0, 0.0, 0.0]
    logp = np.stack([policy_a.log_probs()[obs[:, 0], act[:, 0]],
                     policy_b.log_probs()[obs[:, 1], act[:, 1]]], axis=1)
    last = np.array([env.observe(0), env.observe(1)])
    return RolloutBatch(obs, act, rew, shared, priv, logp, dones, last, episodes)


# ---------------------------------------------------------------------------
# advantages
# ---------------------------------------------------------------------------

def gae(rewards, values, next_values, dones, gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates; ``dones[t]`` cuts bootstrapping after step ``t``."""
    T = len(rewards)
    adv = np.zeros(T)
    running = 0.0
    for t in range(T - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_values[t] * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
    return adv


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / max(adv.std(), ADV_STD_FLOOR)


def gae_advantages(batch: RolloutBatch, critics, gamma: float, lam: float, slots=(0, 1),
                   normalize: bool = True) -> RolloutBatch:
    """Fill values, advantages and returns for the given slots.

    ``critics`` is indexed by slot. A single :class:`CriticParams` is used for every slot.
    Returns are computed from the raw advantages; normalization only touches advantages.
    """
    if isinstance(critics, CriticParams):
        critics = {s: critics for s in slots}
    T = len(batch)
    values = np.zeros((T, 2)) if batch.values is None else batch.values.copy()
    adv = np.zeros((T, 2)) if batch.advantages is None else batch.advantages.copy()
    ret = np.zeros((T, 2)) if batch.returns is None else batch.returns.copy()
    for s in slots:
        v_table = critics[s].values
        v = v_table[batch.obs[:, s]]
        nxt = np.append(v[1:], v_table[batch.last_obs[s]])
        raw = gae(batch.rewards[:, s], v, nxt, batch.dones, gamma, lam)
        values[:, s] = v
        ret[:, s] = raw + v
        adv[:, s] = normalize_advantages(raw) if normalize else raw
    return replace(batch, values=values, advantages=adv, returns=ret)


# ---------------------------------------------------------------------------
# losses (all returned as objectives to *maximize*, with gradients of the same)
# ---------------------------------------------------------------------------

def _scatter(n_obs: int, obs, rows: np.ndarray) -> np.ndarray:
    g = np.zeros((n_obs, rows.shape[1]))
    np.add.at(g, obs, rows)
    return g


def _score_rows(probs_rows, actions) -> np.ndarray:
    """``d log softmax(z)[a] / dz = onehot(a) - softmax(z)`` for each sample."""
    s = -probs_rows.copy()
    s[np.arange(len(actions)), actions] += 1.0
    return s


def _clip_terms(batch: AgentBatch, theta: PolicyParams | None, phi: PolicyParams | None, clip_range: float):
    """Clipped objective with the joint ratio of ``theta`` and ``phi``.

    A ``None`` table contributes ratio 1 (its behaviour policy) and no gradient.
    """
    T = len(batch)
    log_ratio = np.zeros(T)
    if theta is not None:
        lp = theta.log_probs()
        log_ratio += lp[batch.obs, batch.actions] - batch.logp_old
    use_phi = batch.has_partner and phi is not None
    if use_phi:
        lq = phi.log_probs()
        log_ratio += lq[batch.partner_obs, batch.partner_actions] - batch.partner_logp_old
    ratio = np.exp(log_ratio)
    A = batch.advantages
    unclipped = ratio * A
    clipped = np.clip(ratio, 1 - clip_range, 1 + clip_range) * A
    loss = float(np.minimum(unclipped, clipped).mean())
    # the clipped branch is binding (zero gradient) only when strictly smaller
    w = (unclipped <= clipped) * unclipped / T
    g_theta = g_phi = None
    if theta is not None:
        g_theta = _scatter(theta.logits.shape[0], batch.obs,
                           w[:, None] * _score_rows(np.exp(lp[batch.obs]), batch.actions))
    if use_phi:
        g_phi = _scatter(phi.logits.shape[0], batch.partner_obs,
                         w[:, None] * _score_rows(np.exp(lq[batch.partner_obs]), batch.partner_actions))
    return loss, g_theta, g_phi


def clipped_surrogate_loss(batch: AgentBatch, policy: PolicyParams, clip_range: float,
                           partner: PolicyParams | None = None):
    """Clipped surrogate objective and its gradient in ``policy`` logits.

    When the batch carries partner samples and ``partner`` is given, the
    importance ratio is the joint ratio of both acting policies.
    """
    loss, g, _ = _clip_terms(batch, policy, partner, clip_range)
    return loss, g


def _entropy_terms(obs, policy: PolicyParams):
    """Mean entropy of the rows visited in ``obs`` and its logit gradient."""
    lp = policy.log_probs()[obs]
    p = np.exp(lp)
    H = -(p * lp).sum(axis=1)
    rows = -p * (lp + H[:, None]) / len(obs)
    return float(H.mean()), _scatter(policy.logits.shape[0], obs, rows)


def _kl_terms(obs, phi: PolicyParams, anchor: PolicyParams):
    """Mean of ``KL(phi row || anchor row)`` over ``obs`` (each term clamped) and its gradient in ``phi``."""
    lq = phi.log_probs()[obs]
    la = anchor.log_probs()[obs]
    q = np.exp(lq)
    kl = (q * (lq - la)).sum(axis=1)
    live = kl < KL_CLAMP
    rows = np.where(live[:, None], q * ((lq - la) - kl[:, None]), 0.0) / len(obs)
    return float(np.minimum(kl, KL_CLAMP).mean()), _scatter(phi.logits.shape[0], obs, rows)


def ippo_loss(batch: AgentBatch, theta: PolicyParams, clip_range: float, entropy_coef: float):
    """PPO objective against the real partner: clipped surrogate plus entropy bonus."""
    plain = AgentBatch(batch.obs, batch.actions, batch.logp_old, batch.advantages)
    loss, g, _ = _clip_terms(plain, theta, None, clip_range)
    H, gH = _entropy_terms(batch.obs, theta)
    return loss + entropy_coef * H, g + entropy_coef * gH


def srpo_agent_loss(batch: AgentBatch, theta: PolicyParams, entropy_coef: float,
                    phi: PolicyParams | None = None, clip_range: float = 0.2):
    """Agent objective ``L_clip(theta, phi) + entropy_coef * entropy(theta)`` and its theta-gradient."""
    loss, g, _ = _clip_terms(batch, theta, phi, clip_range)
    H, gH = _entropy_terms(batch.obs, theta)
    return loss + entropy_coef * H, g + entropy_coef * gH


def srpo_adversary_loss(batch: AgentBatch, phi: PolicyParams, theta_partner: PolicyParams, tau: float,
                        theta: PolicyParams | None = None, clip_range: float = 0.2):
    """Adversary objective ``-L_clip(theta, phi) - KL(phi || theta_partner) / tau`` and its phi-gradient.

    ``theta`` defaults to the behaviour policy (agent ratio 1).
    """
    if tau <= 0:
        raise ValueError("tau must be positive; use the IPPO loss for the risk-neutral case")
    if not batch.has_partner:
        raise ValueError("adversary loss needs the adversary's samples in the batch")
    loss, _, g_clip = _clip_terms(batch, theta, phi, clip_range)
    kl, g_kl = _kl_terms(batch.partner_obs, phi, theta_partner)
    return -loss - kl / tau, -g_clip - g_kl / tau


def joint_loss(batch: AgentBatch, theta: PolicyParams, phi: PolicyParams, theta_partner: PolicyParams,
               tau: float, entropy_coef: float, clip_range: float = 0.2):
    """``L_clip + KL(phi || partner) / tau + entropy_coef * entropy(theta)``.

    Returns ``(value, grad_theta, grad_phi)``. The agent ascends and the adversary descends it.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    loss, g_theta, g_phi = _clip_terms(batch, theta, phi, clip_range)
    kl, g_kl = _kl_terms(batch.partner_obs, phi, theta_partner)
    H, gH = _entropy_terms(batch.obs, theta)
    return loss + kl / tau + entropy_coef * H, g_theta + entropy_coef * gH, g_phi + g_kl / tau


def critic_loss(obs, returns, critic: CriticParams):
    """``mean 1/2 (V(o) - R)^2`` and its gradient in the value table."""
    err = critic.values[obs] - returns
    g = np.zeros_like(critic.values)
    np.add.at(g, obs, err / len(obs))
    return float(0.5 * np.mean(err ** 2)), g


# ---------------------------------------------------------------------------
# optimization loop
# ---------------------------------------------------------------------------

def _visit_scale(obs, n_obs: int) -> np.ndarray:
    counts = np.bincount(obs, minlength=n_obs).astype(float)
    return np.where(counts > 0, len(obs) / np.maximum(counts, 1.0), 0.0)


def _ascend(table: np.ndarray, grad: np.ndarray, obs, lr: float) -> None:
    scale = _visit_scale(obs, table.shape[0])
    if grad.ndim == 2:
        scale = scale[:, None]
    table += lr * scale * grad


def _guard(*values) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise TrainingDiverged("non-finite loss or parameters; aborting")


@dataclass
class TrainResult:
    policies: list
    critics: list
    curve: list
    env_steps: int
    adversaries: list | None = None


def _seed_streams(seed: int):
    env_ss, sample_ss = np.random.SeedSequence(seed).spawn(2)
    return env_ss, np.random.default_rng(sample_ss)


def _curve_row(step_count, episodes, kl, entropy) -> dict:
    if episodes:
        mean = lambda k: float(np.mean([e[k] for e in episodes]))  # noqa: E731
        stats = (mean("team_return"), mean("shared"), mean("private_cost_1"), mean("private_cost_2"))
    else:
        stats = (float("nan"),) * 4
    return {"step": step_count, "mean_return": stats[0], "shared_return": stats[1],
            "private_cost_1": stats[2], "private_cost_2": stats[3], "kl_adv": kl, "entropy": entropy}


def _minibatches(n: int, k: int, rng):
    idx = rng.permutation(n)
    return [s for s in np.array_split(idx, min(k, n)) if len(s)]


def _update_critic(critic: CriticParams, obs, returns, lr: float) -> None:
    _, g = critic_loss(obs, returns, critic)
    _ascend(critic.values, -g, obs, lr)


def _mean_entropy(policy: PolicyParams, obs) -> float:
    return _entropy_terms(obs, policy)[0]


def train_ippo(config: TrainerConfig, env_config: GridConfig, callback=None) -> TrainResult:
    """Both agents roll out together and each runs PPO on its own reward."""
    n_obs = env_config.n_observations
    env_ss, rng = _seed_streams(config.seed)
    env = GridEnv(env_config, env_ss)
    policies = [PolicyParams.uniform(n_obs), PolicyParams.uniform(n_obs)]
    critics = [CriticParams.zeros(n_obs), CriticParams.zeros(n_obs)]
    curve, used = [], 0
    while used < config.total_steps:
        T = min(config.rollout_len, config.total_steps - used)
        batch = collect_rollout(env, policies[0], policies[1], T, rng)
        used += T
        batch = gae_advantages(batch, critics, config.gamma, config.gae_lambda)
        views = [batch.agent_view(s) for s in (0, 1)]
        for _ in range(config.epochs_per_update):
            for mb in _minibatches(T, config.minibatches, rng):
                for s in (0, 1):
                    sub = views[s].subset(mb)
                    loss, g = ippo_loss(sub, policies[s], config.clip_range, config.entropy_coef)
                    _guard(loss, g)
                    _ascend(policies[s].logits, g, sub.obs, config.lr_policy)
                    _update_critic(critics[s], sub.obs, batch.returns[mb, s], config.lr_critic)
        _guard(policies[0].logits, policies[1].logits)
        row = _curve_row(used, batch.episodes, 0.0,
                         0.5 * sum(_mean_entropy(policies[s], batch.obs[:, s]) for s in (0, 1)))
        curve.append(row)
        if callback:
            callback(row)
    return TrainResult(policies, critics, curve, used)


def train_srpo(config: TrainerConfig, env_config: GridConfig, callback=None) -> TrainResult:
    """Each agent trains against its own KL-anchored adversary standing in for the partner."""
    if config.tau <= 0:
        raise ValueError("SRPO needs tau > 0; use train_ippo for the risk-neutral baseline")
    n_obs = env_config.n_observations
    env_ss, rng = _seed_streams(config.seed)
    env = GridEnv(env_config, env_ss)
    policies = [PolicyParams.uniform(n_obs), PolicyParams.uniform(n_obs)]
    adversaries = [policies[1].copy(), policies[0].copy()]
    critics = [CriticParams.zeros(n_obs), CriticParams.zeros(n_obs)]
    curve, used = [], 0
    while used < config.total_steps:
        episodes, kls, ents = [], [], []
        for i in (0, 1):
            if used >= config.total_steps:
                break
            partner = 1 - i
            if config.adversary_reset:
                adversaries[i] = policies[partner].copy()
            T = min(config.rollout_len, config.total_steps - used)
            pair = (policies[i], adversaries[i]) if i == 0 else (adversaries[i], policies[i])
            batch = collect_rollout(env, pair[0], pair[1], T, rng)
            used += T
            batch = gae_advantages(batch, critics, config.gamma, config.gae_lambda, slots=(i,))
            view = batch.agent_view(i, with_partner=True)
            for _ in range(config.epochs_per_update):
                for mb in _minibatches(T, config.minibatches, rng):
                    sub = view.subset(mb)
                    la, ga = srpo_agent_loss(sub, policies[i], config.entropy_coef, adversaries[i],
                                             config.clip_range)
                    lq, gq = srpo_adversary_loss(sub, adversaries[i], policies[partner], config.tau,
                                                 policies[i], config.clip_range)
                    _guard(la, lq, ga, gq)
                    _ascend(policies[i].logits, ga, sub.obs, config.lr_policy)
                    _ascend(adversaries[i].logits, gq, sub.partner_obs, config.lr_adversary)
                    _update_critic(critics[i], sub.obs, batch.returns[mb, i], config.lr_critic)
            _guard(policies[i].logits, adversaries[i].logits)
            episodes += batch.episodes
            kls.append(_kl_terms(batch.obs[:, partner], adversaries[i], policies[partner])[0])
            ents.append(_mean_entropy(policies[i], batch.obs[:, i]))
        row = _curve_row(used, episodes, float(np.mean(kls)), float(np.mean(ents)))
        curve.append(row)
        if callback:
            callback(row)
    return TrainResult(policies, critics, curve, used, adversaries)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

CURVE_COLUMNS = ("step", "mean_return", "shared_return", "private_cost_1", "private_cost_2", "kl_adv", "entropy")


def write_curve_csv(curve: list, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for row in curve:
            w.writerow([row["step"]] + [repr(float(row[c])) for c in CURVE_COLUMNS[1:]])


def save_checkpoint(path, cfg_hash: str, tables: dict) -> None:
    """Flat little-endian layout.

    ``"SRPO1"`` | u16 hash length | hash (ASCII) | u32 table count | per table:
    u16 name length | name (ASCII) | u32 rows | u32 cols | rows*cols float64, row-major.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        h = cfg_hash.encode("ascii")
        fh.write(struct.pack("<H", len(h)) + h)
        fh.write(struct.pack("<I", len(tables)))
        for name, arr in tables.items():
            a = np.atleast_2d(np.asarray(arr, dtype="<f8"))
            if a.shape[0] == 1 and np.ndim(arr) == 1:
                a = a.T
            nb = name.encode("ascii")
            fh.write(struct.pack("<H", len(nb)) + nb)
            fh.write(struct.pack("<II", *a.shape))
            fh.write(np.ascontiguousarray(a).tobytes())


def load_checkpoint(path) -> tuple[str, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    pos = 5
    (n,) = struct.unpack_from("<H", data, pos)
    pos += 2
    cfg_hash = data[pos:pos + n].decode("ascii")
    pos += n
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tables = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + n].decode("ascii")
        pos += n
        rows, cols = struct.unpack_from("<II", data, pos)
        pos += 8
        size = rows * cols * 8
        tables[name] = np.frombuffer(data[pos:pos + size], dtype="<f8").reshape(rows, cols).copy()
        pos += size
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return cfg_hash, tables


def header_comment(cfg_hash: str) -> str:
    return f"rqe_lab {__version__} config {cfg_hash}"
