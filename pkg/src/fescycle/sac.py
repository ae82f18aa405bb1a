"""Soft actor-critic with twin critics, auto-tuned temperature, and an
optional conservative regulariser for offline training.

The actor is a diagonal Gaussian squashed through a sigmoid so stimulation
intensities always land in (0, 1); its log-density carries the corresponding
log a(1-a) change-of-variables term.  All gradients are assembled by hand on
top of nets.Mlp.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData
from .nets import Adam, Mlp

HIDDEN = (64, 64)
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)

STOCHASTIC = "stochastic"
DETERMINISTIC = "deterministic"


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    lr: float = 3e-4
    batch: int = 256
    polyak: float = 0.005
    alpha_init: float = 0.2
    target_entropy_per_dim: float = -2.0
    cql_weight: float = 0.0
    grad_steps_per_episode: int = 1000
    cql_num_samples: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.batch < 1 or self.grad_steps_per_episode < 0 or self.cql_num_samples < 1:
            raise ValueError("batch, grad steps and cql_num_samples must be positive")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must lie in [0, 1)")
        if self.lr <= 0 or self.polyak <= 0 or self.alpha_init <= 0 or self.cql_weight < 0:
            raise ValueError("lr, polyak and alpha_init must be positive; cql_weight >= 0")


_TRAIN_FIELDS = tuple(f.name for f in dataclasses.fields(TrainConfig))


def train_config_from_dict(data: dict) -> TrainConfig:
    unknown = sorted(set(data) - set(_TRAIN_FIELDS))
    if unknown:
        raise ValueError(f"unknown train config keys: {', '.join(unknown)}")
    return TrainConfig(**data)


def _softplus(x):
    # log(1 + e^x) = max(x, 0) + log1p(e^{-|x|}); much faster here than
    # np.logaddexp and just as stable
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class SquashedGaussianActor:
    """MLP trunk emitting per-dimension mean and log-std, sigmoid squash."""

    def __init__(self, obs_dim: int, n_actions: int, rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.trunk = Mlp([obs_dim, *HIDDEN, 2 * n_actions], rng)

    def sample_cached(self, obs: np.ndarray, noise: np.ndarray):
        """Reparameterised sample with everything the backward pass needs."""
        out, trunk_cache = self.trunk.forward_cached(obs)
        n = self.n_actions
        mu = out[..., :n]
        raw = out[..., n:]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        std = np.exp(log_std)
        pre = mu + std * noise
        action = _sigmoid(pre)
        log_prob = np.sum(
            -0.5 * noise * noise - log_std - 0.5 * LOG_2PI
            + _softplus(pre) + _softplus(-pre),
            axis=-1,
        )
        cache = {
            "trunk": trunk_cache,
            "raw": raw,
            "std": std,
            "noise": noise,
            "action": action,
        }
        return action, log_prob, cache

    def sample(self, obs: np.ndarray, noise: np.ndarray):
        action, log_prob, _ = self.sample_cached(obs, noise)
        return action, log_prob

    def deterministic(self, obs: np.ndarray) -> np.ndarray:
        out = self.trunk.forward(obs)
        return _sigmoid(out[..., : self.n_actions])

    def backward_sample(self, cache, grad_pre, grad_log_std_direct):
        """Backprop through the squashed sample into trunk parameter space.

        grad_pre is dLoss/d(pre-squash sample); grad_log_std_direct collects
        loss terms that touch log_std without going through the sample.
        """
        raw = cache["raw"]
        std = cache["std"]
        noise = cache["noise"]
        grad_mu = grad_pre
        grad_log_std = grad_pre * std * noise + grad_log_std_direct
        clip_mask = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
        grad_out = np.concatenate([grad_mu, grad_log_std * clip_mask], axis=-1)
        grads, _ = self.trunk.backward(cache["trunk"], grad_out)
        return grads


def policy_sample(actor: SquashedGaussianActor, obs, mode: str = STOCHASTIC,
                  rng: np.random.Generator | None = None, noise=None):
    """Sample (action, log_prob); deterministic mode returns (mean action, None)."""
    obs = np.asarray(obs, dtype=float)
    if mode == DETERMINISTIC:
        return actor.deterministic(obs), None
    if noise is None:
        rng = rng or np.random.default_rng(0)
        noise = rng.standard_normal(obs.shape[:-1] + (actor.n_actions,))
    action, log_prob, _ = actor.sample_cached(obs, noise)
    return action, log_prob


class ReplayBuffer:
    """Ring buffer over (obs, action, reward, next_obs); uniform sampling."""

    def __init__(self, obs_dim: int, n_actions: int, capacity: int = 1_000_000):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.capacity = capacity
        self._alloc = 0
        self._size = 0
        self._next = 0
        self.inserted = 0
        self._obs = self._act = self._rew = self._next_obs = None

    def _grow(self, need: int) -> None:
        new_alloc = max(1024, self._alloc)
        while new_alloc < need:
            new_alloc *= 2
        new_alloc = min(new_alloc, self.capacity)
        if new_alloc == self._alloc:
            return
        def grown(old, width):
            arr = np.empty((new_alloc, width) if width else new_alloc)
            if old is not None and self._size:
                arr[: self._size] = old[: self._size]
            return arr
        self._obs = grown(self._obs, self.obs_dim)
        self._act = grown(self._act, self.n_actions)
        self._rew = grown(self._rew, 0)
        self._next_obs = grown(self._next_obs, self.obs_dim)
        self._alloc = new_alloc

    def push(self, obs, action, rew, next_obs) -> None:
        if self._next >= self._alloc and self._alloc < self.capacity:
            self._grow(self._next + 1)
        i = self._next
        self._obs[i] = obs
        self._act[i] = action
        self._rew[i] = rew
        self._next_obs[i] = next_obs
        self.inserted += 1
        self._size = min(self._size + 1, self.capacity)
        self._next = (self._next + 1) % self.capacity

    def push_tuple(self, tup) -> None:
        self.push(tup.obs, tup.action, tup.reward, tup.next_obs)

    def __len__(self) -> int:
        return self._size

    def contents(self):
        """Stored tuples in insertion order (oldest first)."""
        if self._size < self.capacity:
            order = np.arange(self._size)
        else:
            order = (np.arange(self.capacity) + self._next) % self.capacity
        return (self._obs[order], self._act[order], self._rew[order], self._next_obs[order])

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        idx = rng.integers(0, self._size, size=batch_size)
        return {
            "obs": self._obs[idx],
            "act": self._act[idx],
            "rew": self._rew[idx],
            "next_obs": self._next_obs[idx],
        }


class SacAgent:
    def __init__(self, obs_dim: int, n_actions: int, tc: TrainConfig):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.tc = tc
        self.rng = np.random.default_rng(tc.seed)
        self.actor = SquashedGaussianActor(obs_dim, n_actions, self.rng)
        q_sizes = [obs_dim + n_actions, *HIDDEN, 1]
        self.q1 = Mlp(q_sizes, self.rng)
        self.q2 = Mlp(q_sizes, self.rng)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.log_alpha = np.array([math.log(tc.alpha_init)])
        self.target_entropy = tc.target_entropy_per_dim * float(n_actions)
        self.opt_actor = Adam(self.actor.trunk.params, tc.lr)
        self.opt_q1 = Adam(self.q1.params, tc.lr)
        self.opt_q2 = Adam(self.q2.params, tc.lr)
        self.opt_alpha = Adam([self.log_alpha], tc.lr)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    def reconfigure(self, tc: TrainConfig) -> None:
        """Adopt new training hyperparameters for a loaded agent, keeping
        network parameters and optimizer moments (used by fine-tuning)."""
        self.tc = tc
        self.target_entropy = tc.target_entropy_per_dim * float(self.n_actions)
        self.rng = np.random.default_rng(tc.seed)
        for opt in (self.opt_actor, self.opt_q1, self.opt_q2, self.opt_alpha):
            opt.lr = tc.lr

    def act(self, obs, deterministic: bool = False) -> np.ndarray:
        obs = np.asarray(obs, dtype=float)
        if deterministic:
            return self.actor.deterministic(obs)
        noise = self.rng.standard_normal(self.n_actions)
        action, _, _ = self.actor.sample_cached(obs[None, :], noise[None, :])
        return action[0]


def _q_forward(net: Mlp, obs: np.ndarray, act: np.ndarray):
    value, cache = net.forward_cached(np.concatenate([obs, act], axis=-1))
    return value[:, 0], cache


def critic_loss(agent: SacAgent, batch: dict, tc: TrainConfig, next_noise=None):
    """Twin-critic TD loss against the entropy-regularised target.

    Target: r + gamma * (min target-Q(s', a') - alpha * log pi(a'|s')) with
    a' drawn fresh from the current policy; no gradient flows into the target.
    Returns (loss, (grads_q1, grads_q2), aux).
    """
    obs, act = batch["obs"], batch["act"]
    rew, next_obs = batch["rew"], batch["next_obs"]
    bsize = obs.shape[0]
    if next_noise is None:
        next_noise = agent.rng.standard_normal((bsize, agent.n_actions))

    a_next, logp_next, _ = agent.actor.sample_cached(next_obs, next_noise)
    q1t, _ = _q_forward(agent.q1_target, next_obs, a_next)
    q2t, _ = _q_forward(agent.q2_target, next_obs, a_next)
    y = rew + tc.gamma * (np.minimum(q1t, q2t) - agent.alpha * logp_next)

    q1, c1 = _q_forward(agent.q1, obs, act)
    q2, c2 = _q_forward(agent.q2, obs, act)
    e1 = q1 - y
    e2 = q2 - y
    loss = float(np.mean(e1 * e1) + np.mean(e2 * e2))
    g1, _ = agent.q1.backward(c1, (2.0 * e1 / bsize)[:, None])
    g2, _ = agent.q2.backward(c2, (2.0 * e2 / bsize)[:, None])
    return loss, (g1, g2), {"target": y, "q1": q1, "q2": q2}


def actor_loss(agent: SacAgent, batch: dict, tc: TrainConfig, noise=None):
    """Reparameterised policy loss mean(alpha * log pi(a|s) - min Q(s, a)).

    Gradients flow through the sampled action into the trunk; the critics'
    parameters only supply dQ/da and are left untouched.
    Returns (loss, actor_grads, log_probs).
    """
    obs = batch["obs"]
    bsize = obs.shape[0]
    if noise is None:
        noise = agent.rng.standard_normal((bsize, agent.n_actions))
    alpha = agent.alpha

    action, log_prob, cache = agent.actor.sample_cached(obs, noise)
    q1, c1 = _q_forward(agent.q1, obs, action)
    q2, c2 = _q_forward(agent.q2, obs, action)
    q_min = np.minimum(q1, q2)
    loss = float(np.mean(alpha * log_prob - q_min))

    pick1 = (q1 <= q2).astype(float)
    grad_q_out1 = (-pick1 / bsize)[:, None]
    grad_q_out2 = (-(1.0 - pick1) / bsize)[:, None]
    _, din1 = agent.q1.backward(c1, grad_q_out1)
    _, din2 = agent.q2.backward(c2, grad_q_out2)
    dloss_da = din1[:, agent.obs_dim:] + din2[:, agent.obs_dim:]

    a = cache["action"]
    grad_pre = (alpha / bsize) * (2.0 * a - 1.0) + dloss_da * a * (1.0 - a)
    grad_log_std_direct = np.full_like(a, -alpha / bsize)
    grads = agent.actor.backward_sample(cache, grad_pre, grad_log_std_direct)
    return loss, grads, log_prob


def cql_logsumexp(net: Mlp, obs: np.ndarray, actions: np.ndarray, log_dens: np.ndarray):
    """Importance-corrected log-sum-exp of Q over sampled actions.

    actions: (B, N, n) with per-sample log proposal densities (B, N); returns
    (lse (B,), softmax weights (B, N), flat forward cache) so callers can
    backpropagate.
    """
    bsize, n_samp, _ = actions.shape
    obs_rep = np.repeat(obs, n_samp, axis=0)
    q_flat, cache = _q_forward(net, obs_rep, actions.reshape(bsize * n_samp, -1))
    adjusted = q_flat.reshape(bsize, n_samp) - log_dens
    peak = adjusted.max(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(np.sum(np.exp(adjusted - peak), axis=1))
    weights = np.exp(adjusted - lse[:, None])
    return lse, weights, cache


def cql_regularizer(agent: SacAgent, batch: dict, tc: TrainConfig,
                    rand_actions=None, pol_noise=None):
    """Conservative penalty: push Q down on sampled actions, up on data actions.

    Per critic: mean_s[ logsumexp_a(Q(s,a) - log q(a)) - Q(s, a_data) ].  The
    cql_num_samples action pool is split between uniform draws over [0,1]^n
    (density 1, so zero log correction) and current-policy draws corrected by
    their log-density.  The policy samples are treated as constants; only
    critic gradients come back.  Returns (penalty, (grads_q1, grads_q2)).
    """
    obs, act = batch["obs"], batch["act"]
    bsize = obs.shape[0]
    n = agent.n_actions
    n_rand = max(1, tc.cql_num_samples // 2)
    n_pol = max(1, tc.cql_num_samples - n_rand)
    if rand_actions is None:
        rand_actions = agent.rng.uniform(size=(bsize, n_rand, n))
    else:
        n_rand = rand_actions.shape[1]
    if pol_noise is None:
        pol_noise = agent.rng.standard_normal((bsize * n_pol, n))
    else:
        n_pol = pol_noise.shape[0] // bsize

    obs_rep = np.repeat(obs, n_pol, axis=0)
    a_pol, logp_pol, _ = agent.actor.sample_cached(obs_rep, pol_noise)
    pool = np.concatenate([rand_actions, a_pol.reshape(bsize, n_pol, n)], axis=1)
    log_dens = np.concatenate(
        [np.zeros((bsize, n_rand)), logp_pol.reshape(bsize, n_pol)], axis=1
    )

    total = 0.0
    grads_out = []
    for net in (agent.q1, agent.q2):
        lse, weights, cache = cql_logsumexp(net, obs, pool, log_dens)
        q_data, cache_data = _q_forward(net, obs, act)
        total += float(np.mean(lse - q_data))
        g_pool, _ = net.backward(cache, (weights / bsize).reshape(-1, 1))
        g_data, _ = net.backward(cache_data, np.full((bsize, 1), -1.0 / bsize))
        grads_out.append([a + b for a, b in zip(g_pool, g_data)])
    return total, tuple(grads_out)


def _polyak_update(target: Mlp, online: Mlp, tau: float) -> None:
    for pt, po in zip(target.params, online.params):
        pt *= 1.0 - tau
        pt += tau * po


def sac_update(agent: SacAgent, data, tc: TrainConfig, n_steps: int | None = None) -> SacAgent:
    """Run gradient steps from uniformly sampled batches.

    One step = critic step (TD loss, plus the weighted conservative term and
    the 1/2 TD scaling when cql_weight > 0), actor step, temperature step
    toward the entropy target, then Polyak target tracking.
    """
    if len(data) < tc.batch:
        raise InsufficientData(
            f"need at least {tc.batch} tuples, have {len(data)}"
        )
    steps = tc.grad_steps_per_episode if n_steps is None else n_steps
    for _ in range(steps):
        batch = data.sample(tc.batch, agent.rng)

        loss_q, (g1, g2), _ = critic_loss(agent, batch, tc)
        if tc.cql_weight > 0.0:
            _, (c1, c2) = cql_regularizer(agent, batch, tc)
            g1 = [tc.cql_weight * a + 0.5 * b for a, b in zip(c1, g1)]
            g2 = [tc.cql_weight * a + 0.5 * b for a, b in zip(c2, g2)]
        agent.opt_q1.step(agent.q1.params, g1)
        agent.opt_q2.step(agent.q2.params, g2)

        _, ga, log_prob = actor_loss(agent, batch, tc)
        agent.opt_actor.step(agent.actor.trunk.params, ga)

        grad_log_alpha = np.array([-float(np.mean(log_prob + agent.target_entropy))])
        agent.opt_alpha.step([agent.log_alpha], [grad_log_alpha])

        _polyak_update(agent.q1_target, agent.q1, tc.polyak)
        _polyak_update(agent.q2_target, agent.q2, tc.polyak)
    return agent


def _net_to_doc(net: Mlp) -> dict:
    return {
        "layer_sizes": net.layer_sizes,
        "params": [p.tolist() for p in net.params],
    }


def _net_from_doc(doc: dict) -> Mlp:
    net = Mlp(doc["layer_sizes"])
    net.params = []
    sizes = doc["layer_sizes"]
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        w = np.array(doc["params"][2 * i], dtype=float).reshape(fan_in, fan_out)
        b = np.array(doc["params"][2 * i + 1], dtype=float).reshape(fan_out)
        net.params.extend([w, b])
    return net


def agent_to_json(agent: SacAgent) -> str:
    doc = {
        "format": "fescycle-agent-v1",
        "obs_dim": agent.obs_dim,
        "n_actions": agent.n_actions,
        "train_config": {name: getattr(agent.tc, name) for name in _TRAIN_FIELDS},
        "log_alpha": float(agent.log_alpha[0]),
        "nets": {
            "actor": _net_to_doc(agent.actor.trunk),
            "q1": _net_to_doc(agent.q1),
            "q2": _net_to_doc(agent.q2),
            "q1_target": _net_to_doc(agent.q1_target),
            "q2_target": _net_to_doc(agent.q2_target),
        },
        "optimizers": {
            "actor": agent.opt_actor.to_state(),
            "q1": agent.opt_q1.to_state(),
            "q2": agent.opt_q2.to_state(),
            "alpha": agent.opt_alpha.to_state(),
        },
    }
    return json.dumps(doc, indent=1) + "\n"


def agent_from_json(text: str) -> SacAgent:
    doc = json.loads(text)
    if doc.get("format") != "fescycle-agent-v1":
        raise ValueError(f"not an agent checkpoint: format={doc.get('format')!r}")
    tc = train_config_from_dict(doc["train_config"])
    agent = SacAgent(doc["obs_dim"], doc["n_actions"], tc)
    agent.actor.trunk = _net_from_doc(doc["nets"]["actor"])
    agent.q1 = _net_from_doc(doc["nets"]["q1"])
    agent.q2 = _net_from_doc(doc["nets"]["q2"])
    agent.q1_target = _net_from_doc(doc["nets"]["q1_target"])
    agent.q2_target = _net_from_doc(doc["nets"]["q2_target"])
    agent.log_alpha = np.array([doc["log_alpha"]])
    agent.opt_actor = Adam.from_state(doc["optimizers"]["actor"], agent.actor.trunk.params)
    agent.opt_q1 = Adam.from_state(doc["optimizers"]["q1"], agent.q1.params)
    agent.opt_q2 = Adam.from_state(doc["optimizers"]["q2"], agent.q2.params)
    agent.opt_alpha = Adam.from_state(doc["optimizers"]["alpha"], [agent.log_alpha])
    return agent


def save_agent(agent: SacAgent, path) -> None:
    with open(path, "w") as fh:
        fh.write(agent_to_json(agent))


def load_agent(path) -> SacAgent:
    with open(path) as fh:
        return agent_from_json(fh.read())
