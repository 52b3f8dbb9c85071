"""Reference learners the intervention agent is measured against.

Two scalar-critic baselines sharing the same actor machinery:

* ``SacAgent`` — standard entropy-regularized actor-critic with twin
  critics, trained on environment reward with no supervisor at all.
* ``PvpAgent`` — reward-free intervention learner whose critic regresses
  point labels (+1 supervisor action, -1 overridden action) by squared
  error instead of a return distribution.
"""

from __future__ import annotations

import numpy as np

from .algo import AlgoConfig, Q_ALARM, _actor_forward, temperature_update
from .errors import ContractViolation, TrainingDiverged
from .nets import (
    adam_init,
    adam_step,
    mlp_backward,
    mlp_entries,
    mlp_forward,
    mlp_from_entries,
    mlp_init,
    soft_update,
    squashed_backward,
    squashed_sample,
    tree_add,
)


def _q_forward(net, obs, act):
    """Scalar critic value for an (obs, action) batch."""
    x = np.concatenate([np.atleast_2d(np.asarray(obs, dtype=np.float64)),
                        np.atleast_2d(np.asarray(act, dtype=np.float64))],
                       axis=-1)
    out, cache = mlp_forward(net, x)
    return out[..., 0], cache


class SacReplay:
    """Ring buffer for the reward-trained baseline; this is the only storage
    in the package with a reward column."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int = 2):
        if capacity <= 0:
            raise ContractViolation("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.size = 0
        self.head = 0

    def __len__(self):
        return self.size

    def push(self, obs, act, rew, next_obs, done):
        i = self.head
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.done[i] = done
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng):
        if self.size == 0:
            raise ContractViolation("sampling from an empty buffer")
        idx = rng.integers(0, self.size, size=n)
        return (self.obs[idx], self.act[idx], self.rew[idx],
                self.next_obs[idx], self.done[idx])


class SacAgent:
    """Twin-critic soft actor-critic on environment reward."""

    def __init__(self, obs_dim: int, act_dim: int = 2,
                 cfg: AlgoConfig | None = None, rng=0):
        if cfg is None:
            cfg = AlgoConfig()
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        sizes = [obs_dim + act_dim, *cfg.hidden, 1]
        self.critics = [mlp_init(sizes, rng), mlp_init(sizes, rng)]
        self.actor = mlp_init([obs_dim, *cfg.hidden, 2 * act_dim], rng)
        self.critics_t = [c.copy() for c in self.critics]
        self.actor_t = self.actor.copy()
        self.opt_critics = [adam_init(c, cfg.lr) for c in self.critics]
        self.opt_actor = adam_init(self.actor, cfg.lr)
        self.alpha = float(cfg.alpha)

    def act(self, obs, rng):
        head, _, _ = _actor_forward(self.actor, obs)
        action, logp = squashed_sample(head, rng.standard_normal(head.mean.shape))
        return action, float(logp)

    def act_mean(self, obs):
        head, _, _ = _actor_forward(self.actor, obs)
        return np.tanh(head.mean)

    def update(self, rng, batch) -> dict:
        """One learner step on (obs, act, reward, next_obs, done)."""
        cfg = self.cfg
        obs, act, rew, obs_next, done = batch
        n = obs.shape[0]

        act_noise = rng.standard_normal((n, self.act_dim))
        head, _, _ = _actor_forward(self.actor_t, obs_next)
        a_next, logp_next = squashed_sample(head, act_noise)
        q_next = np.minimum(*(
            _q_forward(c, obs_next, a_next)[0] for c in self.critics_t))
        y = rew + cfg.gamma * (1.0 - done) * (q_next - self.alpha * logp_next)

        td_loss = 0.0
        for i, critic in enumerate(self.critics):
            q, cache = _q_forward(critic, obs, act)
            td_loss += float(np.mean((q - y) ** 2))
            grads, _ = mlp_backward(cache, (2.0 * (q - y) / n)[:, None])
            self.critics[i], self.opt_critics[i] = adam_step(
                critic, grads, self.opt_critics[i])
        if not np.isfinite(td_loss):
            raise TrainingDiverged("non-finite critic loss")

        pol_noise = rng.standard_normal((n, self.act_dim))
        head, inside, cache_a = _actor_forward(self.actor, obs)
        action, logp = squashed_sample(head, pol_noise)
        q0, cache0 = _q_forward(self.critics[0], obs, action)
        q1, cache1 = _q_forward(self.critics[1], obs, action)
        take0 = (q0 <= q1).astype(np.float64)
        pol_loss = float(np.mean(self.alpha * logp - np.minimum(q0, q1)))
        _, d_in0 = mlp_backward(cache0, (-take0 / n)[:, None])
        _, d_in1 = mlp_backward(cache1, ((take0 - 1.0) / n)[:, None])
        d_action = (d_in0 + d_in1)[:, self.obs_dim:]
        d_mean, d_log_std = squashed_backward(
            head, pol_noise, action, d_action, np.full(n, self.alpha / n))
        og_a = np.concatenate([d_mean, d_log_std * inside], axis=-1)
        g_actor, _ = mlp_backward(cache_a, og_a)
        self.actor, self.opt_actor = adam_step(self.actor, g_actor, self.opt_actor)
        self.alpha = temperature_update(self.alpha, logp, cfg)

        self.critics_t = [soft_update(c, t, cfg.tau)
                          for c, t in zip(self.critics, self.critics_t)]
        self.actor_t = soft_update(self.actor, self.actor_t, cfg.tau)
        return {"td_loss": td_loss, "policy_loss": pol_loss,
                "alpha": self.alpha, "entropy": float(np.mean(-logp))}

    def state_entries(self):
        entries = {}
        for i in range(2):
            entries.update(mlp_entries(f"critic{i}", self.critics[i]))
            entries.update(mlp_entries(f"critic{i}_t", self.critics_t[i]))
        entries.update(mlp_entries("actor", self.actor))
        entries.update(mlp_entries("actor_t", self.actor_t))
        entries["alpha"] = np.asarray(self.alpha)
        return entries

    def load_state_entries(self, entries):
        self.critics = [mlp_from_entries(f"critic{i}", entries) for i in range(2)]
        self.critics_t = [mlp_from_entries(f"critic{i}_t", entries)
                         for i in range(2)]
        self.actor = mlp_from_entries("actor", entries)
        self.actor_t = mlp_from_entries("actor_t", entries)
        self.alpha = float(entries["alpha"])


class PvpAgent:
    """Point-estimate intervention learner (no reward, no return spread).

    Shares the data contract of the distributional agent: ``update`` takes
    the same (human, union) batches and never sees a reward.
    """

    def __init__(self, obs_dim: int, act_dim: int = 2,
                 cfg: AlgoConfig | None = None, rng=0):
        if cfg is None:
            cfg = AlgoConfig()
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.critic = mlp_init([obs_dim + act_dim, *cfg.hidden, 1], rng)
        self.actor = mlp_init([obs_dim, *cfg.hidden, 2 * act_dim], rng)
        self.critic_t = self.critic.copy()
        self.actor_t = self.actor.copy()
        self.opt_critic = adam_init(self.critic, cfg.lr)
        self.opt_actor = adam_init(self.actor, cfg.lr)
        self.alpha = float(cfg.alpha)

    def act(self, obs, rng):
        head, _, _ = _actor_forward(self.actor, obs)
        action, logp = squashed_sample(head, rng.standard_normal(head.mean.shape))
        return action, float(logp)

    def act_mean(self, obs):
        head, _, _ = _actor_forward(self.actor, obs)
        return np.tanh(head.mean)

    def update(self, rng, human, union) -> dict:
        cfg = self.cfg
        obs_u, act_u, obs_next, done = union
        n = obs_u.shape[0]

        if human is None or len(human[0]) == 0:
            pv_loss, g_pv = 0.0, None
        else:
            h_obs, a_sup, a_nov = human
            m = h_obs.shape[0]
            q_s, cache_s = _q_forward(self.critic, h_obs, a_sup)
            q_n, cache_n = _q_forward(self.critic, h_obs, a_nov)
            pv_loss = float(np.mean((q_s - 1.0) ** 2) + np.mean((q_n + 1.0) ** 2))
            g_s, _ = mlp_backward(cache_s, (2.0 * (q_s - 1.0) / m)[:, None])
            g_n, _ = mlp_backward(cache_n, (2.0 * (q_n + 1.0) / m)[:, None])
            g_pv = tree_add(g_s, g_n)

        act_noise = rng.standard_normal((n, self.act_dim))
        head, _, _ = _actor_forward(self.actor_t, obs_next)
        a_next, logp_next = squashed_sample(head, act_noise)
        q_next, _ = _q_forward(self.critic_t, obs_next, a_next)
        y = cfg.gamma * (1.0 - done) * (q_next - self.alpha * logp_next)

        q, cache = _q_forward(self.critic, obs_u, act_u)
        td_loss = float(np.mean((q - y) ** 2))
        g_td, _ = mlp_backward(cache, (2.0 * (q - y) / n)[:, None])
        if not np.isfinite(pv_loss + td_loss):
            raise TrainingDiverged("non-finite critic loss")
        g_critic = g_td if g_pv is None else tree_add(g_pv, g_td)
        self.critic, self.opt_critic = adam_step(self.critic, g_critic,
                                                 self.opt_critic)

        pol_noise = rng.standard_normal((n, self.act_dim))
        head, inside, cache_a = _actor_forward(self.actor, obs_u)
        action, logp = squashed_sample(head, pol_noise)
        q_pi, cache_c = _q_forward(self.critic, obs_u, action)
        pol_loss = float(np.mean(self.alpha * logp - q_pi))
        _, d_in = mlp_backward(cache_c, np.full((n, 1), -1.0 / n))
        d_action = d_in[:, self.obs_dim:]
        d_mean, d_log_std = squashed_backward(
            head, pol_noise, action, d_action, np.full(n, self.alpha / n))
        og_a = np.concatenate([d_mean, d_log_std * inside], axis=-1)
        g_actor, _ = mlp_backward(cache_a, og_a)
        self.actor, self.opt_actor = adam_step(self.actor, g_actor, self.opt_actor)
        self.alpha = temperature_update(self.alpha, logp, cfg)

        self.critic_t = soft_update(self.critic, self.critic_t, cfg.tau)
        self.actor_t = soft_update(self.actor, self.actor_t, cfg.tau)

        mean_abs_q = float(np.mean(np.abs(_q_forward(self.critic, obs_u, act_u)[0])))
        if mean_abs_q > Q_ALARM:
            raise TrainingDiverged(
                f"critic mean |Q| {mean_abs_q:.3f} exceeded alarm {Q_ALARM}")
        metrics = {"pv_loss": pv_loss, "td_loss": td_loss, "policy_loss": pol_loss,
                   "alpha": self.alpha, "entropy": float(np.mean(-logp)),
                   "mean_abs_q": mean_abs_q}
        if human is not None and len(human[0]) > 0:
            metrics["q_human"] = float(np.mean(
                _q_forward(self.critic, human[0], human[1])[0]))
            metrics["q_novice"] = float(np.mean(
                _q_forward(self.critic, human[0], human[2])[0]))
        return metrics

    def state_entries(self):
        entries = {}
        entries.update(mlp_entries("critic", self.critic))
        entries.update(mlp_entries("critic_t", self.critic_t))
        entries.update(mlp_entries("actor", self.actor))
        entries.update(mlp_entries("actor_t", self.actor_t))
        entries["alpha"] = np.asarray(self.alpha)
        return entries

    def load_state_entries(self, entries):
        self.critic = mlp_from_entries("critic", entries)
        self.critic_t = mlp_from_entries("critic_t", entries)
        self.actor = mlp_from_entries("actor", entries)
        self.actor_t = mlp_from_entries("actor_t", entries)
        self.alpha = float(entries["alpha"])
