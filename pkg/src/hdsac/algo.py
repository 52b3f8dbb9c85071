"""Distributional soft actor-critic updated from intervention labels.

The learner keeps a Gaussian return model N(Q(s,a), sigma(s,a)^2) per
state-action pair and never reads an environment reward.  Two signals move
the critic: proxy-value labels (+1 on the supervisor's action, -1 on the
overridden novice action) and a reward-free bootstrap whose target is the
discounted next-step return sample plus the entropy bonus.  Both reduce to
the same Gaussian negative-log-likelihood gradient with different targets,
so the critic code is one coefficient rule applied three ways.  The actor
ascends the critic mean under entropy regularization and the temperature
tracks a fixed target entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolation, TrainingDiverged
from .nets import (
    LOG_2PI,
    GaussianHead,
    Mlp,
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
    tree_zeros_like,
)

# clamp windows for the two Gaussian heads.  The critic window is much
# tighter than the policy one because the likelihood coefficients carry
# 1/sigma^3 and labels live in [-1, 1].
LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
LOG_SIG_MIN, LOG_SIG_MAX = -3.0, 2.0
ALPHA_MIN = 1e-6
# mean |Q| past this value means the bootstrap is feeding on itself; with
# labels in {-1, +1} and a small temperature the critic has no business here
Q_ALARM = 2.0


@dataclass
class AlgoConfig:
    """Hyperparameters of the learner.

    ``eta`` rescales only the sigma path of the critic gradient, tuning how
    fast the predicted spread tracks the residuals without touching the mean
    update.  ``alpha`` is the initial temperature; the live value sits on the
    agent and is clipped to [ALPHA_MIN, alpha_max].  ``target_entropy``
    defaults to minus the action dimension used throughout (2).
    """

    gamma: float = 0.99
    eta: float = 1.0
    alpha: float = 0.01
    alpha_max: float = 0.01
    target_entropy: float = -2.0
    tau: float = 0.005
    clip_c: float = 3.0
    batch_size: int = 128
    lr: float = 3e-4
    lr_alpha: float = 3e-4
    hidden: tuple = (128, 128)

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        for name in ("eta", "alpha", "alpha_max", "tau", "clip_c", "lr", "lr_alpha"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if int(self.batch_size) <= 0:
            raise ConfigError("batch_size must be positive")


@dataclass
class ReturnDistribution:
    """Gaussian return model at one (or a batch of) state-action pair(s)."""

    q_mean: np.ndarray
    sigma: np.ndarray


def _clip_mask(raw, lo, hi):
    """Hard clip plus the pass-through mask of its exact derivative."""
    clipped = np.clip(raw, lo, hi)
    inside = ((raw > lo) & (raw < hi)).astype(np.float64)
    return clipped, inside


def _critic_forward(net: Mlp, obs, act):
    """Critic pass on concatenated (obs, action) input.

    Returns (q, sigma, inside, cache) where ``inside`` masks the sigma-head
    clamp for the backward pass.
    """
    x = np.concatenate([np.asarray(obs, dtype=np.float64),
                        np.asarray(act, dtype=np.float64)], axis=-1)
    out, cache = mlp_forward(net, x)
    log_sig, inside = _clip_mask(out[..., 1], LOG_SIG_MIN, LOG_SIG_MAX)
    return out[..., 0], np.exp(log_sig), inside, cache


def critic_eval(net: Mlp, obs, act) -> ReturnDistribution:
    """Return distribution at (obs, act); deterministic, sigma clamped."""
    q, sigma, _, _ = _critic_forward(net, obs, act)
    return ReturnDistribution(q, sigma)


def _actor_forward(net: Mlp, obs):
    """Policy pass: obs -> (head, log-std clamp mask, cache).

    The final layer packs [mean | log_std]; log_std is hard-clipped.
    """
    out, cache = mlp_forward(net, np.asarray(obs, dtype=np.float64))
    d = out.shape[-1] // 2
    log_std, inside = _clip_mask(out[..., d:], LOG_STD_MIN, LOG_STD_MAX)
    return GaussianHead(out[..., :d], log_std), inside, cache


def _nll_and_output_grad(q, sigma, inside, y, eta):
    """Gaussian negative-log-likelihood of targets y and its output-layer grads.

    The value is the plain per-sample NLL (constant included).  The gradient
    follows the single coefficient rule shared by every critic loss here:

        d/dQ     = -(y - Q) / sigma^2
        d/dsigma = -((y - Q)^2 - sigma^2) / sigma^3   (scaled by eta)

    Returns (mean nll, per-sample (N, 2) grads wrt the raw network outputs),
    chaining d/dsigma through exp and the clamp.
    """
    err = y - q
    nll = 0.5 * (err / sigma) ** 2 + np.log(sigma) + 0.5 * LOG_2PI
    d_q = -err / sigma ** 2
    d_sigma = -(err ** 2 - sigma ** 2) / sigma ** 3
    d_raw = eta * d_sigma * sigma * inside
    return float(np.mean(nll)), np.stack([d_q, d_raw], axis=-1)


def pv_grads(net: Mlp, obs, act_sup, act_nov, eta: float):
    """Proxy-value loss and gradients on intervention pairs.

    Every sample is a step where the supervisor overrode the novice, so it is
    labeled twice: the supervisor's action toward return +1, the rejected
    novice action toward -1, each fitted by Gaussian likelihood.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    n = obs.shape[0]
    if n == 0:
        return 0.0, tree_zeros_like(net)
    q_s, sig_s, in_s, cache_s = _critic_forward(net, obs, act_sup)
    loss_s, og_s = _nll_and_output_grad(q_s, sig_s, in_s, 1.0, eta)
    q_n, sig_n, in_n, cache_n = _critic_forward(net, obs, act_nov)
    loss_n, og_n = _nll_and_output_grad(q_n, sig_n, in_n, -1.0, eta)
    g_s, _ = mlp_backward(cache_s, og_s / n)
    g_n, _ = mlp_backward(cache_n, og_n / n)
    return loss_s + loss_n, tree_add(g_s, g_n)


def td_targets(critic_t: Mlp, actor_t: Mlp, obs_next, alpha: float,
               cfg: AlgoConfig, act_noise, z_noise, done=None):
    """Bootstrap targets y = gamma * (z' - alpha * log pi(a'|s')).

    a' is a reparameterized sample from the target policy and z' a Gaussian
    sample from the target critic, clipped to q +- clip_c * sigma so a single
    tail draw cannot blow up the regression.  ``done`` (0/1) zeroes the
    continuation at terminal steps.  No reward enters, and no gradient flows
    through anything here.  Deterministic given the two noise arrays.
    """
    head, _, _ = _actor_forward(actor_t, obs_next)
    a_next, logp = squashed_sample(head, act_noise)
    q, sigma, _, _ = _critic_forward(critic_t, obs_next, a_next)
    z = q + np.clip(z_noise, -cfg.clip_c, cfg.clip_c) * sigma
    y = cfg.gamma * (z - alpha * logp)
    if done is not None:
        y = y * (1.0 - np.asarray(done, dtype=np.float64))
    return y


def td_grads(net: Mlp, obs, act, targets, eta: float):
    """Likelihood fit of the critic to precomputed bootstrap targets."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    n = obs.shape[0]
    if n == 0:
        return 0.0, tree_zeros_like(net)
    q, sigma, inside, cache = _critic_forward(net, obs, act)
    loss, og = _nll_and_output_grad(q, sigma, inside, np.asarray(targets), eta)
    g, _ = mlp_backward(cache, og / n)
    return loss, g


def policy_grads(actor: Mlp, critic: Mlp, obs, alpha: float, noise):
    """Entropy-regularized policy objective and exact gradients.

    Reparameterized actions flow through the critic mean; the reported loss
    is the negated objective so a descent step maximizes E[Q - alpha log pi].
    Critic parameters are frozen (only the input gradient is used).

    Returns (loss, actor grads, per-sample log pi).
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    n = obs.shape[0]
    head, inside, cache_a = _actor_forward(actor, obs)
    action, logp = squashed_sample(head, noise)
    q, _, _, cache_c = _critic_forward(critic, obs, action)
    loss = -float(np.mean(q - alpha * logp))
    og_c = np.zeros((n, 2))
    og_c[:, 0] = -1.0 / n
    _, d_input = mlp_backward(cache_c, og_c)
    d_action = d_input[:, obs.shape[1]:]
    d_logp = np.full(n, alpha / n)
    d_mean, d_log_std = squashed_backward(head, noise, action, d_action, d_logp)
    og_a = np.concatenate([d_mean, d_log_std * inside], axis=-1)
    grads, _ = mlp_backward(cache_a, og_a)
    return loss, grads, logp


def temperature_update(alpha: float, logp, cfg: AlgoConfig) -> float:
    """Move the temperature toward the target entropy.

    Entropy above target shrinks alpha, below target grows it; the result is
    clipped to [ALPHA_MIN, alpha_max].
    """
    step = cfg.lr_alpha * (float(np.mean(-np.asarray(logp))) - cfg.target_entropy)
    return float(np.clip(alpha - step, ALPHA_MIN, cfg.alpha_max))


def mix_action(a_nov, a_sup, intervened: bool):
    """Behavior action: the supervisor's exactly when intervening, else the
    novice's — a hard switch, never a blend."""
    if intervened:
        if a_sup is None:
            raise ContractViolation("intervention flagged without a supervisor action")
        return a_sup
    return a_nov


class HdsacAgent:
    """One learner: networks, targets, optimizers and live temperature.

    All mutation happens in ``update`` on a single thread; everything else is
    read-only evaluation, safe to call from an acting loop holding the same
    object.
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
        self.critic = mlp_init([obs_dim + act_dim, *cfg.hidden, 2], rng)
        self.actor = mlp_init([obs_dim, *cfg.hidden, 2 * act_dim], rng)
        self.critic_t = self.critic.copy()
        self.actor_t = self.actor.copy()
        self.opt_critic = adam_init(self.critic, cfg.lr)
        self.opt_actor = adam_init(self.actor, cfg.lr)
        self.alpha = float(cfg.alpha)

    def act(self, obs, rng) -> tuple[np.ndarray, float]:
        """Stochastic action for one observation, noise drawn from ``rng``."""
        head, _, _ = _actor_forward(self.actor, obs)
        action, logp = squashed_sample(head, rng.standard_normal(head.mean.shape))
        return action, float(logp)

    def act_mean(self, obs) -> np.ndarray:
        """Deterministic action (squashed policy mean), used for evaluation."""
        head, _, _ = _actor_forward(self.actor, obs)
        return np.tanh(head.mean)

    def update(self, rng, human, union) -> dict:
        """One full learner step on pre-sampled batches.

        Parameters
        ----------
        rng : np.random.Generator
            Source of the three noise draws (target action, target return
            sample, policy resample) — fixed order, so runs are reproducible.
        human : tuple (obs, act_sup, act_nov) or None
            Intervention pairs; None or empty when no takeover happened yet.
        union : tuple (obs, act, obs_next, done)
            Behavior transitions from the merged buffers.  Note there is no
            reward argument anywhere.
        """
        cfg = self.cfg
        obs_u, act_u, obs_next, done = union
        n = obs_u.shape[0]
        have_human = human is not None and len(human[0]) > 0
        if have_human:
            pv_loss, g_pv = pv_grads(self.critic, human[0], human[1], human[2], cfg.eta)
        else:
            pv_loss, g_pv = 0.0, tree_zeros_like(self.critic)
        act_noise = rng.standard_normal((n, self.act_dim))
        z_noise = rng.standard_normal(n)
        y = td_targets(self.critic_t, self.actor_t, obs_next, self.alpha,
                       cfg, act_noise, z_noise, done)
        td_loss, g_td = td_grads(self.critic, obs_u, act_u, y, cfg.eta)
        if not np.isfinite(pv_loss + td_loss):
            raise TrainingDiverged("non-finite critic loss")
        self.critic, self.opt_critic = adam_step(
            self.critic, tree_add(g_pv, g_td), self.opt_critic)

        pol_noise = rng.standard_normal((n, self.act_dim))
        pol_loss, g_pol, logp = policy_grads(
            self.actor, self.critic, obs_u, self.alpha, pol_noise)
        self.actor, self.opt_actor = adam_step(self.actor, g_pol, self.opt_actor)
        self.alpha = temperature_update(self.alpha, logp, cfg)

        self.critic_t = soft_update(self.critic, self.critic_t, cfg.tau)
        self.actor_t = soft_update(self.actor, self.actor_t, cfg.tau)

        dist = critic_eval(self.critic, obs_u, act_u)
        mean_abs_q = float(np.mean(np.abs(dist.q_mean)))
        if mean_abs_q > Q_ALARM:
            raise TrainingDiverged(
                f"critic mean |Q| {mean_abs_q:.3f} exceeded alarm {Q_ALARM}")
        metrics = {"pv_loss": pv_loss, "td_loss": td_loss, "policy_loss": pol_loss,
                   "alpha": self.alpha, "entropy": float(np.mean(-logp)),
                   "mean_abs_q": mean_abs_q, "mean_sigma": float(np.mean(dist.sigma))}
        if have_human:
            # the telemetry pair watched during interactive runs: how far the
            # critic has pushed endorsed actions above overridden ones
            metrics["q_human"] = float(np.mean(
                critic_eval(self.critic, human[0], human[1]).q_mean))
            metrics["q_novice"] = float(np.mean(
                critic_eval(self.critic, human[0], human[2]).q_mean))
        return metrics

    # -- checkpointing ----------------------------------------------------

    def state_entries(self) -> dict[str, np.ndarray]:
        entries = {}
        entries.update(mlp_entries("critic", self.critic))
        entries.update(mlp_entries("critic_t", self.critic_t))
        entries.update(mlp_entries("actor", self.actor))
        entries.update(mlp_entries("actor_t", self.actor_t))
        entries["alpha"] = np.asarray(self.alpha)
        return entries

    def load_state_entries(self, entries: dict[str, np.ndarray]) -> None:
        self.critic = mlp_from_entries("critic", entries)
        self.critic_t = mlp_from_entries("critic_t", entries)
        self.actor = mlp_from_entries("actor", entries)
        self.actor_t = mlp_from_entries("actor_t", entries)
        self.alpha = float(entries["alpha"])
