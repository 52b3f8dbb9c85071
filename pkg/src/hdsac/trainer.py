"""Interactive training loop: novice acts, supervisor overrides, learner fits.

One process owns everything — environment, supervisor, agent, buffers — and
advances them in lockstep, one learner update per environment step after a
short warmup.  All randomness flows from a single seeded generator in fixed
draw order, so a run writes byte-identical metrics files when repeated.

Episode scenarios use seeds ``train_seed_base + episode`` and evaluation
always replays the fixed held-out seeds, so training never touches the
routes it is graded on.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass

import numpy as np

from .algo import AlgoConfig, HdsacAgent, mix_action
from .baselines import PvpAgent, SacAgent, SacReplay
from .buffers import ReplayBuffer, Transition, route_transition, sample_batches
from .errors import ConfigError, ContractViolation, TrainingDiverged
from .expert import (
    ExpertConfig,
    ReplaySupervisor,
    ScriptedSupervisor,
    SessionWriter,
)
from .nets import save_arrays
from .sim import DriveEnv, SimConfig

# tags that end an episode for value bootstrapping purposes; a timeout is an
# artifact of the step budget, not a statement about the state's value
TRUE_TERMINALS = ("destination", "off_road", "collision_limit")

EVAL_SEED_BASE = 9000
TRAIN_SEED_BASE = 1000


@dataclass
class RunConfig:
    algo: str = "hdsac"
    supervisor: str = "scripted"
    total_steps: int = 50_000
    warmup: int = 1_000
    buffer_capacity: int = 50_000
    window: int = 1_000
    eval_every: int = 5_000
    eval_episodes: int = 10
    seed: int = 0
    out_dir: str = "runs/default"
    record_session: bool = True
    session_path: str = ""       # existing recording to replay from
    port: int = 8765             # bridge endpoint for the remote supervisor
    pace_hz: float = 0.0         # >0 slows the loop to real time (remote use)
    save_buffers: bool = False   # dump replay-buffer contents at the end

    def __post_init__(self):
        if self.algo not in ("hdsac", "pvp", "sac"):
            raise ConfigError(f"unknown algo {self.algo!r}")
        if self.supervisor not in ("scripted", "replay", "remote"):
            raise ConfigError(f"unknown supervisor {self.supervisor!r}")
        if self.total_steps < 0:
            raise ConfigError("total_steps must not be negative")
        for name in ("warmup", "buffer_capacity", "window",
                     "eval_every", "eval_episodes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.supervisor == "replay" and not self.session_path:
            raise ConfigError("replay supervisor needs session_path")


def make_agent(name: str, obs_dim: int, cfg: AlgoConfig, seed):
    if name == "hdsac":
        return HdsacAgent(obs_dim, 2, cfg, rng=seed)
    if name == "pvp":
        return PvpAgent(obs_dim, 2, cfg, rng=seed)
    if name == "sac":
        return SacAgent(obs_dim, 2, cfg, rng=seed)
    raise ConfigError(f"unknown algo {name!r}")


def evaluate(agent, sim_cfg: SimConfig, seeds) -> dict:
    """Deterministic-policy rollouts on held-out routes.

    Returns are plain environment reward sums — evaluation is allowed to see
    the reward it is judging, the learner never was.
    """
    returns, successes, collisions, lengths = [], [], [], []
    for seed in seeds:
        env = DriveEnv(sim_cfg)
        obs = env.reset(seed)
        total, tag = 0.0, "none"
        while tag == "none":
            res = env.step(agent.act_mean(obs))
            obs = res.observation
            total += res.reward
            tag = res.terminated
        returns.append(total)
        successes.append(1.0 if tag == "destination" else 0.0)
        collisions.append(env.state.collisions)
        lengths.append(env.state.steps)
    return {"mean_return": float(np.mean(returns)),
            "mean_cost": float(np.mean(collisions)),
            "success_rate": float(np.mean(successes)),
            "collisions": int(np.sum(collisions)),
            "mean_steps": float(np.mean(lengths))}


class TrainingRun:
    """Owns one training run end to end; ``run()`` executes it."""

    def __init__(self, run_cfg: RunConfig, algo_cfg: AlgoConfig | None = None,
                 sim_cfg: SimConfig | None = None,
                 expert_cfg: ExpertConfig | None = None,
                 supervisor=None, on_step=None):
        self.cfg = run_cfg
        self.algo_cfg = algo_cfg if algo_cfg is not None else AlgoConfig()
        self.sim_cfg = sim_cfg if sim_cfg is not None else SimConfig()
        self.expert_cfg = expert_cfg if expert_cfg is not None else ExpertConfig()
        # read-only observer called once per step (the bridge's frame feed);
        # it must not touch the rng or the run stops being reproducible
        self.on_step = on_step
        self._last_metrics = {}

        self.env = DriveEnv(self.sim_cfg)
        obs_dim = self.sim_cfg.obs_dim
        self.agent = make_agent(run_cfg.algo, obs_dim, self.algo_cfg,
                                run_cfg.seed)
        self.rng = np.random.default_rng(run_cfg.seed)

        self.human_buf = self.novice_buf = self.sac_buf = None
        if run_cfg.algo == "sac":
            self.supervisor = None
            self.sac_buf = SacReplay(run_cfg.buffer_capacity, obs_dim)
        else:
            if supervisor is not None:
                self.supervisor = supervisor
            elif run_cfg.supervisor == "replay":
                self.supervisor = ReplaySupervisor(run_cfg.session_path)
            elif run_cfg.supervisor == "scripted":
                self.supervisor = ScriptedSupervisor(self.expert_cfg,
                                                     self.sim_cfg)
            else:
                raise ConfigError("remote supervisor must be constructed by "
                                  "the caller and passed in")
            self.human_buf = ReplayBuffer(run_cfg.buffer_capacity, obs_dim)
            self.novice_buf = ReplayBuffer(run_cfg.buffer_capacity, obs_dim)

    # -- single run ---------------------------------------------------------

    def run(self) -> dict:
        cfg = self.cfg
        os.makedirs(cfg.out_dir, exist_ok=True)
        metrics_path = os.path.join(cfg.out_dir, "metrics.jsonl")
        eval_path = os.path.join(cfg.out_dir, "eval.jsonl")
        writer = None
        if cfg.record_session and self.supervisor is not None \
                and cfg.supervisor != "replay":
            writer = SessionWriter(os.path.join(cfg.out_dir, "run.session"))

        period = 1.0 / cfg.pace_hz if cfg.pace_hz > 0 else None

        episode = 0
        obs = self.env.reset(TRAIN_SEED_BASE + episode)
        if self.supervisor is not None:
            self.supervisor.reset()

        win = _WindowStats()
        takeover_rates = []
        total_collisions = 0
        human_data = 0          # supervisor-labelled transitions so far
        total_data = 0          # all stored transitions so far
        episodes_done = 0
        last_eval = {}
        try:
            with open(metrics_path, "w") as mfh, open(eval_path, "w") as efh:
                for step in range(1, cfg.total_steps + 1):
                    tick = time.monotonic() if period else None
                    a_n, _ = self.agent.act(obs, self.rng)
                    if self.supervisor is None:
                        dec = None
                        a_exec = a_n
                    elif isinstance(self.supervisor, ReplaySupervisor):
                        dec = self.supervisor.decide_at(step)
                        a_exec = mix_action(a_n, dec.a_h, dec.intervened)
                    else:
                        dec = self.supervisor.decide(self.env.state, a_n)
                        a_exec = mix_action(a_n, dec.a_h, dec.intervened)
                    res = self.env.step(a_exec)
                    done = 1.0 if res.terminated in TRUE_TERMINALS else 0.0

                    if self.supervisor is None:
                        self.sac_buf.push(obs, a_exec, res.reward,
                                          res.observation, done)
                    else:
                        route_transition(
                            Transition(obs, np.asarray(a_exec),
                                       res.observation, done,
                                       dec.intervened, a_n),
                            self.human_buf, self.novice_buf)
                        if dec.intervened:
                            human_data += 1
                        if writer is not None:
                            writer.append(step, dec, a_n)
                    total_data += 1

                    win.step(dec, res)
                    total_collisions += int(res.cost)
                    obs = res.observation

                    if self.on_step is not None:
                        self.on_step(step, self.env.state, dec, {
                            "takeover_rate": win.takeovers / max(win.steps, 1),
                            "episodes": episodes_done,
                            "collisions": total_collisions,
                            "human_data": human_data,
                            "total_data": total_data,
                            **self._last_metrics,
                        })

                    if res.terminated != "none":
                        win.end_episode(res.terminated)
                        episodes_done += 1
                        episode += 1
                        obs = self.env.reset(TRAIN_SEED_BASE + episode)
                        if self.supervisor is not None:
                            self.supervisor.reset()

                    if step > cfg.warmup:
                        self._learn(win)

                    if step % cfg.window == 0:
                        row = win.flush(step, human_data, total_data,
                                        total_collisions)
                        takeover_rates.append(row["takeover_rate"])
                        mfh.write(json.dumps(row, sort_keys=True) + "\n")

                    if step % cfg.eval_every == 0 or step == cfg.total_steps:
                        last_eval = evaluate(
                            self.agent, self.sim_cfg,
                            range(EVAL_SEED_BASE,
                                  EVAL_SEED_BASE + cfg.eval_episodes))
                        erow = dict(last_eval, step=step)
                        efh.write(json.dumps(erow, sort_keys=True) + "\n")
                        save_arrays(os.path.join(cfg.out_dir, "latest.ckpt"),
                                    self.agent.state_entries())

                    if period:
                        lag = period - (time.monotonic() - tick)
                        if lag > 0:
                            time.sleep(lag)
        except TrainingDiverged:
            save_arrays(os.path.join(cfg.out_dir, "diverged.ckpt"),
                        self.agent.state_entries())
            raise
        finally:
            if writer is not None:
                writer.close()

        save_arrays(os.path.join(cfg.out_dir, "final.ckpt"),
                    self.agent.state_entries())
        if cfg.save_buffers:
            save_arrays(os.path.join(cfg.out_dir, "buffers.ckpt"),
                        self._buffer_snapshot())
        if self.human_buf is not None and human_data != self.human_buf.inserted:
            raise ContractViolation(
                f"takeover bookkeeping drifted: counted {human_data}, "
                f"buffer recorded {self.human_buf.inserted}")
        summary = {
            "algo": cfg.algo, "seed": cfg.seed, "steps": cfg.total_steps,
            "episodes": episodes_done, "train_collisions": total_collisions,
            "human_data": human_data, "total_data": total_data,
            "takeover_first": takeover_rates[0] if takeover_rates else 0.0,
            "takeover_final": takeover_rates[-1] if takeover_rates else 0.0,
            **{f"eval_{k}": v for k, v in last_eval.items()},
        }
        with open(os.path.join(cfg.out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, sort_keys=True, indent=2)
        return summary

    def _buffer_snapshot(self) -> dict:
        out = {}
        for name, buf in (("human", self.human_buf),
                          ("novice", self.novice_buf),
                          ("sac", self.sac_buf)):
            if buf is None:
                continue
            n = len(buf)
            for col in ("obs", "act", "next_obs", "done", "rew", "a_nov"):
                arr = getattr(buf, col, None)
                if arr is not None:
                    out[f"{name}/{col}"] = arr[:n]
        return out

    def _learn(self, win) -> None:
        cfg = self.algo_cfg
        if self.supervisor is None:
            if len(self.sac_buf) == 0:
                return
            metrics = self.agent.update(
                self.rng, self.sac_buf.sample(cfg.batch_size, self.rng))
        else:
            if len(self.human_buf) + len(self.novice_buf) == 0:
                return
            human, union = sample_batches(self.human_buf, self.novice_buf,
                                          cfg.batch_size, self.rng)
            metrics = self.agent.update(self.rng, human, union)
        win.learn(metrics)
        self._last_metrics = {k: metrics[k] for k in ("q_human", "q_novice")
                              if k in metrics}


class _WindowStats:
    """Accumulates one metrics window; ``flush`` emits the row and clears."""

    def __init__(self):
        self._clear()

    def _clear(self):
        self.steps = 0
        self.takeovers = 0
        self.collisions = 0
        self.episode_tags = []
        self.metric_sums = {}

    def step(self, dec, res) -> None:
        self.steps += 1
        if dec is not None and dec.intervened:
            self.takeovers += 1
        self.collisions += int(res.cost)

    def end_episode(self, tag: str) -> None:
        self.episode_tags.append(tag)

    def learn(self, metrics: dict) -> None:
        # Per-key counts: q_human/q_novice only exist on updates that saw
        # human data, so each key averages over its own occurrences.
        for k, v in metrics.items():
            total, n = self.metric_sums.get(k, (0.0, 0))
            self.metric_sums[k] = (total + v, n + 1)

    def flush(self, step: int, human_data: int, total_data: int,
              cost_total: int) -> dict:
        ended = len(self.episode_tags)
        row = {
            "step": step,
            "takeover_rate": self.takeovers / max(self.steps, 1),
            "collisions": self.collisions,
            "cost_total": cost_total,
            "human_data": human_data,
            "total_data": total_data,
            "episodes_ended": ended,
            "success_rate": (sum(1 for t in self.episode_tags
                                 if t == "destination") / ended
                             if ended else 0.0),
        }
        for k, (total, n) in sorted(self.metric_sums.items()):
            row[k] = total / n
        self._clear()
        return row
