"""Replay storage for intervention-guided training.

Two ring buffers, one per data source: steps the novice drove alone and
steps the supervisor overrode.  Transitions carry no reward column at all —
the learner's batches are assembled here, so nothing downstream can smuggle
one in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass
class Transition:
    obs: np.ndarray
    act: np.ndarray          # the action actually executed
    next_obs: np.ndarray
    done: float              # 1.0 exactly on true episode end, not timeout
    intervened: bool
    a_nov: np.ndarray        # what the novice wanted (== act when alone)


class ReplayBuffer:
    """Fixed-capacity FIFO over flat float arrays."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int = 2):
        if capacity <= 0:
            raise ContractViolation("capacity must be positive")
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.a_nov = np.zeros((capacity, act_dim))
        self.size = 0
        self.head = 0
        self.inserted = 0        # lifetime pushes, not capped by capacity

    def __len__(self) -> int:
        return self.size

    def push(self, tr: Transition) -> None:
        i = self.head
        self.obs[i] = tr.obs
        self.act[i] = tr.act
        self.next_obs[i] = tr.next_obs
        self.done[i] = tr.done
        self.a_nov[i] = tr.a_nov
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.inserted += 1

    def sample_idx(self, n: int, rng) -> np.ndarray:
        if self.size == 0:
            raise ContractViolation("sampling from an empty buffer")
        return rng.integers(0, self.size, size=n)

    def gather(self, idx):
        return (self.obs[idx], self.act[idx], self.next_obs[idx],
                self.done[idx], self.a_nov[idx])


def route_transition(tr: Transition, human_buf: ReplayBuffer,
                     novice_buf: ReplayBuffer) -> None:
    """Intervened steps go to the human buffer, the rest to the novice one."""
    (human_buf if tr.intervened else novice_buf).push(tr)


def sample_batches(human_buf: ReplayBuffer, novice_buf: ReplayBuffer,
                   n: int, rng):
    """Draw the two batches one learner step consumes.

    The behavior batch mixes both sources evenly once both are non-empty
    (all from one side before then).  The intervention batch is drawn from
    the human buffer alone; it is None before the first takeover.

    Returns (human, union) shaped for the learner: ``human`` is
    (obs, act_sup, act_nov) and ``union`` is (obs, act, next_obs, done).
    """
    n_h = len(human_buf)
    n_n = len(novice_buf)
    if n_h == 0 and n_n == 0:
        raise ContractViolation("sampling before any transition was stored")

    if n_h == 0:
        parts = [novice_buf.gather(novice_buf.sample_idx(n, rng))]
    elif n_n == 0:
        parts = [human_buf.gather(human_buf.sample_idx(n, rng))]
    else:
        k = n // 2
        parts = [human_buf.gather(human_buf.sample_idx(k, rng)),
                 novice_buf.gather(novice_buf.sample_idx(n - k, rng))]
    obs = np.concatenate([p[0] for p in parts])
    act = np.concatenate([p[1] for p in parts])
    nxt = np.concatenate([p[2] for p in parts])
    done = np.concatenate([p[3] for p in parts])
    union = (obs, act, nxt, done)

    human = None
    if n_h > 0:
        # capped at the stored count so a nearly-empty human buffer does not
        # flood the label loss with copies of one takeover
        idx = human_buf.sample_idx(min(n, n_h), rng)
        o, a_sup, _, _, a_nov = human_buf.gather(idx)
        human = (o, a_sup, a_nov)
    return human, union
