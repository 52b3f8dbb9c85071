"""Supervisor sources: scripted expert, recorded-session replay, remote human.

The scripted expert is a pure-pursuit path tracker with a small lateral-shift
corridor chooser (to slide around obstacles) and a hard braking envelope.  It
stands in for a human supervisor so that training and tests run unattended;
its takeover rule is deviation-or-predicted-trouble with hysteresis so
engagement does not chatter.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ReplayError
from .sim import SimConfig, WorldState, kinematic_step, point_at_arc, track_frame

SESSION_MAGIC = "# drive-session 1"


@dataclass
class InterventionDecision:
    intervened: bool
    a_h: np.ndarray | None
    source: str


@dataclass
class ExpertConfig:
    """Scripted-supervisor tuning knobs."""

    lookahead: float = 4.0
    deviation_threshold: float = 0.4
    horizon: int = 15
    disengage_patience: int = 5
    cruise_speed: float = 4.0
    turn_speed: float = 3.4
    clearance: float = 0.45
    shifts: tuple = (0.0, -0.55, 0.55, -1.1, 1.1)

    def __post_init__(self):
        for name in ("lookahead", "deviation_threshold", "horizon",
                     "disengage_patience", "cruise_speed", "turn_speed"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


def _corridor_shift(world: WorldState, cfg: ExpertConfig,
                    sim_cfg: SimConfig) -> tuple[float, float]:
    """Pick a lateral offset whose near path is clear of obstacles.

    Candidates are tried centered-first; the first one clearing every sampled
    path point by ``clearance`` wins, otherwise the least-bad one.  Returns
    (shift, worst clearance of the chosen candidate).
    """
    if len(world.obstacles) == 0:
        return 0.0, np.inf
    arcs = world.progress + np.arange(1.0, 9.0, 0.5)
    pts, normals = [], []
    for a in arcs:
        p, tangent = point_at_arc(world.scn, a)
        pts.append(p)
        normals.append([-tangent[1], tangent[0]])
    pts = np.asarray(pts)
    normals = np.asarray(normals)
    obs = world.obstacles
    best, best_score = 0.0, -np.inf
    for shift in cfg.shifts:
        path = pts + shift * normals
        d = np.hypot(path[:, None, 0] - obs[None, :, 0],
                     path[:, None, 1] - obs[None, :, 1])
        score = float((d - obs[None, :, 2] - sim_cfg.ego_radius).min())
        if score >= cfg.clearance:
            return shift, score
        if score > best_score:
            best, best_score = shift, score
    return best, best_score


def expert_action(world: WorldState, cfg: ExpertConfig,
                  sim_cfg: SimConfig) -> np.ndarray:
    """Pure-pursuit steering plus speed control with a hard braking envelope."""
    shift, score = _corridor_shift(world, cfg, sim_cfg)
    target_pt, tangent = point_at_arc(world.scn, world.progress + cfg.lookahead)
    target_pt = target_pt + shift * np.array([-tangent[1], tangent[0]])
    rel = target_pt - world.pos
    dist = max(float(np.hypot(rel[0], rel[1])), 1e-6)
    alpha = math.atan2(rel[1], rel[0]) - world.heading
    alpha = (alpha + math.pi) % (2.0 * math.pi) - math.pi
    curvature = 2.0 * math.sin(alpha) / dist
    steer = math.atan(curvature * sim_cfg.wheelbase) / sim_cfg.steer_max
    steer = float(np.clip(steer, -1.0, 1.0))

    target_v = cfg.cruise_speed
    if abs(steer) > 0.3:
        target_v = cfg.turn_speed
    if score < 0.6:
        target_v = min(target_v, 3.0)
    accel = float(np.clip(0.3 * (target_v - world.speed), -1.0, 1.0))

    # braking envelope along the current heading; a blocker that is itself
    # bearing down on the ego gets a last-second sidestep instead (parking
    # in its path would guarantee the impact the brake tries to avoid)
    if len(world.obstacles):
        hd = np.array([math.cos(world.heading), math.sin(world.heading)])
        rel_o = world.obstacles[:, :2] - world.pos
        along = rel_o @ hd
        cross = rel_o[:, 0] * hd[1] - rel_o[:, 1] * hd[0]
        margin = world.obstacles[:, 2] + sim_cfg.ego_radius
        ahead = (along > 0.0) & (np.abs(cross) < margin + 0.15)
        if ahead.any():
            gap = along[ahead] - margin[ahead]
            stop = world.speed ** 2 / (2.0 * sim_cfg.a_brake * 0.8) \
                + 0.2 * world.speed
            if float(gap.min()) < stop:
                k = np.flatnonzero(ahead)[int(np.argmin(gap))]
                rel = rel_o[k]
                closing = -float(rel @ world.obstacles[k, 3:5]) \
                    / max(float(np.hypot(*rel)), 1e-9)
                if closing > 0.05 and float(gap.min()) > 0.3:
                    steer = -1.0 if cross[k] > 0.0 else 1.0
                    accel = 0.5 if world.speed < 2.0 else 0.0
                elif world.speed < 0.15:
                    # braked to a standstill nose-to-blocker; the model can
                    # neither turn in place nor reverse, so creep out sideways
                    steer = -1.0 if cross[k] > 0.0 else 1.0
                    accel = 0.3
                else:
                    accel = -1.0
    return np.array([steer, accel])


def predict_trouble(world: WorldState, action, horizon: int,
                    sim_cfg: SimConfig) -> bool:
    """Hold the action for `horizon` steps; true if the rollout collides or
    leaves the road."""
    s = world
    for _ in range(horizon):
        s = kinematic_step(s, action, sim_cfg.dt, sim_cfg)
        if len(s.obstacles):
            gap = np.hypot(s.obstacles[:, 0] - s.x, s.obstacles[:, 1] - s.y)
            if np.any(gap < s.obstacles[:, 2] + sim_cfg.ego_radius):
                return True
        _, lateral, _ = track_frame(s.scn, s.pos)
        if abs(lateral) > sim_cfg.half_width + sim_cfg.ego_radius:
            return True
    return False


class ScriptedSupervisor:
    """Expert policy plus the takeover rule with hysteresis."""

    def __init__(self, cfg: ExpertConfig | None = None,
                 sim_cfg: SimConfig | None = None):
        self.cfg = cfg if cfg is not None else ExpertConfig()
        self.sim_cfg = sim_cfg if sim_cfg is not None else SimConfig()
        self._hold = 0

    def reset(self):
        self._hold = 0

    def decide(self, world: WorldState, a_n) -> InterventionDecision:
        a_h = expert_action(world, self.cfg, self.sim_cfg)
        trigger = (float(np.max(np.abs(np.asarray(a_n) - a_h)))
                   > self.cfg.deviation_threshold) \
            or predict_trouble(world, a_n, self.cfg.horizon, self.sim_cfg)
        if trigger:
            self._hold = self.cfg.disengage_patience
        else:
            self._hold = max(self._hold - 1, 0)
        engaged = trigger or self._hold > 0
        return InterventionDecision(engaged, a_h if engaged else None, "scripted")


# -- recorded sessions ------------------------------------------------------

class SessionWriter:
    """Line-oriented intervention log; floats via repr for byte-exact replay."""

    def __init__(self, path: str):
        self._fh = open(path, "w")
        self._fh.write(SESSION_MAGIC + "\n")

    def append(self, step: int, dec: InterventionDecision, a_n) -> None:
        if dec.intervened:
            ah = f"{float(dec.a_h[0])!r} {float(dec.a_h[1])!r}"
        else:
            ah = "- -"
        self._fh.write(f"{step} {int(dec.intervened)} {ah} "
                       f"{float(a_n[0])!r} {float(a_n[1])!r}\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_session(path: str) -> dict[int, InterventionDecision]:
    """Parse a session recording into {step: decision}."""
    decisions = {}
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != SESSION_MAGIC:
            raise ReplayError(f"unsupported session header: {header!r}")
        for ln, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ReplayError(f"{path}:{ln}: truncated session record")
            try:
                step_i = int(parts[0])
                flag = bool(int(parts[1]))
                a_h = None
                if flag:
                    a_h = np.array([float(parts[2]), float(parts[3])])
                decisions[step_i] = InterventionDecision(flag, a_h, "replay")
            except ValueError as exc:
                raise ReplayError(f"{path}:{ln}: bad session record ({exc})")
    return decisions


class ReplaySupervisor:
    """Feeds back a recorded session by step index.

    Steps without a record (an empty recording included) are non-intervened.
    """

    def __init__(self, path: str):
        self._decisions = load_session(path)

    def reset(self):
        pass

    def decide_at(self, step: int) -> InterventionDecision:
        return self._decisions.get(
            step, InterventionDecision(False, None, "replay"))


# -- remote human -----------------------------------------------------------

class Mailbox:
    """Latest-command cell between the network thread and the acting loop."""

    def __init__(self):
        self._lock = threading.Lock()
        self.engaged = False
        self.action = None
        self.stamp = -np.inf
        self.ignored = 0

    def set_engaged(self, flag: bool) -> None:
        with self._lock:
            self.engaged = flag
            if not flag:
                self.action = None

    def put_action(self, action, now: float) -> None:
        with self._lock:
            if not self.engaged:
                self.ignored += 1
                return
            self.action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
            self.stamp = now

    def peek(self):
        with self._lock:
            return self.engaged, self.action, self.stamp


class RemoteSupervisor:
    """Mailbox-backed human source; stale or absent commands mean hands-off."""

    def __init__(self, sim_cfg: SimConfig | None = None, staleness_periods: float = 3.0,
                 clock=time.monotonic):
        dt = (sim_cfg or SimConfig()).dt
        self.max_age = staleness_periods * dt
        self.clock = clock
        self.mailbox = Mailbox()

    def reset(self):
        pass

    def decide(self, world, a_n) -> InterventionDecision:
        engaged, action, stamp = self.mailbox.peek()
        if engaged and action is not None \
                and (self.clock() - stamp) <= self.max_age:
            return InterventionDecision(True, action.copy(), "remote")
        return InterventionDecision(False, None, "remote")
