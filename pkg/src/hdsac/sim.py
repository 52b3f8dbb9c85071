"""Deterministic 2D top-down driving micro-simulator.

A kinematic-bicycle ego vehicle follows procedurally generated checkpoint
routes past disc obstacles (static or drifting at constant velocity).  The
observation bundles an ego block (speed, lateral offset, heading error), a
ring of analytic ray-cast distances to the obstacles, the next checkpoints
in ego frame, and a one-hot driving command.  Rewards exist for evaluation
and reward-based baselines only; the intervention learner never reads them.

Everything is float64 and seeded: identical (seed, action sequence) pairs
reproduce bitwise-identical trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractViolation

STRAIGHT, LEFT, RIGHT = 0, 1, 2
_COMMAND_NAMES = ("straight", "left", "right")

SCENARIO_MAGIC = "# drive-scenario 1"
TRAJECTORY_MAGIC = "# drive-trajectory 1"


@dataclass
class SimConfig:
    """Geometry, dynamics and reward coefficients of the micro-sim."""

    n_rays: int = 60
    max_range: float = 20.0
    k_checkpoints: int = 10
    dt: float = 0.1
    v_max: float = 8.0
    wheelbase: float = 1.0
    half_width: float = 1.75
    ego_radius: float = 0.5
    steer_max: float = 0.5          # rad at |steer| = 1
    a_max: float = 3.0              # m/s^2 at accel = +1
    a_brake: float = 6.0            # m/s^2 at accel = -1
    c_disp: float = 1.0
    c_speed: float = 0.1
    c_collision: float = 1.0
    capture_radius: float = 2.0
    collision_limit: int = 5
    timeout_steps: int = 1200
    checkpoint_spacing: float = 2.0
    nav_scale: float = 20.0         # meters mapped to 1.0 in the nav block
    obstacle_density: float = 1.0   # 0 disables obstacles entirely

    def __post_init__(self):
        if self.n_rays < 1:
            raise ConfigError("n_rays must be >= 1")
        if self.k_checkpoints < 1:
            raise ConfigError("k_checkpoints must be >= 1")
        if self.half_width <= 0:
            raise ConfigError("half_width must be positive")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.v_max <= 0 or self.max_range <= 0:
            raise ConfigError("v_max and max_range must be positive")
        if self.obstacle_density < 0:
            raise ConfigError("obstacle_density must be >= 0")

    @property
    def obs_dim(self) -> int:
        return 3 + self.n_rays + 2 * self.k_checkpoints + 3


@dataclass
class Scenario:
    """Immutable track description: centerline, checkpoints, obstacle table."""

    center: np.ndarray          # (P, 2) dense centerline
    checkpoints: np.ndarray     # (C, 2)
    commands: np.ndarray        # (C,) int tags, command of the local segment
    obstacles: np.ndarray       # (M, 5) columns x, y, radius, vx, vy
    cum_arc: np.ndarray = field(default=None, repr=False)
    cp_arc: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.checkpoints) == 0:
            raise ConfigError("scenario needs at least one checkpoint")
        if len(self.obstacles) and np.any(self.obstacles[:, 2] <= 0):
            raise ConfigError("obstacle radii must be positive")
        seg = np.diff(self.center, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.cum_arc = np.concatenate([[0.0], np.cumsum(seg_len)])
        # arc position of every checkpoint, for pass-by clearing
        self.cp_arc = np.array([_project(self.center, self.cum_arc, p)[0]
                                for p in self.checkpoints])


@dataclass
class WorldState:
    x: float
    y: float
    heading: float
    speed: float
    obstacles: np.ndarray       # live copy, positions advance each step
    scn: Scenario
    seed: int
    next_idx: int = 0
    steps: int = 0
    progress: float = 0.0       # arc length along the centerline
    lateral: float = 0.0
    heading_err: float = 0.0
    collisions: int = 0
    overlap: np.ndarray = None  # per-obstacle contact flags, edge detection
    terminated: str = "none"

    def __post_init__(self):
        if self.overlap is None:
            self.overlap = np.zeros(len(self.obstacles), dtype=bool)

    def copy(self) -> "WorldState":
        return WorldState(self.x, self.y, self.heading, self.speed,
                          self.obstacles.copy(), self.scn, self.seed,
                          self.next_idx, self.steps, self.progress,
                          self.lateral, self.heading_err, self.collisions,
                          self.overlap.copy(), self.terminated)

    @property
    def pos(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    cost: float
    terminated: str


def _wrap_angle(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def _project(center, cum_arc, p):
    """Project point p onto the centerline polyline.

    Returns (arc length, signed lateral offset, tangent angle).  Sign of the
    lateral offset is positive to the left of the travel direction.
    """
    a = center[:-1]
    ab = center[1:] - a
    len2 = (ab ** 2).sum(axis=1)
    t = np.clip(((p - a) * ab).sum(axis=1) / len2, 0.0, 1.0)
    proj = a + t[:, None] * ab
    d2 = ((p - proj) ** 2).sum(axis=1)
    i = int(np.argmin(d2))
    seg_len = math.sqrt(len2[i])
    tangent = ab[i] / seg_len
    off = p - proj[i]
    lateral = tangent[0] * off[1] - tangent[1] * off[0]
    arc = cum_arc[i] + t[i] * seg_len
    return float(arc), float(lateral), math.atan2(tangent[1], tangent[0])


def track_frame(scn: Scenario, p) -> tuple[float, float, float]:
    """(arc length, signed lateral offset, tangent angle) of point p."""
    return _project(scn.center, scn.cum_arc, np.asarray(p, dtype=np.float64))


def point_at_arc(scn: Scenario, arc: float):
    """Centerline point and unit tangent at a given arc length (clamped)."""
    cum = scn.cum_arc
    arc = float(np.clip(arc, 0.0, cum[-1]))
    i = int(np.clip(np.searchsorted(cum, arc, side="right") - 1, 0,
                    len(scn.center) - 2))
    seg = scn.center[i + 1] - scn.center[i]
    seg_len = max(float(np.hypot(seg[0], seg[1])), 1e-12)
    t = (arc - cum[i]) / seg_len
    return scn.center[i] + t * seg, seg / seg_len


# -- scenario generation ----------------------------------------------------

def generate_scenario(seed: int, cfg: SimConfig) -> Scenario:
    """Procedural route + obstacle layout, fully determined by the seed.

    The route opens with a straight block and then alternates randomly drawn
    straight/left/right blocks.  Obstacles sit off-center along the route
    with a guaranteed clear corridor on the opposite side.
    """
    rng = np.random.default_rng(seed)
    ds = 0.5
    pts = [np.zeros(2)]
    tags = [STRAIGHT]
    heading = 0.0
    n_blocks = int(rng.integers(4, 7))
    for b in range(n_blocks):
        kind = STRAIGHT if b == 0 else int(rng.integers(0, 3))
        if kind == STRAIGHT:
            length = float(rng.uniform(15.0, 30.0))
            n = max(int(length / ds), 2)
            d = np.array([math.cos(heading), math.sin(heading)])
            for k in range(1, n + 1):
                pts.append(pts[-1] + d * (length / n))
                tags.append(kind)
        else:
            radius = float(rng.uniform(8.0, 16.0))
            angle = float(rng.uniform(np.pi / 4, np.pi / 2))
            sign = 1.0 if kind == LEFT else -1.0
            n = max(int(radius * angle / ds), 2)
            for _ in range(n):
                heading += sign * angle / n
                d = np.array([math.cos(heading), math.sin(heading)])
                pts.append(pts[-1] + d * (radius * angle / n))
                tags.append(kind)
    center = np.asarray(pts)
    tags = np.asarray(tags)

    seg = np.diff(center, axis=0)
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
    total = cum[-1]

    # checkpoints every checkpoint_spacing meters of arc, destination last
    cp_arcs = np.arange(cfg.checkpoint_spacing, total, cfg.checkpoint_spacing)
    if len(cp_arcs) == 0 or total - cp_arcs[-1] > 1e-9:
        cp_arcs = np.concatenate([cp_arcs, [total]])
    idx = np.searchsorted(cum, cp_arcs, side="right") - 1
    idx = np.clip(idx, 0, len(center) - 2)
    frac = (cp_arcs - cum[idx]) / np.maximum(cum[idx + 1] - cum[idx], 1e-12)
    checkpoints = center[idx] + frac[:, None] * (center[idx + 1] - center[idx])
    commands = tags[np.clip(idx + 1, 0, len(tags) - 1)]

    n_obs = int(round(cfg.obstacle_density * min(max(total // 12.0, 4), 12)))
    rows = []
    if n_obs > 0:
        slots = np.linspace(12.0, total - 6.0, n_obs)
        for s in slots:
            arc = s + float(rng.uniform(-1.5, 1.5))
            j = int(np.clip(np.searchsorted(cum, arc) - 1, 0, len(center) - 2))
            tangent = center[j + 1] - center[j]
            tangent = tangent / np.linalg.norm(tangent)
            normal = np.array([-tangent[1], tangent[0]])
            lat = float(rng.uniform(0.9, 1.4)) * (1.0 if rng.random() < 0.5 else -1.0)
            pos = center[j] + normal * lat
            r = float(rng.uniform(0.3, 0.5))
            if rng.random() < 0.3:
                v = tangent * float(rng.uniform(0.3, 0.8)) \
                    * (1.0 if rng.random() < 0.7 else -1.0)
            else:
                v = np.zeros(2)
            rows.append([pos[0], pos[1], r, v[0], v[1]])
    obstacles = np.asarray(rows, dtype=np.float64).reshape(len(rows), 5)
    return Scenario(center, checkpoints, commands, obstacles)


def initial_state(scn: Scenario, seed: int) -> WorldState:
    d = scn.center[1] - scn.center[0]
    return WorldState(float(scn.center[0, 0]), float(scn.center[0, 1]),
                      math.atan2(d[1], d[0]), 0.0,
                      scn.obstacles.copy(), scn, seed)


def reset(scenario_seed: int, cfg: SimConfig):
    """Deterministic world from seed; ego at route start at rest."""
    scn = generate_scenario(scenario_seed, cfg)
    state = initial_state(scn, scenario_seed)
    return state, observe(state, cfg)


# -- dynamics ---------------------------------------------------------------

def kinematic_step(state: WorldState, action, dt: float,
                   cfg: SimConfig) -> WorldState:
    """Bicycle-model update; also advances obstacle positions.

    Heading integrates first and the position advances along the new heading
    with the pre-update speed, so zero steer gives exact straight-line motion.
    """
    steer = float(np.clip(action[0], -1.0, 1.0)) * cfg.steer_max
    u = float(np.clip(action[1], -1.0, 1.0))
    accel = u * cfg.a_max if u >= 0 else u * cfg.a_brake
    out = state.copy()
    out.heading = state.heading + (state.speed / cfg.wheelbase) \
        * math.tan(steer) * dt
    out.x = state.x + state.speed * math.cos(out.heading) * dt
    out.y = state.y + state.speed * math.sin(out.heading) * dt
    out.speed = float(np.clip(state.speed + accel * dt, 0.0, cfg.v_max))
    if len(out.obstacles):
        out.obstacles[:, 0] += out.obstacles[:, 3] * dt
        out.obstacles[:, 1] += out.obstacles[:, 4] * dt
    out.steps = state.steps + 1
    return out


def cast_lidar(state: WorldState, n_rays: int, max_range: float) -> np.ndarray:
    """Analytic ray-circle ranging against the obstacle discs.

    Rays fan over the full circle starting at the ego heading; readings are
    hit distances clipped to max_range and normalized to [0, 1].
    """
    angles = state.heading + 2.0 * np.pi * np.arange(n_rays) / n_rays
    if len(state.obstacles) == 0:
        return np.ones(n_rays)
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)       # (n, 2)
    rel = state.obstacles[:, :2] - state.pos                     # (m, 2)
    b = d @ rel.T                                                # (n, m)
    c2 = (rel ** 2).sum(axis=1)[None, :] - b ** 2
    disc = state.obstacles[:, 2][None, :] ** 2 - c2
    root = np.sqrt(np.maximum(disc, 0.0))
    hit = (disc > 0.0) & (b + root > 0.0)
    t = np.where(hit, np.maximum(b - root, 0.0), np.inf)
    return np.minimum(t.min(axis=1), max_range) / max_range


def nav_features(state: WorldState, k: int, nav_scale: float = 20.0) -> np.ndarray:
    """Next k uncleared checkpoints in ego frame, scaled, destination-padded."""
    cps = state.scn.checkpoints
    idx = np.minimum(np.arange(state.next_idx, state.next_idx + k),
                     len(cps) - 1)
    rel = cps[idx] - state.pos
    c, s = math.cos(state.heading), math.sin(state.heading)
    fwd = c * rel[:, 0] + s * rel[:, 1]
    left = -s * rel[:, 0] + c * rel[:, 1]
    return np.stack([fwd, left], axis=1).ravel() / nav_scale


def observe(state: WorldState, cfg: SimConfig) -> np.ndarray:
    ego = np.array([state.speed / cfg.v_max,
                    state.lateral / cfg.half_width,
                    state.heading_err])
    lidar = cast_lidar(state, cfg.n_rays, cfg.max_range)
    nav = nav_features(state, cfg.k_checkpoints, cfg.nav_scale)
    cmd = np.zeros(3)
    cmd[int(state.scn.commands[min(state.next_idx,
                                   len(state.scn.commands) - 1)])] = 1.0
    return np.concatenate([ego, lidar, nav, cmd])


def compute_reward(prev: WorldState, cur: WorldState, events: dict,
                   cfg: SimConfig) -> float:
    """Weighted progress + speed + collision penalty + terminal bonus.

    Used by evaluation and the reward-based baseline only — the intervention
    learner never sees this number.
    """
    r = cfg.c_disp * (cur.progress - prev.progress)
    r += cfg.c_speed * (cur.speed / cfg.v_max)
    if events.get("collision"):
        r += cfg.c_collision * -5.0
    tag = events.get("terminated", "none")
    if tag == "destination":
        r += 10.0
    elif tag == "off_road":
        r += -5.0
    return r


def step(state: WorldState, action, cfg: SimConfig):
    """Advance one control period; returns (new WorldState, StepResult)."""
    if state.terminated != "none":
        raise ContractViolation(f"stepping a terminated episode ({state.terminated})")
    cur = kinematic_step(state, action, cfg.dt, cfg)

    # collision events on the rising edge of disc overlap
    cost = 0.0
    if len(cur.obstacles):
        gap = np.hypot(cur.obstacles[:, 0] - cur.x, cur.obstacles[:, 1] - cur.y)
        touching = gap < (cur.obstacles[:, 2] + cfg.ego_radius)
        cost = float(np.count_nonzero(touching & ~cur.overlap))
        cur.overlap = touching
        cur.collisions = state.collisions + int(cost)

    arc, lateral, tangent = _project(cur.scn.center, cur.scn.cum_arc, cur.pos)
    cur.progress, cur.lateral = arc, lateral
    cur.heading_err = float(_wrap_angle(cur.heading - tangent))

    # clear checkpoints by proximity, or by passing them along the arc (a
    # corner cut must not wedge the navigation target behind the vehicle);
    # the destination itself is proximity-only
    scn = cur.scn
    last = len(scn.checkpoints) - 1
    while cur.next_idx < last:
        near = np.hypot(*(scn.checkpoints[cur.next_idx] - cur.pos)) \
            < cfg.capture_radius
        passed = arc > scn.cp_arc[cur.next_idx] + 0.5
        if near or passed:
            cur.next_idx += 1
        else:
            break

    tag = "none"
    if np.hypot(*(scn.checkpoints[last] - cur.pos)) < cfg.capture_radius:
        tag = "destination"
    elif abs(lateral) > cfg.half_width + cfg.ego_radius:
        tag = "off_road"
    elif cur.collisions >= cfg.collision_limit:
        tag = "collision_limit"
    elif cur.steps >= cfg.timeout_steps:
        tag = "timeout"
    cur.terminated = tag

    events = {"collision": cost > 0, "terminated": tag}
    reward = compute_reward(state, cur, events, cfg)
    return cur, StepResult(observe(cur, cfg), reward, cost, tag)


class DriveEnv:
    """Stateful convenience wrapper over the pure stepping functions."""

    def __init__(self, cfg: SimConfig | None = None):
        self.cfg = cfg if cfg is not None else SimConfig()
        self.state: WorldState | None = None

    def reset(self, scenario_seed: int) -> np.ndarray:
        self.state, obs = reset(scenario_seed, self.cfg)
        return obs

    def reset_to(self, scn: Scenario, seed: int = 0) -> np.ndarray:
        self.state = initial_state(scn, seed)
        return observe(self.state, self.cfg)

    def step(self, action) -> StepResult:
        if self.state is None:
            raise ContractViolation("step before reset")
        self.state, result = step(self.state, action, self.cfg)
        return result


# -- persistence ------------------------------------------------------------

def save_scenario(scn: Scenario, path: str) -> None:
    """Versioned line-oriented record; floats via repr for exact round trip."""
    with open(path, "w") as fh:
        fh.write(SCENARIO_MAGIC + "\n")
        for (x, y), cmd in zip(scn.checkpoints, scn.commands):
            fh.write(f"C {float(x)!r} {float(y)!r} {int(cmd)}\n")
        for x, y in scn.center:
            fh.write(f"P {float(x)!r} {float(y)!r}\n")
        for x, y, r, vx, vy in scn.obstacles:
            fh.write(f"O {float(x)!r} {float(y)!r} {float(r)!r} "
                     f"{float(vx)!r} {float(vy)!r}\n")


def load_scenario(path: str) -> Scenario:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != SCENARIO_MAGIC:
            raise ConfigError(f"unsupported scenario header: {header!r}")
        cps, cmds, center, obstacles = [], [], [], []
        for ln, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "C":
                    cps.append([float(parts[1]), float(parts[2])])
                    cmds.append(int(parts[3]))
                elif parts[0] == "P":
                    center.append([float(parts[1]), float(parts[2])])
                elif parts[0] == "O":
                    obstacles.append([float(v) for v in parts[1:6]])
                else:
                    raise ValueError(f"unknown record {parts[0]!r}")
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"{path}:{ln}: bad scenario record ({exc})")
    return Scenario(np.asarray(center), np.asarray(cps),
                    np.asarray(cmds, dtype=np.int64),
                    np.asarray(obstacles, dtype=np.float64).reshape(len(obstacles), 5))


def write_trajectory(path: str, rows) -> None:
    """rows: iterables of (step, x, y, heading, speed, steer, accel, reward, cost)."""
    with open(path, "w") as fh:
        fh.write(TRAJECTORY_MAGIC + "\n")
        fh.write("# step x y heading speed steer accel reward cost\n")
        for row in rows:
            fh.write(" ".join(str(v) if isinstance(v, (int, np.integer))
                              else repr(float(v)) for v in row) + "\n")


def read_trajectory(path: str):
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != TRAJECTORY_MAGIC:
            raise ConfigError(f"unsupported trajectory header: {header!r}")
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.split()
            rows.append((int(parts[0]),) + tuple(float(v) for v in parts[1:]))
    return rows
