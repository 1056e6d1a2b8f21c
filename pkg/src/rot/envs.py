"""Deterministic 2-D point-mass navigation tasks, scripted experts and demo files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Box:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, p, strict=True) -> bool:
        x, y = p
        if strict:
            return self.xmin < x < self.xmax and self.ymin < y < self.ymax
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax


@dataclass(frozen=True)
class EnvSpec:
    name: str
    observation_dim: int
    action_dim: int
    action_bound: float
    max_episode_steps: int
    start_region: Box
    goal: tuple
    goal_radius: float
    obstacles: tuple = ()
    dt: float = 0.05
    canonical_start: tuple = None
    # expert route, in order; the expert steers for the last one in clear view
    waypoints: tuple = ()
    clearance: float = 0.02

    def __post_init__(self):
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")
        if not self.goal_radius > 0:
            raise ValueError("goal_radius must be > 0")
        gx, gy = self.goal
        for ob in self.obstacles:
            # nearest point of the box to the goal centre
            nx = min(max(gx, ob.xmin), ob.xmax)
            ny = min(max(gy, ob.ymin), ob.ymax)
            if np.hypot(gx - nx, gy - ny) <= self.goal_radius:
                raise ValueError(f"obstacle {ob} overlaps the goal disc")


MAZE2D = EnvSpec(
    name="maze2d",
    observation_dim=2,
    action_dim=2,
    action_bound=1.0,
    max_episode_steps=100,
    start_region=Box(0.0, 0.85, 0.15, 1.0),
    goal=(0.9, 0.1),
    goal_radius=0.05,
    obstacles=(Box(0.06, 0.25, 1.0, 0.8),),
    canonical_start=(0.03, 0.95),
    waypoints=((0.03, 0.84), (0.03, 0.2)),
)

POINT_REACH = EnvSpec(
    name="point_reach",
    observation_dim=4,
    action_dim=2,
    action_bound=1.0,
    max_episode_steps=50,
    start_region=Box(0.0, 0.0, 0.2, 0.2),
    goal=(0.8, 0.8),
    goal_radius=0.05,
    canonical_start=(0.1, 0.1),
)

SPECS = {s.name: s for s in (MAZE2D, POINT_REACH)}


def get_spec(name: str) -> EnvSpec:
    try:
        return SPECS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(SPECS)}") from None


@dataclass
class StepResult:
    observation: np.ndarray
    done: bool
    success: bool
    info: dict = field(default_factory=dict)


class EpisodeDoneError(RuntimeError):
    pass


def _segment_hits(box: Box, fixed, lo, hi, axis) -> bool:
    """Does an axis-aligned move sweep through the open interior of ``box``?"""
    if axis == 0:
        if not box.ymin < fixed < box.ymax:
            return False
        return lo < box.xmax and hi > box.xmin
    if not box.xmin < fixed < box.xmax:
        return False
    return lo < box.ymax and hi > box.ymin


class NavEnv:
    """Point mass in the unit square.

    Each axis moves separately; a move whose swept segment would enter an
    obstacle is cancelled for that axis only, so the agent slides along walls.
    """

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.position = None
        self.steps = 0
        self.done = True

    def observation(self) -> np.ndarray:
        if self.spec.name == "point_reach":
            return np.concatenate([self.position, self.spec.goal]).astype(np.float64)
        return self.position.copy()

    def reset(self, seed=None, start=None) -> np.ndarray:
        spec = self.spec
        if start is not None:
            p = np.asarray(start, dtype=np.float64)
            if p.shape != (2,):
                raise ValueError("start must be a 2-D position")
            if not spec.start_region.contains(p, strict=False):
                raise ValueError(f"start {tuple(p)} is outside the start region")
            if any(ob.contains(p) for ob in spec.obstacles):
                raise ValueError(f"start {tuple(p)} lies inside an obstacle")
        else:
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            r = spec.start_region
            p = rng.uniform([r.xmin, r.ymin], [r.xmax, r.ymax])
        self.position = p
        self.steps = 0
        self.done = False
        return self.observation()

    def step(self, action) -> StepResult:
        if self.done:
            raise EpisodeDoneError("step() called on a finished episode; call reset()")
        spec = self.spec
        a = np.clip(np.asarray(action, dtype=np.float64), -spec.action_bound, spec.action_bound)
        delta = a * spec.dt
        p = self.position.copy()
        blocked = [False, False]
        for axis in (0, 1):
            new = min(max(p[axis] + delta[axis], 0.0), 1.0)
            lo, hi = min(p[axis], new), max(p[axis], new)
            if any(_segment_hits(ob, p[1 - axis], lo, hi, axis) for ob in spec.obstacles):
                blocked[axis] = True
                continue
            p[axis] = new
        self.position = p
        self.steps += 1
        dist = float(np.hypot(*(p - spec.goal)))
        success = dist <= spec.goal_radius
        self.done = success or self.steps >= spec.max_episode_steps
        return StepResult(self.observation(), self.done, success,
                          {"distance": dist, "blocked": blocked, "steps": self.steps})


def make_env(name_or_spec) -> NavEnv:
    spec = get_spec(name_or_spec) if isinstance(name_or_spec, str) else name_or_spec
    return NavEnv(spec)


def _line_clear(spec: EnvSpec, p, q) -> bool:
    """True if the straight segment p->q keeps ``clearance`` away from every obstacle."""
    c = spec.clearance
    for ob in spec.obstacles:
        lo = np.array([ob.xmin - c, ob.ymin - c])
        hi = np.array([ob.xmax + c, ob.ymax + c])
        d = q - p
        t0, t1 = 0.0, 1.0
        hit = True
        for k in range(2):
            if abs(d[k]) < 1e-15:
                if not lo[k] <= p[k] <= hi[k]:
                    hit = False
                    break
                continue
            ta, tb = (lo[k] - p[k]) / d[k], (hi[k] - p[k]) / d[k]
            t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
            if t0 > t1:
                hit = False
                break
        if hit:
            return False
    return True


def scripted_expert(spec: EnvSpec, observation) -> np.ndarray:
    """Steer for the furthest point along the route (waypoints, then goal) that is in clear view."""
    p = np.asarray(observation, dtype=np.float64)[:2]
    route = [np.asarray(w, dtype=np.float64) for w in (*spec.waypoints, spec.goal)]
    target = route[0]
    for w in reversed(route):
        if _line_clear(spec, p, w):
            target = w
            break
    direction = (target - p) / spec.dt
    norm = np.linalg.norm(direction)
    if norm > spec.action_bound:
        direction *= spec.action_bound / norm
    return direction


def rollout(env: NavEnv, policy, seed=None, start=None):
    """Run one episode; returns (observations, actions, success)."""
    obs = [env.reset(seed=seed, start=start)]
    acts = []
    result = None
    while not env.done:
        a = np.asarray(policy(obs[-1]), dtype=np.float64)
        result = env.step(a)
        acts.append(np.clip(a, -env.spec.action_bound, env.spec.action_bound))
        obs.append(result.observation)
    return np.array(obs), np.array(acts), bool(result.success)


@dataclass
class DemoEpisode:
    observations: np.ndarray  # (T, obs_dim), one per action
    actions: np.ndarray  # (T, act_dim)
    env: str
    seed: int
    rewards: np.ndarray = None

    def __eq__(self, other):
        if not isinstance(other, DemoEpisode):
            return NotImplemented
        return (self.env == other.env and self.seed == other.seed
                and np.array_equal(self.observations, other.observations)
                and np.array_equal(self.actions, other.actions))


@dataclass
class DemoSet:
    episodes: list

    def __post_init__(self):
        if not self.episodes:
            raise ValueError("a DemoSet needs at least one episode")
        od, ad = self.observation_dim, self.action_dim
        for ep in self.episodes:
            if len(ep.observations) != len(ep.actions):
                raise ValueError("observation and action sequences differ in length")
            if ep.observations.shape[1] != od or ep.actions.shape[1] != ad:
                raise ValueError("inconsistent dimensions across demo episodes")

    @property
    def observation_dim(self):
        return self.episodes[0].observations.shape[1]

    @property
    def action_dim(self):
        return self.episodes[0].actions.shape[1]

    @property
    def env(self):
        return self.episodes[0].env

    def __len__(self):
        return len(self.episodes)

    def __eq__(self, other):
        return isinstance(other, DemoSet) and self.episodes == other.episodes

    def pairs(self):
        """All (observation, action) pairs stacked across episodes."""
        return (np.concatenate([e.observations for e in self.episodes]),
                np.concatenate([e.actions for e in self.episodes]))

    def observation_trajectories(self):
        """Full state sequences per demo, including the state reached after the last action."""
        return [e.observations for e in self.episodes]


class ExpertFailure(RuntimeError):
    pass


def generate_demos(spec, count=1, seed=0, out=None) -> DemoSet:
    """Roll out the scripted expert. The first demo starts at the canonical start,
    later ones from seeded random starts.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    spec = get_spec(spec) if isinstance(spec, str) else spec
    env = NavEnv(spec)
    rng = np.random.default_rng(seed)
    episodes = []
    for i in range(count):
        start = spec.canonical_start if i == 0 else None
        obs, acts, success = rollout(env, lambda o: scripted_expert(spec, o), seed=rng, start=start)
        if not success:
            raise ExpertFailure(f"scripted expert failed demo {i} on {spec.name}")
        episodes.append(DemoEpisode(obs[:-1], acts, spec.name, int(seed)))
    demos = DemoSet(episodes)
    if out is not None:
        write_demos(demos, out)
    return demos


def write_demos(demos: DemoSet, path) -> None:
    with open(path, "w") as fh:
        for ep in demos.episodes:
            rec = {"observations": ep.observations.tolist(), "actions": ep.actions.tolist(),
                   "env": ep.env, "seed": ep.seed}
            if ep.rewards is not None:
                rec["rewards"] = np.asarray(ep.rewards).tolist()
            # json emits shortest round-trip reprs for floats
            fh.write(json.dumps(rec) + "\n")


def load_demos(path) -> DemoSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"demo file not found: {path}")
    episodes = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            rewards = rec.get("rewards")
            episodes.append(DemoEpisode(np.array(rec["observations"], dtype=np.float64),
                                        np.array(rec["actions"], dtype=np.float64),
                                        rec["env"], int(rec["seed"]),
                                        None if rewards is None else np.array(rewards)))
    return DemoSet(episodes)
