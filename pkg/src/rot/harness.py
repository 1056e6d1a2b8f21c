"""Run configuration, the online training loop, evaluation and run comparison."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from rot.agent import Agent, AgentConfig, act, schedule
from rot.approximator import Mlp, load_snapshots, save_snapshots
from rot.bc_trainer import pretrain
from rot.envs import NavEnv, get_spec, load_demos
from rot.ot_reward import OTConfig
from rot.replay import Episode, ReplayBuffer, relabel_and_add

METHODS = ("rot", "bc", "ot", "bc_ot", "ot_bcreg", "fixed_weight", "fixed_schedule")
METRICS_HEADER = ("env_step", "episode", "return", "success_rate", "lambda",
                  "ot_reward_mean", "critic_loss", "wall_clock_s")
EPISODES_HEADER = ("env_step", "episode", "length", "return", "success", "demo_index",
                   "ot_converged")

# exploration schedule of the from-scratch OT baseline, shortened to the desk-scale budget
OT_EXPLORATION = "linear(1,0.1,25000)"

# settings each method implies unless the config sets them explicitly
METHOD_DEFAULTS = {
    "rot": dict(pretrain=True, init_from_bc=True, lambda_mode="soft_q_filter",
                exploration_schedule="0.1", exploration_steps=0),
    "bc": dict(pretrain=True, init_from_bc=True, lambda_mode="none",
               exploration_schedule="0.1", exploration_steps=0),
    "ot": dict(pretrain=False, init_from_bc=False, lambda_mode="none", fixed_weight_alpha=0.0,
               exploration_schedule=OT_EXPLORATION, exploration_steps=2000),
    "bc_ot": dict(pretrain=True, init_from_bc=True, lambda_mode="none", fixed_weight_alpha=0.0,
                  exploration_schedule="0.1", exploration_steps=0),
    "ot_bcreg": dict(pretrain=True, init_from_bc=False, lambda_mode="soft_q_filter",
                     exploration_schedule=OT_EXPLORATION, exploration_steps=2000),
    "fixed_weight": dict(pretrain=True, init_from_bc=True, lambda_mode="fixed_weight",
                         exploration_schedule="0.1", exploration_steps=0),
    "fixed_schedule": dict(pretrain=True, init_from_bc=True, lambda_mode="linear_schedule",
                           exploration_schedule="0.1", exploration_steps=0),
}


class ConfigError(ValueError):
    pass


class MissingInputError(FileNotFoundError):
    pass


@dataclass
class RunConfig:
    """All knobs of a run. Keys double as the JSON config keys.

    ``None`` means "use the method's default" (see METHOD_DEFAULTS).
    """

    env: str = "maze2d"
    method: str = "rot"
    seed: int = 0
    total_env_steps: int = 50_000
    eval_every: int = 2000
    eval_episodes: int = 20
    eval_seed: int = 10_000
    # Table 1 rows (desk-scale values where they differ)
    replay_buffer_size: int = 50_000
    learning_rate: float = 1e-4
    discount: float = 0.99
    nstep: int = 3
    seed_frames: int = 1000
    batch_size: int = 256
    agent_update_frequency: int = 2
    critic_soft_update_rate: float = 0.01
    feature_dim: int = 50
    hidden_dim: int = 64
    exploration_steps: Optional[int] = None
    exploration_schedule: Optional[str] = None
    target_feature_processor_update_frequency: int = 2000
    reward_scale_factor: float = 10.0
    fixed_weight_alpha: Optional[float] = None
    lambda_linear_decay_schedule: str = "linear(1,0.1,20000)"
    # not in Table 1
    lambda_mode: Optional[str] = None
    pretrain: Optional[bool] = None
    init_from_bc: Optional[bool] = None
    pretrain_steps: int = 2000
    pretrain_batch_size: int = 64
    pretrain_learning_rate: float = 1e-3
    sinkhorn_epsilon: float = 0.01
    sinkhorn_max_iterations: int = 500
    sinkhorn_tolerance: float = 1e-6
    cost_kind: str = "cosine"
    trunk_gradients: str = "critic_and_actor"
    record_wall_clock: bool = False

    def resolved(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError(f"method: unknown method {self.method!r}; choose from {METHODS}")
        updates = {k: v for k, v in METHOD_DEFAULTS[self.method].items() if getattr(self, k) is None}
        if self.fixed_weight_alpha is None and "fixed_weight_alpha" not in updates:
            updates["fixed_weight_alpha"] = 0.03
        cfg = dataclasses.replace(self, **updates)
        if not cfg.pretrain:
            cfg.init_from_bc = False
        cfg.validate()
        return cfg

    def validate(self):
        try:
            get_spec(self.env)
        except ValueError as e:
            raise ConfigError(f"env: {e}") from None
        for name in ("total_env_steps", "pretrain_steps", "exploration_steps", "seed_frames"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f"{name}: must be >= 0, got {value}")
        for name in ("eval_every", "eval_episodes", "replay_buffer_size", "batch_size",
                     "pretrain_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1, got {getattr(self, name)}")
        try:
            self.agent_config()
            self.ot_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.lambda_mode == "soft_q_filter" and self.pretrain is False:
            raise ConfigError("lambda_mode: soft_q_filter needs pretrain=true for the reference BC policy")

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            gamma=self.discount, nstep=self.nstep, alpha=self.fixed_weight_alpha,
            batch_size=self.batch_size, update_every=self.agent_update_frequency,
            tau=self.critic_soft_update_rate, exploration_stddev=self.exploration_schedule,
            exploration_steps=self.exploration_steps, seed_frames=self.seed_frames,
            lambda_mode=self.lambda_mode, lambda_schedule=self.lambda_linear_decay_schedule,
            learning_rate=self.learning_rate, hidden_dim=self.hidden_dim,
            feature_dim=self.feature_dim,
            target_update_period=self.target_feature_processor_update_frequency,
            trunk_gradients=self.trunk_gradients)

    def ot_config(self) -> OTConfig:
        return OTConfig(epsilon=self.sinkhorn_epsilon, max_iterations=self.sinkhorn_max_iterations,
                        marginal_tolerance=self.sinkhorn_tolerance,
                        reward_scale=self.reward_scale_factor, cost_kind=self.cost_kind)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict, **overrides) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        data = {**data, **{k: v for k, v in overrides.items() if v is not None}}
        for key in data:
            if key not in known:
                raise ConfigError(f"{key}: unknown configuration key")
        return cls(**data)


def load_config(path, **overrides) -> RunConfig:
    if path is None:
        return RunConfig.from_dict({}, **overrides)
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return RunConfig.from_dict(data, **overrides)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def evaluate(policy, env_name, episodes=20, seed=10_000, scorer=None):
    """Roll out a deterministic policy from seeded random starts.

    ``policy`` maps a (B, obs_dim) batch to actions; all episodes run in
    lockstep. ``scorer`` (optional) maps an observation array to an OT
    return. Returns (success_rate, mean_return); mean_return is NaN without a scorer.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    spec = get_spec(env_name) if isinstance(env_name, str) else env_name
    rng = np.random.default_rng(seed)
    envs = [NavEnv(spec) for _ in range(episodes)]
    obs = [[e.reset(seed=rng)] for e in envs]
    success = np.zeros(episodes, dtype=bool)
    active = list(range(episodes))
    while active:
        batch = np.array([obs[i][-1] for i in active])
        actions = np.atleast_2d(policy(batch))
        still = []
        for i, a in zip(active, actions):
            res = envs[i].step(a)
            obs[i].append(res.observation)
            if res.done:
                success[i] = res.success
            else:
                still.append(i)
        active = still
    mean_return = float("nan")
    if scorer is not None:
        mean_return = float(np.mean([scorer(np.array(o[:-1])) for o in obs]))
    return float(success.mean()), mean_return


def policy_fn(trunk: Mlp, actor: Mlp, action_bound: float):
    return lambda o: act(o, actor, trunk, 0.0, None, action_bound)


class _Window:
    """Accumulates per-row statistics between metrics rows."""

    def __init__(self):
        self.returns, self.rewards, self.lambdas, self.losses = [], [], [], []

    def mean(self, xs):
        return float(np.mean(xs)) if xs else float("nan")


def run(cfg: RunConfig, out_dir=None, demos=None, demos_path=None, progress=None) -> dict:
    """Pretrain (if the method uses it), then run the online loop; returns a summary dict.

    Writes ``metrics.csv``, ``episodes.csv``, ``config.json``, ``timing.json``
    and ``checkpoints/`` under ``out_dir`` when given.
    """
    cfg = cfg.resolved()
    t0 = time.perf_counter()
    spec = get_spec(cfg.env)
    if demos is None:
        if demos_path is None:
            raise MissingInputError("a demo file is required for every method")
        if not Path(demos_path).exists():
            raise MissingInputError(f"demo file not found: {demos_path}")
        demos = load_demos(demos_path)
    if demos.env != spec.name:
        raise ConfigError(f"env: demos were recorded on {demos.env!r}, config asks for {spec.name!r}")
    acfg = cfg.agent_config()
    ot_cfg = cfg.ot_config()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    init_ss, env_ss, noise_ss, update_ss = np.random.SeedSequence(cfg.seed).spawn(4)
    bc = None
    if cfg.pretrain:
        bc = pretrain(demos, steps=cfg.pretrain_steps, batch_size=cfg.pretrain_batch_size,
                      seed=cfg.seed, learning_rate=cfg.pretrain_learning_rate,
                      feature_dim=cfg.feature_dim, hidden_dim=cfg.hidden_dim,
                      action_bound=spec.action_bound)
        if out is not None:
            save_snapshots(out / "checkpoints" / "bc.bin", [bc.trunk, bc.actor])
    init = dict(trunk=bc.trunk.copy(), actor=bc.actor.copy()) if cfg.init_from_bc else {}
    agent = Agent(spec.observation_dim, spec.action_dim, spec.action_bound, acfg,
                  seed=init_ss, **init)
    if bc is not None:
        agent.bc_trunk, agent.bc_actor = bc.trunk.copy(), bc.actor.copy()

    demo_pairs = demos.pairs()
    demo_trajs = demos.observation_trajectories()
    metrics, episode_rows, timing = [], [], []
    window = _Window()
    n_episodes = 0

    def emit(step):
        sr, _ = evaluate(policy_fn(agent.trunk, agent.actor, spec.action_bound), spec,
                         cfg.eval_episodes, cfg.eval_seed)
        wall = time.perf_counter() - t0
        timing.append((step, wall))
        metrics.append((step, n_episodes, window.mean(window.returns), sr,
                        window.mean(window.lambdas), window.mean(window.rewards),
                        window.mean(window.losses), wall if cfg.record_wall_clock else 0.0))
        window.__init__()
        if progress is not None:
            progress(step, sr)

    emit(0)
    online_steps = 0 if cfg.method == "bc" else cfg.total_env_steps
    if online_steps:
        env = NavEnv(spec)
        env_rng = np.random.default_rng(env_ss)
        noise_rng = np.random.default_rng(noise_ss)
        update_rng = np.random.default_rng(update_ss)
        buffer = ReplayBuffer(cfg.replay_buffer_size)
        bound = spec.action_bound
        obs = env.reset(seed=env_rng)
        episode = Episode([obs])
        for step in range(1, online_steps + 1):
            if step <= cfg.exploration_steps:
                action = noise_rng.uniform(-bound, bound, size=spec.action_dim)
            else:
                action = agent.act(obs, schedule(cfg.exploration_schedule, step - 1), noise_rng)
            res = env.step(action)
            episode.append(action, res.observation)
            obs = res.observation
            if res.done:
                episode.terminal = episode.success = res.success
                relabel_and_add(buffer, episode, demo_trajs, ot_cfg, agent.target_features)
                n_episodes += 1
                ret = float(np.sum(episode.rewards))
                window.returns.append(ret)
                window.rewards.extend(episode.rewards)
                episode_rows.append((step, n_episodes, len(episode), ret, int(res.success),
                                     episode.demo_index, int(episode.ot_converged)))
                obs = env.reset(seed=env_rng)
                episode = Episode([obs])
            if step > cfg.seed_frames and step % cfg.agent_update_frequency == 0 and len(buffer):
                stats = agent.update(buffer, demo_pairs, update_rng, step)
                window.lambdas.append(stats["lambda"])
                window.losses.append(stats["critic_loss"])
            agent.preprocessor.refresh(step)
            if step % cfg.eval_every == 0:
                emit(step)
        if online_steps % cfg.eval_every:
            emit(online_steps)

    if out is not None:
        write_csv(out / "metrics.csv", METRICS_HEADER, metrics)
        write_csv(out / "episodes.csv", EPISODES_HEADER, episode_rows)
        save_snapshots(out / "checkpoints" / "final.bin", [agent.trunk, agent.actor])
        (out / "timing.json").write_text(json.dumps(
            {"total_wall_clock_s": time.perf_counter() - t0,
             "eval_wall_clock_s": [[s, w] for s, w in timing]}, indent=1) + "\n")
    return {"config": cfg, "metrics": metrics, "episodes": episode_rows, "agent": agent,
            "wall_clock_s": time.perf_counter() - t0}


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def read_metrics(path):
    path = Path(path)
    if path.is_dir():
        path = path / "metrics.csv"
    if not path.exists():
        raise MissingInputError(f"metrics file not found: {path}")
    with open(path) as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise ConfigError(f"{path}: unexpected metrics header {reader.fieldnames}")
        rows = [{k: float(v) for k, v in r.items()} for r in reader]
    return rows


def smoothed(values, window=3):
    """Trailing moving average (shorter at the start)."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    for i in range(len(values)):
        out[i] = values[max(0, i - window + 1):i + 1].mean()
    return out


def threshold_step(steps, success, threshold=0.9, window=3):
    """First env step whose smoothed success rate reaches ``threshold``; None if never."""
    s = smoothed(success, window)
    hits = np.nonzero(s >= threshold - 1e-12)[0]
    return None if len(hits) == 0 else int(steps[hits[0]])


def compare_runs(run_dirs, threshold=0.9, baseline=None, window=3):
    """Threshold-crossing step per run and its speedup relative to ``baseline``.

    ``baseline`` is a run directory (default: the first one). Speedup is
    baseline_step / run_step; None when either run never crosses.
    """
    run_dirs = [Path(d) for d in run_dirs]
    if len(run_dirs) < 2:
        raise ValueError("compare needs at least two runs")
    envs = {}
    for d in run_dirs:
        cfg_path = d / "config.json"
        if not cfg_path.exists():
            raise MissingInputError(f"run config not found: {cfg_path}")
        envs[d] = json.loads(cfg_path.read_text())["env"]
    if len(set(envs.values())) > 1:
        raise ConfigError(f"runs are on different environments: {sorted(set(envs.values()))}")
    crossing = {}
    for d in run_dirs:
        rows = read_metrics(d)
        steps = np.array([r["env_step"] for r in rows])
        crossing[d] = threshold_step(steps, [r["success_rate"] for r in rows], threshold, window)
    base = Path(baseline) if baseline is not None else run_dirs[0]
    if base not in crossing:
        raise ConfigError(f"baseline {base} is not among the compared runs")
    table = []
    for d in run_dirs:
        step = crossing[d]
        ratio = None
        if step is not None and crossing[base] is not None:
            ratio = math.inf if step == 0 else crossing[base] / step
        table.append({"run": str(d), "threshold_step": step, "speedup": ratio})
    return table


def speedup(baseline_step, run_step):
    if baseline_step is None or run_step is None:
        return None
    return math.inf if run_step == 0 else baseline_step / run_step


def load_policy(checkpoint):
    path = Path(checkpoint)
    if not path.exists():
        raise MissingInputError(f"checkpoint not found: {path}")
    nets = load_snapshots(path)
    if len(nets) != 2:
        raise ConfigError(f"{path}: expected a trunk and an actor snapshot, found {len(nets)}")
    return nets[0], nets[1]
