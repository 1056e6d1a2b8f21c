"""Episode-granular replay with end-of-episode OT relabeling and n-step sampling."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from rot.ot_reward import OTConfig, score_against_demos


@dataclass
class Episode:
    """One rollout: ``observations`` has one more entry than ``actions``."""

    observations: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: np.ndarray = None
    terminal: bool = False
    success: bool = False
    demo_index: int = -1
    ot_converged: bool = True

    def __len__(self):
        return len(self.actions)

    @property
    def relabeled(self) -> bool:
        return self.rewards is not None

    def append(self, action, next_observation):
        self.actions.append(np.asarray(action, dtype=np.float64))
        self.observations.append(np.asarray(next_observation, dtype=np.float64))


class NStepBatch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    returns: np.ndarray
    next_states: np.ndarray
    discounts: np.ndarray  # gamma ** steps, or 0 where the window ends in a terminal state
    steps: np.ndarray  # m = min(n, steps to episode end)
    episode_index: np.ndarray
    time_index: np.ndarray


class ReplayBuffer:
    def __init__(self, capacity=50_000, seed=None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.rng = np.random.default_rng(seed)
        self.episodes: deque[Episode] = deque()
        self.num_transitions = 0
        self._flat = None

    def __len__(self):
        return self.num_transitions

    def add(self, episode: Episode):
        if not episode.relabeled:
            raise ValueError("episodes must be relabeled before insertion")
        if len(episode.rewards) != len(episode.actions) or len(episode.observations) != len(episode) + 1:
            raise ValueError("malformed episode")
        self.episodes.append(episode)
        self.num_transitions += len(episode)
        while self.num_transitions > self.capacity and len(self.episodes) > 1:
            self.num_transitions -= len(self.episodes.popleft())
        if self.num_transitions > self.capacity:
            # single episode longer than the whole buffer
            self.num_transitions -= len(self.episodes.popleft())
        self._flat = None

    def _flatten(self):
        eps = list(self.episodes)
        obs = np.concatenate([np.asarray(e.observations) for e in eps])
        act = np.concatenate([np.asarray(e.actions) for e in eps])
        rew = np.concatenate([np.asarray(e.rewards, dtype=np.float64) for e in eps])
        lengths = np.array([len(e) for e in eps])
        terminal = np.array([bool(e.terminal) for e in eps])
        tr_start = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        ep_of = np.repeat(np.arange(len(eps)), lengths)
        t_of = np.arange(lengths.sum()) - tr_start[ep_of]
        self._flat = dict(obs=obs, act=act, rew=rew, ep_of=ep_of, t_of=t_of,
                          obs_idx=np.arange(lengths.sum()) + ep_of,  # each episode adds one extra obs
                          remaining=lengths[ep_of] - t_of, terminal=terminal[ep_of])
        return self._flat

    def sample_nstep(self, batch_size, n, gamma, rng=None) -> NStepBatch:
        """Uniform over stored transitions; returns truncate at the episode end.

        Windows that reach the end of a terminal (goal-reaching) episode get a
        zero discount; time-limit endings still bootstrap with ``gamma ** m``.
        """
        if self.num_transitions == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        if n < 1:
            raise ValueError("n must be >= 1")
        flat = self._flat if self._flat is not None else self._flatten()
        rng = self.rng if rng is None else rng
        j = rng.integers(0, self.num_transitions, size=batch_size)
        m = np.minimum(n, flat["remaining"][j])
        returns = np.zeros(batch_size)
        rew = flat["rew"]
        for i in range(n):
            live = i < m
            idx = np.where(live, j + i, j)
            returns += np.where(live, gamma ** i * rew[idx], 0.0)
        obs_idx = flat["obs_idx"][j]
        absorbed = flat["terminal"][j] & (m == flat["remaining"][j])
        discounts = np.where(absorbed, 0.0, gamma ** m.astype(np.float64))
        return NStepBatch(
            states=flat["obs"][obs_idx],
            actions=flat["act"][j],
            returns=returns,
            next_states=flat["obs"][obs_idx + m],
            discounts=discounts,
            steps=m,
            episode_index=flat["ep_of"][j],
            time_index=flat["t_of"][j],
        )

    def iter_episodes(self):
        return iter(self.episodes)


def episode_rewards(episode: Episode, demo_trajectories, ot_cfg: OTConfig, features):
    """OT rewards for the pre-action states of ``episode`` against featurised demos."""
    obs = np.asarray(episode.observations[:-1])
    traj_b = features(obs)
    demos_f = [features(np.asarray(d)) for d in demo_trajectories]
    return score_against_demos(traj_b, demos_f, ot_cfg)


def relabel_and_add(buffer: ReplayBuffer, episode: Episode, demo_trajectories,
                    ot_cfg: OTConfig, preprocessor_target) -> int:
    """Write OT rewards into a finished episode and store it. Returns the matched demo index.

    ``preprocessor_target`` maps an (T, obs_dim) array to features (the frozen trunk).
    """
    if episode.relabeled:
        raise ValueError("episode has already been relabeled")
    if len(demo_trajectories) == 0:
        raise ValueError("at least one demonstration is required")
    if len(episode) == 0:
        raise ValueError("episode has no transitions")
    match = episode_rewards(episode, demo_trajectories, ot_cfg, preprocessor_target)
    episode.rewards = np.asarray(match.rewards, dtype=np.float64)
    episode.rewards.setflags(write=False)
    episode.demo_index = match.index
    episode.ot_converged = match.converged
    buffer.add(episode)
    return match.index


def dump_buffer(buffer: ReplayBuffer, path, env_name: str, seed: int = 0) -> None:
    """Write stored episodes as demo-format JSON Lines with an extra ``rewards`` field."""
    from rot.envs import DemoEpisode, DemoSet, write_demos

    episodes = [DemoEpisode(np.asarray(e.observations[:-1]), np.asarray(e.actions), env_name,
                            int(seed), np.asarray(e.rewards)) for e in buffer.episodes]
    write_demos(DemoSet(episodes), path)
