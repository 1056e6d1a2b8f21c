"""Behavior-cloning pretraining of the trunk and actor by action regression."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rot.approximator import Adam, Mlp, make_trunk


def bc_loss(actor: Mlp, trunk: Mlp, states, actions) -> float:
    """Mean over the batch of the squared distance between predicted and demonstrated actions."""
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if len(states) == 0:
        raise ValueError("BC loss needs a non-empty batch")
    pred = actor.forward(trunk.forward(states))
    diff = pred - actions
    return float(np.mean(np.sum(diff * diff, axis=-1)))


def bc_gradients(actor: Mlp, trunk: Mlp, states, actions):
    f, f_cache = trunk.forward_cached(states)
    pred, a_cache = actor.forward_cached(f)
    diff = pred - actions
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    g_actor, g_f = actor.backward_cached(a_cache, (2.0 / len(states)) * diff)
    g_trunk, _ = trunk.backward_cached(f_cache, g_f, need_input_grad=False)
    return g_actor, g_trunk, loss


@dataclass
class PretrainResult:
    actor: Mlp
    trunk: Mlp
    losses: list = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")


def make_actor(feature_dim, action_dim, action_bound, hidden_dim=64, rng=None) -> Mlp:
    return Mlp((feature_dim, hidden_dim, hidden_dim, action_dim), output="tanh",
               output_bound=action_bound, rng=rng)


def pretrain(demos, steps=2000, batch_size=64, seed=0, learning_rate=1e-3,
             actor: Mlp = None, trunk: Mlp = None, feature_dim=50, hidden_dim=64,
             action_bound=1.0) -> PretrainResult:
    """Seeded minibatch Adam on the BC loss.

    ``demos`` is a DemoSet or an ``(states, actions)`` pair. Networks default
    to the agent's architecture, initialised from ``seed`` in the same order
    the agent uses (trunk, then actor). ``losses`` holds per-step minibatch
    losses; ``initial_loss``/``final_loss`` are measured on the full demo set.
    """
    states, actions = demos.pairs() if hasattr(demos, "pairs") else demos
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if len(states) == 0:
        raise ValueError("no demonstration pairs to train on")
    rng = np.random.default_rng(seed)
    if trunk is None:
        trunk = make_trunk(states.shape[1], feature_dim, rng=rng)
    if actor is None:
        actor = make_actor(trunk.out_dim, actions.shape[1], action_bound, hidden_dim, rng=rng)
    actor_opt = Adam(actor.params.size, learning_rate)
    trunk_opt = Adam(trunk.params.size, learning_rate)
    result = PretrainResult(actor, trunk, initial_loss=bc_loss(actor, trunk, states, actions))
    n = len(states)
    for _ in range(steps):
        idx = rng.integers(0, n, size=batch_size)
        ga, gt, loss = bc_gradients(actor, trunk, states[idx], actions[idx])
        actor_opt.step(actor.params, ga)
        trunk_opt.step(trunk.params, gt)
        result.losses.append(loss)
    result.final_loss = bc_loss(actor, trunk, states, actions)
    return result
