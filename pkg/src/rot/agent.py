"""n-step deterministic actor-critic with an adaptively weighted BC regularizer.

Network wiring: a shared trunk maps observations to features; the actor reads
features, each critic reads ``[features, action]``. The critic loss trains the
critics and the trunk. The actor objective trains the actor and, through the
actor's input, the trunk; the critic's own copy of the features is held fixed
inside the actor objective.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from rot.approximator import Adam, CriticPair, FeaturePreprocessor, Mlp, make_trunk

LAMBDA_MODES = ("soft_q_filter", "fixed_weight", "linear_schedule", "none")
# which objectives update the shared trunk
TRUNK_GRADIENTS = ("critic_and_actor", "critic_only", "actor_only")
_LINEAR = re.compile(r"^\s*linear\(\s*([^,]+),\s*([^,]+),\s*([^)]+)\)\s*$")


def schedule(spec, step: int) -> float:
    """Evaluate a constant (``0.1``) or ``linear(init,final,duration)`` schedule."""
    if isinstance(spec, (int, float)):
        return float(spec)
    match = _LINEAR.match(spec)
    if match:
        init, final, duration = (float(g) for g in match.groups())
        mix = np.clip(step / duration, 0.0, 1.0)
        return float((1.0 - mix) * init + mix * final)
    try:
        return float(spec)
    except ValueError:
        raise ValueError(f"unrecognised schedule {spec!r}") from None


@dataclass
class AgentConfig:
    gamma: float = 0.99
    nstep: int = 3
    alpha: float = 0.03
    batch_size: int = 256
    update_every: int = 2
    tau: float = 0.01
    exploration_stddev: object = 0.1
    exploration_steps: int = 0
    seed_frames: int = 1000
    lambda_mode: str = "soft_q_filter"
    lambda_schedule: str = "linear(1,0.1,20000)"
    learning_rate: float = 1e-4
    hidden_dim: int = 64
    feature_dim: int = 50
    target_update_period: int = 2000
    trunk_gradients: str = "critic_and_actor"

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.nstep < 1:
            raise ValueError("nstep must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.lambda_mode not in LAMBDA_MODES:
            raise ValueError(f"lambda_mode must be one of {LAMBDA_MODES}, got {self.lambda_mode!r}")
        if self.trunk_gradients not in TRUNK_GRADIENTS:
            raise ValueError(f"trunk_gradients must be one of {TRUNK_GRADIENTS}, got {self.trunk_gradients!r}")
        for name in ("batch_size", "update_every", "hidden_dim", "feature_dim", "target_update_period"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        schedule(self.exploration_stddev, 0)
        schedule(self.lambda_schedule, 0)


def lambda_schedule(mode: str, env_step: int, cfg: AgentConfig) -> float:
    """Scheduled lambda for the non-adaptive modes (soft Q-filtering is computed from data)."""
    if env_step < 0:
        raise ValueError("env_step must be >= 0")
    if mode == "linear_schedule":
        return schedule(cfg.lambda_schedule, env_step)
    if mode in ("fixed_weight", "none"):
        return 0.0
    if mode == "soft_q_filter":
        raise ValueError("soft_q_filter lambda comes from soft_q_lambda, not a schedule")
    raise ValueError(f"unknown lambda mode {mode!r}")


def objective_weights(mode: str, lam: float, alpha: float):
    """(weight on E[Q], weight on the BC loss) for the actor objective."""
    if mode in ("soft_q_filter", "linear_schedule"):
        return 1.0 - lam, alpha * lam
    if mode == "fixed_weight":
        return 1.0, alpha
    if mode == "none":
        return 1.0, 0.0
    raise ValueError(f"unknown lambda mode {mode!r}")


def nstep_return(rewards, gamma):
    rewards = np.asarray(rewards, dtype=np.float64)
    return (rewards * gamma ** np.arange(rewards.shape[-1])).sum(axis=-1)


def _critic_input(features, actions):
    return np.concatenate([features, actions], axis=-1)


def min_target_q(next_features, actor: Mlp, critics: CriticPair):
    a = actor.forward(next_features)
    x = _critic_input(next_features, a)
    return np.minimum(critics.target_q1.forward(x), critics.target_q2.forward(x))[:, 0]


def td_target(returns, discounts, next_states, actor: Mlp, trunk: Mlp, critics: CriticPair):
    """y = R^(m) + gamma^m * min_k Qbar_k(s', pi(s')) for a sampled n-step batch."""
    returns = np.asarray(returns, dtype=np.float64)
    discounts = np.asarray(discounts, dtype=np.float64)
    if returns.shape != discounts.shape or returns.shape[0] != len(next_states):
        raise ValueError("returns, discounts and next_states must share the batch dimension")
    q = min_target_q(trunk.forward(next_states), actor, critics)
    return returns + discounts * q


def filter_fraction(q_bc, q_current) -> float:
    q_bc = np.asarray(q_bc).ravel()
    q_current = np.asarray(q_current).ravel()
    if q_bc.size == 0:
        raise ValueError("soft Q-filter needs a non-empty batch")
    if q_bc.shape != q_current.shape:
        raise ValueError("Q-value arrays differ in shape")
    return float(np.count_nonzero(q_bc > q_current)) / q_bc.size


def soft_q_lambda(states, bc_trunk: Mlp, bc_actor: Mlp, actor: Mlp, trunk: Mlp, q1: Mlp) -> float:
    """Fraction of states where q1 strictly prefers the frozen BC action to the current one."""
    states = np.asarray(states, dtype=np.float64)
    if len(states) == 0:
        raise ValueError("soft Q-filter needs a non-empty batch")
    features = trunk.forward(states)
    a_bc = bc_actor.forward(bc_trunk.forward(states))
    a_cur = actor.forward(features)
    q_bc = q1.forward(_critic_input(features, a_bc))
    q_cur = q1.forward(_critic_input(features, a_cur))
    return filter_fraction(q_bc, q_cur)


def critic_gradients(states, actions, targets, trunk: Mlp, critics: CriticPair):
    """Gradients of mean squared TD error for both critics and the shared trunk."""
    targets = np.asarray(targets, dtype=np.float64)
    B = len(targets)
    f, f_cache = trunk.forward_cached(states)
    x = _critic_input(f, actions)
    feat = f.shape[1]
    grads, losses = [], []
    trunk_up = np.zeros_like(f)
    for q in (critics.q1, critics.q2):
        out, cache = q.forward_cached(x)
        err = out[:, 0] - targets
        losses.append(float(np.mean(err * err)))
        g, gx = q.backward_cached(cache, (2.0 / B) * err[:, None])
        grads.append(g)
        trunk_up += gx[:, :feat]
    trunk_grad, _ = trunk.backward_cached(f_cache, trunk_up, need_input_grad=False)
    return grads[0], grads[1], trunk_grad, losses


def actor_gradients(states, demo_states, demo_actions, q_weight, bc_weight,
                    actor: Mlp, trunk: Mlp, q1: Mlp):
    """Gradients of the loss  -q_weight * mean Q1(f(s), pi(f(s))) + bc_weight * mean ||a_e - pi(f(s_e))||^2.

    The critic's feature input is treated as a constant. Returns
    (actor_grad, trunk_grad, mean_q, bc_loss).
    """
    B = len(states)
    f, f_cache = trunk.forward_cached(states)
    a, a_cache = actor.forward_cached(f)
    out, q_cache = q1.forward_cached(_critic_input(f, a))
    mean_q = float(out.mean())
    _, gx = q1.backward_cached(q_cache, np.full_like(out, -q_weight / B))
    g_actor, g_f = actor.backward_cached(a_cache, gx[:, f.shape[1]:])
    g_trunk, _ = trunk.backward_cached(f_cache, g_f, need_input_grad=False)

    E = len(demo_states)
    fe, fe_cache = trunk.forward_cached(demo_states)
    ae, ae_cache = actor.forward_cached(fe)
    diff = ae - demo_actions
    bc_loss = float(np.mean(np.sum(diff * diff, axis=1)))
    g_actor_bc, g_fe = actor.backward_cached(ae_cache, (2.0 * bc_weight / E) * diff)
    g_trunk_bc, _ = trunk.backward_cached(fe_cache, g_fe, need_input_grad=False)
    return g_actor + g_actor_bc, g_trunk + g_trunk_bc, mean_q, bc_loss


def act(state, actor: Mlp, trunk: Mlp, stddev, rng, action_bound):
    a = actor.forward(trunk.forward(np.asarray(state, dtype=np.float64)))
    if stddev > 0:
        a = a + stddev * rng.standard_normal(a.shape)
    return np.clip(a, -action_bound, action_bound)


class Agent:
    """Owns all learner state: networks, optimizers and the frozen BC snapshot."""

    def __init__(self, obs_dim, action_dim, action_bound, cfg: AgentConfig, seed=0,
                 trunk: Mlp = None, actor: Mlp = None):
        self.cfg = cfg
        self.action_dim = action_dim
        self.action_bound = float(action_bound)
        rng = np.random.default_rng(seed)
        h = cfg.hidden_dim
        if trunk is None:
            trunk = make_trunk(obs_dim, cfg.feature_dim, rng=rng)
        if actor is None:
            actor = Mlp((cfg.feature_dim, h, h, action_dim), output="tanh",
                        output_bound=action_bound, rng=rng)
        self.preprocessor = FeaturePreprocessor(trunk, cfg.target_update_period)
        self.actor = actor
        self.critics = CriticPair(cfg.feature_dim + action_dim, (h, h), rng=rng)
        lr = cfg.learning_rate
        self.trunk_opt = Adam(trunk.params.size, lr)
        self.actor_opt = Adam(actor.params.size, lr)
        self.q1_opt = Adam(self.critics.q1.params.size, lr)
        self.q2_opt = Adam(self.critics.q2.params.size, lr)
        self.bc_trunk = None
        self.bc_actor = None

    @property
    def trunk(self) -> Mlp:
        return self.preprocessor.online

    def freeze_bc(self):
        """Snapshot the current (pretrained) trunk and actor for soft Q-filtering."""
        self.bc_trunk = self.trunk.copy()
        self.bc_actor = self.actor.copy()

    def act(self, state, stddev, rng):
        return act(state, self.actor, self.trunk, stddev, rng, self.action_bound)

    def target_features(self, observations):
        return self.preprocessor.target.forward(np.asarray(observations, dtype=np.float64))

    def critic_update(self, batch):
        y = td_target(batch.returns, batch.discounts, batch.next_states,
                      self.actor, self.trunk, self.critics)
        g1, g2, gt, losses = critic_gradients(batch.states, batch.actions, y,
                                              self.trunk, self.critics)
        self.q1_opt.step(self.critics.q1.params, g1)
        self.q2_opt.step(self.critics.q2.params, g2)
        if self.cfg.trunk_gradients != "actor_only":
            self.trunk_opt.step(self.trunk.params, gt)
        self.critics.soft_update(self.cfg.tau)
        return losses

    def current_lambda(self, states, env_step):
        mode = self.cfg.lambda_mode
        if mode == "soft_q_filter":
            if self.bc_actor is None:
                raise RuntimeError("soft Q-filtering needs a frozen BC policy; call freeze_bc()")
            return soft_q_lambda(states, self.bc_trunk, self.bc_actor, self.actor,
                                 self.trunk, self.critics.q1)
        return lambda_schedule(mode, env_step, self.cfg)

    def actor_update(self, states, demo_states, demo_actions, env_step):
        lam = self.current_lambda(states, env_step)
        q_w, bc_w = objective_weights(self.cfg.lambda_mode, lam, self.cfg.alpha)
        ga, gt, mean_q, bc_loss = actor_gradients(states, demo_states, demo_actions, q_w, bc_w,
                                                  self.actor, self.trunk, self.critics.q1)
        self.actor_opt.step(self.actor.params, ga)
        if self.cfg.trunk_gradients != "critic_only":
            self.trunk_opt.step(self.trunk.params, gt)
        return mean_q, bc_loss, lam

    def update(self, buffer, demo_pairs, rng, env_step):
        """One learner step: critic update then actor update on the same replay batch."""
        cfg = self.cfg
        batch = buffer.sample_nstep(cfg.batch_size, cfg.nstep, cfg.gamma, rng)
        losses = self.critic_update(batch)
        demo_obs, demo_act = demo_pairs
        idx = rng.integers(0, len(demo_obs), size=cfg.batch_size)
        mean_q, bc_loss, lam = self.actor_update(batch.states, demo_obs[idx], demo_act[idx], env_step)
        return {"critic_loss": 0.5 * (losses[0] + losses[1]), "mean_q": mean_q,
                "bc_loss": bc_loss, "lambda": lam}
