"""Regularized optimal-transport imitation learning at desk scale."""

from rot.agent import Agent, AgentConfig
from rot.approximator import Adam, Mlp
from rot.bc_trainer import pretrain
from rot.envs import DemoSet, NavEnv, generate_demos, load_demos, make_env
from rot.harness import RunConfig, compare_runs, run
from rot.ot_reward import OTConfig, score_against_demos, sinkhorn
from rot.replay import ReplayBuffer

__version__ = "0.1.0"

__all__ = [
    "Adam", "Agent", "AgentConfig", "DemoSet", "Mlp", "NavEnv", "OTConfig", "ReplayBuffer",
    "RunConfig", "compare_runs", "generate_demos", "load_demos", "make_env", "pretrain",
    "run", "score_against_demos", "sinkhorn",
]
