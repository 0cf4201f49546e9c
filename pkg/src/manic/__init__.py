"""Model-based agent: learned latent world model, GA planner, preference-trained utility."""

__version__ = "0.1.0"

from .actions import ActionSpace, one_hot
from .agent import AgentConfig, ManicAgent, MemoryPolicyAgent, PolicyAgent, run_episode
from .bootstrap import (
    BeliefEstimates,
    TrainConfig,
    WalkDataset,
    collect_random_walk,
    estimate_beliefs,
    pretrain,
)
from .contentment import (
    ContentmentModel,
    PreferenceRecord,
    evolve_contentment,
    make_contentment,
    train_preferences,
)
from .environments import make_env
from .learning import LearningSystem, Observation, build_learning_system, error_signal
from .net import Approximator, init_network, load_model
from .planner import PlanPool, advance, choose_action, evaluate, init_pool, refine

__all__ = [
    "ActionSpace", "AgentConfig", "Approximator", "BeliefEstimates",
    "ContentmentModel", "LearningSystem", "ManicAgent", "MemoryPolicyAgent",
    "Observation", "PlanPool", "PolicyAgent", "PreferenceRecord", "TrainConfig",
    "WalkDataset", "advance", "build_learning_system", "choose_action",
    "collect_random_walk", "error_signal", "estimate_beliefs", "evaluate",
    "evolve_contentment", "init_network", "init_pool", "load_model",
    "make_contentment", "make_env", "one_hot", "pretrain", "refine",
    "run_episode", "train_preferences", "__version__",
]
