"""Test-time self-evolution: label-free GRPO adaptation with a reflecting, synthesizing teacher."""
from .config import ConfigError, RunConfig, load_config, validate_config
from .consensus import canonicalize_answer, majority_vote
from .estimator import TTSRSolver
from .grpo import compute_group_advantages, grpo_objective, grpo_step
from .loop import RunReport, evaluate, run, run_iteration
from .similarity import similarity_ratio, text_similarity
from .teacher import difficulty_reward, format_gate, similarity_penalty, teacher_reward
from .types import Question, Trajectory, TrajectoryGroup

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "RunConfig", "load_config", "validate_config",
    "canonicalize_answer", "majority_vote", "TTSRSolver",
    "compute_group_advantages", "grpo_objective", "grpo_step",
    "RunReport", "evaluate", "run", "run_iteration",
    "similarity_ratio", "text_similarity",
    "difficulty_reward", "format_gate", "similarity_penalty", "teacher_reward",
    "Question", "Trajectory", "TrajectoryGroup",
]
