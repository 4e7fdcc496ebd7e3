"""Offline Q-learning for dual-vasopressor dosing with interchangeable action-space designs."""

from .actions import ActionKind, ActionSpaceSpec
from .config import RunConfig, load_config
from .data import Cohort, Episode, NormStats, ingest_csv, normalize, split_cohort, write_csv
from .ope import OpeReport, delta_q_metrics, evaluate_model_ope, fqe_gaussian_report, wis_evaluate
from .qlearning import QModel, TrainConfig, decide_episodes, train
from .reward import RewardConfig, RewardKind, annotate_rewards
from .sim import SimConfig, generate_cohort, policy_value_oracle

__version__ = "0.1.0"

__all__ = [
    "ActionKind", "ActionSpaceSpec", "Cohort", "Episode", "NormStats", "OpeReport", "QModel", "RewardConfig",
    "RewardKind", "RunConfig", "SimConfig", "TrainConfig", "annotate_rewards", "decide_episodes", "delta_q_metrics",
    "evaluate_model_ope", "fqe_gaussian_report", "generate_cohort", "ingest_csv", "load_config", "normalize",
    "policy_value_oracle", "split_cohort", "train", "wis_evaluate", "write_csv",
]
