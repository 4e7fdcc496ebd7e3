"""Multi-seed synthetic benchmark comparing action-space designs by WIS improvement."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .actions import ActionKind, ActionSpaceSpec
from .data import Cohort, normalize
from .ope import OpeReport, evaluate_model_ope
from .qlearning import TrainConfig, train
from .reward import RewardConfig, annotate_rewards
from .sim import SimConfig, generate_cohort

log = logging.getLogger(__name__)

DEFAULT_MODELS = {
    "dual_mixed": ActionSpaceSpec(ActionKind.DUAL_MIXED),
    "dual_bd_10": ActionSpaceSpec(ActionKind.BLOCK_DISCRETE, n_bins=10),
    "lstm_bd_10": ActionSpaceSpec(ActionKind.LSTM_BLOCK_DISCRETE, n_bins=10),
}


@dataclass(frozen=True)
class BenchmarkConfig:
    seeds: tuple = (0, 1, 2, 3, 4)
    n_train: int = 2000
    n_test: int = 500
    epochs: int = 500
    batches_per_epoch: int = 2
    alpha: float = 0.0
    dtype: str = "float32"
    reward_scale: float = 0.05
    bootstrap: int = 200
    sim: SimConfig = field(default_factory=SimConfig)


@dataclass
class SeedResult:
    seed: int
    reports: dict
    seconds: float

    def improvement(self, name: str) -> float:
        return self.reports[name].improvement


def train_test_cohort(seed: int, n_train: int, n_test: int, sim: SimConfig = SimConfig(),
                      reward: RewardConfig = RewardConfig()) -> Cohort:
    """Simulated, reward-annotated, normalized cohort with an exact train/test split."""
    cohort = annotate_rewards(generate_cohort(replace(sim, n_patients=n_train + n_test, seed=seed)), reward)
    order = np.random.default_rng(seed).permutation(len(cohort))
    assignment = {}
    for rank, i in enumerate(order):
        assignment[cohort.episodes[i].patient_id] = "train" if rank < n_train else "test"
    return normalize(replace(cohort, split_assignment=assignment))


def run_seed(seed: int, config: BenchmarkConfig = BenchmarkConfig(), models: Optional[dict] = None) -> SeedResult:
    models = DEFAULT_MODELS if models is None else models
    t0 = time.perf_counter()
    cohort = train_test_cohort(seed, config.n_train, config.n_test, config.sim)
    test_eps = cohort.split("test")
    reports: dict[str, OpeReport] = {}
    for name, spec in models.items():
        tc = TrainConfig(alpha=config.alpha, epochs=config.epochs, batches_per_epoch=config.batches_per_epoch,
                         seed=seed, dtype=config.dtype, reward_scale=config.reward_scale)
        model = train(cohort, tc, spec)
        reports[name] = evaluate_model_ope(model, test_eps, B=config.bootstrap, seed=seed)
        log.info("seed %d %s improvement %.3f", seed, name, reports[name].improvement)
    return SeedResult(seed, reports, time.perf_counter() - t0)


def run_benchmark(config: BenchmarkConfig = BenchmarkConfig(), models: Optional[dict] = None) -> list[SeedResult]:
    return [run_seed(s, config, models) for s in config.seeds]


def ordering_summary(results: Sequence[SeedResult]) -> dict:
    bd_over_mixed = sum(r.improvement("dual_bd_10") > r.improvement("dual_mixed") for r in results)
    lstm_over_bd = sum(r.improvement("lstm_bd_10") >= r.improvement("dual_bd_10") for r in results)
    return {"n_seeds": len(results), "bd_over_mixed": int(bd_over_mixed), "lstm_over_bd": int(lstm_over_bd)}
