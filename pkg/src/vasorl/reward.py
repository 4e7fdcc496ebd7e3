"""Per-transition rewards: the simple vasopressor-penalty reward and the
windowed clinical-improvement reward."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import Cohort, Episode


class RewardKind(str, enum.Enum):
    SIMPLE = "simple"
    COMPREHENSIVE = "comprehensive"


@dataclass(frozen=True)
class RewardConfig:
    kind: RewardKind = RewardKind.COMPREHENSIVE
    lactate_window: int = 6
    mbp_window: int = 4
    sofa_window: int = 6
    norepi_window: int = 4
    mbp_threshold: float = 65.0
    death_penalty: float = -20.0
    survival_bonus_simple: float = 10.0
    step_survival: float = 1.0
    lactate_bonus: float = 1.0
    mbp_bonus: float = 1.0
    sofa_bonus: float = 3.0
    norepi_bonus: float = 1.0
    vaso_coeff: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kind", RewardKind(self.kind))
        for name in ("lactate_window", "mbp_window", "sofa_window", "norepi_window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("mbp_threshold", "death_penalty", "survival_bonus_simple", "vaso_coeff"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


def simple_step_reward(vp1: int, vp2: float, terminal: bool, survived: bool, config: RewardConfig = RewardConfig()) -> float:
    reward = -config.vaso_coeff * (vp1 + 2.0 * vp2 - 1.0)
    if terminal:
        reward += config.survival_bonus_simple if survived else -config.survival_bonus_simple
    return float(reward)


def _future(values: np.ndarray, t: int, window: int, last: int) -> np.ndarray:
    # strictly-future steps (t, t + window], never past the final transition
    return values[t + 1 : min(t + window, last) + 1]


def comprehensive_step_reward(episode: Episode, t: int, config: RewardConfig = RewardConfig()) -> float:
    """Survival base plus improvement bonuses over look-ahead windows.

    Windows cover transitions t+1..t+w and stop at the episode's last
    transition; an improvement is a strict drop (or, for MBP, a rise from
    below the threshold to at least the threshold) relative to step t.
    """
    last = episode.n_transitions - 1
    if not 0 <= t <= last:
        raise IndexError(f"step {t} outside episode of {last + 1} transitions")
    lactate = episode.feature("lactate")
    mbp = episode.feature("mbp")
    sofa = episode.feature("sofa")
    vp2 = episode.vp2

    reward = config.step_survival
    window = _future(lactate, t, config.lactate_window, last)
    if window.size and window.min() < lactate[t]:
        reward += config.lactate_bonus
    window = _future(mbp, t, config.mbp_window, last)
    if mbp[t] < config.mbp_threshold and window.size and window.max() >= config.mbp_threshold:
        reward += config.mbp_bonus
    window = _future(sofa, t, config.sofa_window, last)
    if window.size and window.min() < sofa[t]:
        reward += config.sofa_bonus
    window = _future(vp2, t, config.norepi_window, last)
    if window.size and window.min() < vp2[t]:
        reward += config.norepi_bonus
    if t == last and episode.mortality:
        reward += config.death_penalty
    return float(reward)


def episode_rewards(episode: Episode, config: RewardConfig = RewardConfig()) -> np.ndarray:
    n = episode.n_transitions
    if config.kind is RewardKind.SIMPLE:
        return np.array(
            [simple_step_reward(int(episode.vp1[k]), float(episode.vp2[k]), k == n - 1, episode.survived, config)
             for k in range(n)]
        )
    return np.array([comprehensive_step_reward(episode, k, config) for k in range(n)])


def annotate_rewards(cohort: Cohort, config: RewardConfig = RewardConfig()) -> Cohort:
    """Fill every transition's reward.  Must run on raw (unnormalized) features."""
    if cohort.norm_stats is not None:
        raise ValueError("rewards read clinical thresholds; annotate before normalizing")
    return cohort.map(lambda ep: ep.with_rewards(episode_rewards(ep, config)))
