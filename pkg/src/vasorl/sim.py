"""A small parametric septic-shock simulator with a logged clinician policy.

Hidden physiology: mean blood pressure relaxes toward a patient baseline
plus a saturating norepinephrine response (and a fixed vasopressin boost);
lactate clears while MBP is at or above 65 and accumulates below it; SOFA,
renal markers and flags are derived from those two.  Death is a per-step
logistic hazard in SOFA and lactate.  Everything is seeded per patient, so
cohorts are reproducible and patients can be simulated independently.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from .actions import MAX_DOSE
from .data import FEATURES, Cohort, Episode, feature_index
from .reward import RewardConfig, episode_rewards

STEP = 0.05
DELTAS = np.array([-0.1, -0.05, 0.0, 0.05, 0.1])
ADMISSION_DOSES = (0.05, 0.1)


@dataclass(frozen=True)
class SimConfig:
    n_patients: int = 500
    max_len: int = 40
    seed: int = 42
    # MBP dynamics (mmHg)
    mbp_base_mean: float = 52.0
    mbp_base_sd: float = 5.0
    mbp_base_drift: float = 0.1
    mbp_relax: float = 0.35
    mbp_gain: float = 30.0
    mbp_ec50: float = 0.15
    vp1_gain: float = 6.0
    sensitivity_sd: float = 0.25
    # lactate (mmol/L), multiplicative per step
    lactate_init_mean: float = 5.0
    lactate_init_sd: float = 1.5
    lactate_decay: float = 0.02
    lactate_growth: float = 0.04
    # SOFA coupling
    sofa_base_mean: float = 8.0
    sofa_lactate: float = 0.8
    sofa_mbp: float = 0.15
    # mortality hazard: scale * sigmoid(intercept + b_sofa (sofa - 10) + b_lac (lactate - 4)
    #   + b_dose (vp2 - 0.25) + b_hypo max(0, 65 - MBP) / 5)
    hazard_scale: float = 0.3
    hazard_intercept: float = -4.0
    hazard_sofa: float = 0.35
    hazard_lactate: float = 0.45
    # high doses carry their own risk, so more drug is not free
    hazard_dose: float = 2.0
    hazard_hypotension: float = 0.4
    # observation noise multiplier (0 disables)
    obs_noise: float = 1.0
    # clinician policy
    titrate_low: float = 65.0
    titrate_high: float = 70.0
    vp1_sofa_threshold: float = 10.0
    epsilon: float = 0.1
    recovery_steps: int = 4

    def __post_init__(self):
        if self.n_patients < 1 or self.max_len < 2:
            raise ValueError("need n_patients >= 1 and max_len >= 2")
        if not 0.0 <= self.hazard_scale <= 1.0:
            raise ValueError("hazard_scale must lie in [0, 1] so hazards are probabilities")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        for k, v in asdict(self).items():
            if isinstance(v, float) and not math.isfinite(v):
                raise ValueError(f"{k} must be finite")

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SimConfig":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


# -- policies -------------------------------------------------------------------


class SimPolicy(Protocol):
    def probs(self, obs: np.ndarray, current_dose: float) -> tuple[float, np.ndarray]:
        """(P(vp1 = 1), distribution over ``DELTAS``) given raw observed features."""


def step_dose(current: float, delta: float) -> float:
    return float(np.clip(round((current + delta) / STEP) * STEP, STEP, MAX_DOSE))


@dataclass(frozen=True)
class ClinicianPolicy:
    """Threshold titration with epsilon-uniform jitter on both drugs."""

    low: float = 65.0
    high: float = 70.0
    sofa_threshold: float = 10.0
    epsilon: float = 0.1

    @classmethod
    def from_config(cls, config: SimConfig) -> "ClinicianPolicy":
        return cls(config.titrate_low, config.titrate_high, config.vp1_sofa_threshold, config.epsilon)

    def main_delta(self, mbp: float) -> float:
        if mbp < self.low:
            return STEP
        if mbp >= self.high:
            return -STEP
        return 0.0

    def probs(self, obs: np.ndarray, current_dose: float) -> tuple[float, np.ndarray]:
        mbp = obs[feature_index("mbp")]
        p_delta = np.full(len(DELTAS), self.epsilon / len(DELTAS))
        p_delta[np.argmin(np.abs(DELTAS - self.main_delta(mbp)))] += 1.0 - self.epsilon
        on = obs[feature_index("sofa")] > self.sofa_threshold
        p_on = 1.0 - self.epsilon / 2 if on else self.epsilon / 2
        return p_on, p_delta


@dataclass(frozen=True)
class MixturePolicy:
    """(1 - weight) * base + weight * other, mixed factor by factor."""

    base: SimPolicy
    other: SimPolicy
    weight: float = 0.3

    def probs(self, obs, current_dose):
        p1, d1 = self.base.probs(obs, current_dose)
        p2, d2 = self.other.probs(obs, current_dose)
        w = self.weight
        return (1 - w) * p1 + w * p2, (1 - w) * d1 + w * d2


def shifted_policy(config: SimConfig, weight: float = 0.3) -> MixturePolicy:
    """The clinician nudged toward titrating up until MBP reaches the upper band."""
    base = ClinicianPolicy.from_config(config)
    eager = replace(base, low=config.titrate_high)
    return MixturePolicy(base, eager, weight)


def action_prob(policy: SimPolicy, obs: np.ndarray, current_dose: float, vp1: int, new_dose: float) -> float:
    """Probability that ``policy`` logs (vp1, new_dose); clipped deltas pool their mass."""
    p_on, p_delta = policy.probs(obs, current_dose)
    mass = sum(p for d, p in zip(DELTAS, p_delta) if abs(step_dose(current_dose, d) - new_dose) < 1e-9)
    return float((p_on if vp1 else 1.0 - p_on) * mass)


# -- simulation -----------------------------------------------------------------


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


_NOISE = {"mbp": 2.0, "lactate": 0.15, "bun": 1.0, "creatinine": 0.05, "fluid_total": 10.0, "urine_hr": 3.0}


@dataclass
class _Patient:
    base: float
    sens: float
    mbp: float
    lactate: float
    sofa_base: float
    creatinine: float
    bun: float
    cortico: float


def _observe(p: _Patient, config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    noise = config.obs_noise
    sofa = float(np.clip(round(p.sofa_base + config.sofa_lactate * (p.lactate - 2.0)
                               + config.sofa_mbp * max(0.0, 65.0 - p.mbp)), 0, 24))
    fluid = 150.0 + 8.0 * max(0.0, 65.0 - p.mbp)
    urine = max(0.0, 40.0 + 1.5 * (p.mbp - 65.0))
    vals = {
        "mbp": p.mbp, "lactate": p.lactate, "bun": p.bun, "creatinine": p.creatinine,
        "fluid_total": fluid, "urine_hr": urine, "corticosteroid": p.cortico, "sofa": sofa,
        "mech_vent": float(sofa >= 11), "rrt": float(p.creatinine > 3.5),
    }
    out = np.array([vals[f] for f in FEATURES])
    if noise > 0:
        for name, sd in _NOISE.items():
            out[feature_index(name)] += noise * sd * rng.standard_normal()
    for name in ("lactate", "bun", "creatinine", "fluid_total", "urine_hr"):
        j = feature_index(name)
        out[j] = max(out[j], 0.0)
    return out


def _patient_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def simulate_patient(index: int, config: SimConfig, policy: Optional[SimPolicy] = None) -> Episode:
    policy = ClinicianPolicy.from_config(config) if policy is None else policy
    rng = _patient_rng(config.seed, index)
    p = _Patient(
        base=rng.normal(config.mbp_base_mean, config.mbp_base_sd),
        sens=float(np.exp(config.sensitivity_sd * rng.standard_normal())),
        mbp=0.0,
        lactate=max(0.5, rng.normal(config.lactate_init_mean, config.lactate_init_sd)),
        sofa_base=rng.normal(config.sofa_base_mean, 1.5),
        creatinine=max(0.5, rng.normal(1.8, 0.5)),
        bun=max(5.0, rng.normal(35.0, 8.0)),
        cortico=float(rng.random() < 0.3),
    )
    p.mbp = p.base + rng.normal(0.0, 2.0)
    dose = float(rng.choice(ADMISSION_DOSES))  # infusion running on admission

    rows, vp1s, vp2s = [], [], []
    died = False
    streak = 0
    obs = _observe(p, config, rng)
    for t in range(config.max_len):
        p_on, p_delta = policy.probs(obs, dose)
        vp1 = int(rng.random() < p_on)
        dose = step_dose(dose, DELTAS[rng.choice(len(DELTAS), p=p_delta)])
        rows.append(obs)
        vp1s.append(vp1)
        vp2s.append(dose)

        # hidden dynamics
        p.base += config.mbp_base_drift
        target = p.base + config.mbp_gain * p.sens * dose / (dose + config.mbp_ec50) + config.vp1_gain * vp1
        p.mbp += config.mbp_relax * (target - p.mbp) + rng.normal(0.0, 1.0)
        rate = -config.lactate_decay if p.mbp >= 65.0 else config.lactate_growth
        p.lactate = float(np.clip(p.lactate * (1.0 + rate) + rng.normal(0.0, 0.05), 0.3, 20.0))
        renal = 0.03 if p.mbp < 65.0 else -0.01
        p.creatinine = max(0.3, p.creatinine + renal)
        p.bun = max(5.0, p.bun + 15.0 * renal)
        obs = _observe(p, config, rng)

        sofa = obs[feature_index("sofa")]
        hazard = config.hazard_scale * _sigmoid(
            config.hazard_intercept + config.hazard_sofa * (sofa - 10.0)
            + config.hazard_lactate * (p.lactate - 4.0) + config.hazard_dose * (dose - 0.25)
            + config.hazard_hypotension * max(0.0, 65.0 - p.mbp) / 5.0)
        if t >= 1 and rng.random() < hazard:
            died = True
            break
        streak = streak + 1 if (p.mbp >= 65.0 and p.lactate < 2.0) else 0
        if streak >= config.recovery_steps:
            break
    rows.append(obs)
    vp1s.append(vp1s[-1])
    vp2s.append(vp2s[-1])
    return Episode(f"p{index:05d}", np.array(rows), np.array(vp1s), np.array(vp2s), died)


def generate_cohort(config: SimConfig = SimConfig(), policy: Optional[SimPolicy] = None) -> Cohort:
    return Cohort(tuple(simulate_patient(i, config, policy) for i in range(config.n_patients)))


def policy_value_oracle(policy: Optional[SimPolicy], config: SimConfig, n_rollouts: int = 1000,
                        gamma: float = 1.0, reward_config: RewardConfig = RewardConfig(),
                        seed: Optional[int] = None) -> tuple[float, float]:
    """Monte Carlo mean discounted return of ``policy`` and its standard error."""
    cfg = config.with_(n_patients=n_rollouts, seed=config.seed if seed is None else seed)
    returns = np.empty(n_rollouts)
    for i in range(n_rollouts):
        r = episode_rewards(simulate_patient(i, cfg, policy), reward_config)
        returns[i] = np.sum(r * gamma ** np.arange(len(r))) if gamma != 1.0 else r.sum()
    se = returns.std(ddof=1) / math.sqrt(n_rollouts) if n_rollouts > 1 else 0.0
    return float(returns.mean()), float(se)


def behavior_probabilities(episode: Episode, policy: SimPolicy, raw_features: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-transition probability of each logged action under ``policy``.

    The dose before row 0 is not logged, so row 0 marginalizes over the two
    equally likely admission doses.
    """
    feats = episode.features if raw_features is None else raw_features
    T = episode.n_transitions
    out = np.empty(T)
    for k in range(T):
        if k == 0:
            out[k] = 0.5 * sum(action_prob(policy, feats[0], d0, int(episode.vp1[0]), float(episode.vp2[0]))
                               for d0 in ADMISSION_DOSES)
        else:
            out[k] = action_prob(policy, feats[k], float(episode.vp2[k - 1]), int(episode.vp1[k]), float(episode.vp2[k]))
    return out
