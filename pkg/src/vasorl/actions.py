"""Dosing action spaces for dual vasopressor control.

Five formulations share one convention for joint discrete indices: the
vasopressin decision is the major axis, so ``index = vp1 * n_sub + sub``
where ``sub`` indexes the norepinephrine component (a dose bin or a dose
delta).  The binary space has ``n_sub == 1``; the recurrent block-discrete
space drops the vasopressin axis and keeps vp1 switched on.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

MAX_DOSE = 0.5
DEFAULT_BINS = 10
_EPS = 1e-12
_GRID_TOL = 1e-9


class ActionKind(str, enum.Enum):
    BINARY = "binary"
    DUAL_MIXED = "dual_mixed"
    BLOCK_DISCRETE = "block_discrete"
    STEPWISE = "stepwise"
    LSTM_BLOCK_DISCRETE = "lstm_block_discrete"

    @classmethod
    def parse(cls, value: "str | ActionKind") -> "ActionKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {
            "binary_vp1": cls.BINARY,
            "mixed": cls.DUAL_MIXED,
            "block": cls.BLOCK_DISCRETE,
            "dual_bd": cls.BLOCK_DISCRETE,
            "bd": cls.BLOCK_DISCRETE,
            "dual_stepwise": cls.STEPWISE,
            "lstm_bd": cls.LSTM_BLOCK_DISCRETE,
            "lstm": cls.LSTM_BLOCK_DISCRETE,
        }
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class DoseAction:
    """A joint clinical action: vasopressin on/off and a norepinephrine dose."""

    vp1: int
    vp2: float

    def __post_init__(self):
        if self.vp1 not in (0, 1):
            raise ValueError(f"vp1 must be 0 or 1, got {self.vp1!r}")
        if not (0.0 < self.vp2 <= MAX_DOSE + _GRID_TOL):
            raise ValueError(f"vp2 must lie in (0, {MAX_DOSE}], got {self.vp2!r}")


@dataclass(frozen=True)
class DoseDelta:
    """A stepwise action: vasopressin on/off and a signed change of dose."""

    vp1: int
    delta: float


@dataclass(frozen=True)
class ActionSpaceSpec:
    kind: ActionKind = ActionKind.BLOCK_DISCRETE
    n_bins: int = DEFAULT_BINS
    step_size: float = 0.05
    max_step: float = 0.1
    num_candidate_samples: int = 50
    seq_len: int = 5
    burn_in: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kind", ActionKind.parse(self.kind))
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        if self.step_size <= 0 or self.max_step <= 0:
            raise ValueError("step_size and max_step must be positive")
        ratio = self.max_step / self.step_size
        if abs(ratio - round(ratio)) > 1e-6:
            raise ValueError("max_step must be an integer multiple of step_size")
        levels = MAX_DOSE / self.step_size
        if abs(levels - round(levels)) > 1e-6:
            raise ValueError("step_size must divide the dose range (0, 0.5]")
        if self.num_candidate_samples < 1:
            raise ValueError("num_candidate_samples must be positive")
        if self.seq_len < 1 or self.burn_in < 0:
            raise ValueError("seq_len must be >= 1 and burn_in >= 0")

    # -- geometry -----------------------------------------------------------

    @property
    def bin_width(self) -> float:
        return MAX_DOSE / self.n_bins

    @property
    def bin_centers(self) -> np.ndarray:
        return bin_centers(self.n_bins)

    @property
    def deltas(self) -> np.ndarray:
        k = int(round(self.max_step / self.step_size))
        return np.arange(-k, k + 1) * self.step_size

    @property
    def n_dose_levels(self) -> int:
        return int(round(MAX_DOSE / self.step_size))

    @property
    def is_recurrent(self) -> bool:
        return self.kind is ActionKind.LSTM_BLOCK_DISCRETE

    @property
    def is_enumerable(self) -> bool:
        return self.kind is not ActionKind.DUAL_MIXED

    @property
    def n_sub(self) -> int:
        """Width of the norepinephrine axis of the joint index."""
        if self.kind is ActionKind.BINARY:
            return 1
        if self.kind is ActionKind.STEPWISE:
            return len(self.deltas)
        return self.n_bins

    @property
    def n_actions(self) -> int:
        """Size of the joint discrete index (the analysis grid for DualMixed)."""
        if self.kind is ActionKind.BINARY:
            return 2
        if self.kind is ActionKind.LSTM_BLOCK_DISCRETE:
            return self.n_bins
        return 2 * self.n_sub

    @property
    def action_dim(self) -> int:
        """Width of the action encoding fed to feedforward Q-networks."""
        if self.kind is ActionKind.BINARY:
            return 1
        if self.kind is ActionKind.DUAL_MIXED:
            return 2
        return 1 + self.n_sub

    @property
    def state_extra_dim(self) -> int:
        """Columns appended to the clinical features to form the model state."""
        if self.kind is ActionKind.BINARY:
            return 1
        if self.kind is ActionKind.STEPWISE:
            return self.n_bins
        return 0

    def with_(self, **changes) -> "ActionSpaceSpec":
        return replace(self, **changes)

    # -- index encoding -----------------------------------------------------

    def encode(self, action: "DoseAction | DoseDelta") -> int:
        if self.kind is ActionKind.BINARY:
            return int(action.vp1)
        if self.kind is ActionKind.STEPWISE:
            if not isinstance(action, DoseDelta):
                raise TypeError("stepwise actions are DoseDelta instances")
            j = int(np.argmin(np.abs(self.deltas - action.delta)))
            if abs(self.deltas[j] - action.delta) > _GRID_TOL:
                raise ValueError(f"delta {action.delta} is not on the step grid")
            return int(action.vp1) * self.n_sub + j
        k = dose_to_bin(action.vp2, self.n_bins)
        if self.kind is ActionKind.LSTM_BLOCK_DISCRETE:
            return k
        return int(action.vp1) * self.n_bins + k

    def decode(self, index: int, current_dose: Optional[float] = None) -> "DoseAction | DoseDelta":
        if not 0 <= index < self.n_actions:
            raise IndexError(f"action index {index} outside [0, {self.n_actions})")
        if self.kind is ActionKind.BINARY:
            dose = bin_centers(DEFAULT_BINS)[0] if current_dose is None else current_dose
            return DoseAction(int(index), float(dose))
        if self.kind is ActionKind.LSTM_BLOCK_DISCRETE:
            return DoseAction(1, float(self.bin_centers[index]))
        vp1, sub = divmod(int(index), self.n_sub)
        if self.kind is ActionKind.STEPWISE:
            return DoseDelta(vp1, float(self.deltas[sub]))
        return DoseAction(vp1, float(self.bin_centers[sub]))

    def vp1_of(self, indices) -> np.ndarray:
        indices = np.asarray(indices)
        if self.kind is ActionKind.LSTM_BLOCK_DISCRETE:
            return np.ones_like(indices)
        if self.kind is ActionKind.BINARY:
            return indices
        return indices // self.n_sub

    def action_features(self) -> np.ndarray:
        """Encoding of every enumerated joint action, shape (n_actions, action_dim).

        vp1 occupies one column; the norepinephrine component is one-hot over
        bins or deltas.  Not defined for DualMixed, whose encoding is
        ``[vp1, dose]`` and built from sampled candidates.
        """
        if self.kind is ActionKind.DUAL_MIXED:
            raise ValueError("DualMixed actions are not enumerable")
        if self.kind is ActionKind.BINARY:
            return np.array([[0.0], [1.0]])
        if self.kind is ActionKind.LSTM_BLOCK_DISCRETE:
            return np.eye(self.n_bins)
        feats = np.zeros((self.n_actions, self.action_dim))
        for i in range(self.n_actions):
            vp1, sub = divmod(i, self.n_sub)
            feats[i, 0] = vp1
            feats[i, 1 + sub] = 1.0
        return feats


# -- free functions ---------------------------------------------------------


def bin_centers(n_bins: int) -> np.ndarray:
    width = MAX_DOSE / n_bins
    return width / 2 + width * np.arange(n_bins)


def dose_to_bin(dose: float, n_bins: int) -> int:
    """Index k of the right-closed bin (k*w, (k+1)*w] holding ``dose``."""
    if not (0.0 < dose <= MAX_DOSE + _GRID_TOL):
        raise ValueError(f"dose {dose!r} outside (0, {MAX_DOSE}]")
    width = MAX_DOSE / n_bins
    k = math.floor((dose - _EPS) / width)
    return min(max(k, 0), n_bins - 1)


def doses_to_bins(doses, n_bins: int) -> np.ndarray:
    doses = np.asarray(doses, dtype=float)
    if np.any(doses <= 0) or np.any(doses > MAX_DOSE + _GRID_TOL):
        raise ValueError(f"doses outside (0, {MAX_DOSE}]")
    k = np.floor((doses - _EPS) / (MAX_DOSE / n_bins)).astype(int)
    return np.clip(k, 0, n_bins - 1)


def snap_dose(dose, step_size: float):
    """Round a dose onto the positive step grid {step, 2*step, ..., 0.5}."""
    snapped = np.clip(np.round(np.asarray(dose, dtype=float) / step_size) * step_size, step_size, MAX_DOSE)
    return float(snapped) if np.ndim(snapped) == 0 else snapped


def enumerate_actions(
    spec: ActionSpaceSpec,
    current_dose: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> list[tuple[int, "DoseAction | DoseDelta"]]:
    """List the actions available in one state.

    Stepwise spaces need ``current_dose`` (deltas that leave (0, 0.5] are
    still listed; use :func:`stepwise_valid_mask` to exclude them).
    DualMixed returns ``2 * num_candidate_samples`` sampled candidates.
    """
    if spec.kind is ActionKind.STEPWISE:
        if current_dose is None:
            raise ValueError("stepwise enumeration requires current_dose")
    elif current_dose is not None and spec.kind is not ActionKind.BINARY:
        raise ValueError("current_dose is only meaningful for stepwise spaces")
    if spec.kind is ActionKind.DUAL_MIXED:
        if rng is None:
            raise ValueError("DualMixed enumeration requires an rng")
        doses = sample_candidate_doses(rng, spec.num_candidate_samples)
        out = []
        for vp1 in (0, 1):
            for j, d in enumerate(doses):
                out.append((vp1 * len(doses) + j, DoseAction(vp1, float(d))))
        return out
    return [(i, spec.decode(i, current_dose)) for i in range(spec.n_actions)]


def sample_candidate_doses(rng: np.random.Generator, n: int) -> np.ndarray:
    # (0, 0.5]: flip a draw from [0, 0.5)
    return MAX_DOSE - rng.uniform(0.0, MAX_DOSE, size=n)


def mixed_candidate_features(doses: np.ndarray) -> np.ndarray:
    """``[vp1, dose]`` rows for every (vp1, dose) pair, vp1-major."""
    doses = np.asarray(doses, dtype=float)
    n = len(doses)
    feats = np.empty((2 * n, 2))
    feats[:n, 0], feats[n:, 0] = 0.0, 1.0
    feats[:n, 1] = feats[n:, 1] = doses
    return feats


def stepwise_valid_mask(spec: ActionSpaceSpec, current_dose) -> np.ndarray:
    """Joint-action validity for a stepwise space.

    ``current_dose`` may be a scalar (returns shape (n_actions,)) or an array
    (returns (len, n_actions)).  A delta is valid iff the dose it lands on,
    rounded to the step grid, stays in (0, 0.5]; zero change is always valid.
    """
    if spec.kind is not ActionKind.STEPWISE:
        raise ValueError("validity masks apply to stepwise spaces only")
    cur = snap_dose(np.atleast_1d(np.asarray(current_dose, dtype=float)), spec.step_size)
    cur = np.atleast_1d(cur)
    landed = np.round((cur[:, None] + spec.deltas[None, :]) / spec.step_size) * spec.step_size
    sub = (landed > _GRID_TOL) & (landed <= MAX_DOSE + _GRID_TOL)
    sub[:, int(np.argmin(np.abs(spec.deltas)))] = True
    mask = np.concatenate([sub, sub], axis=1)
    return mask[0] if np.ndim(current_dose) == 0 else mask


def apply_delta(spec: ActionSpaceSpec, current_dose: float, delta: float) -> float:
    cur = snap_dose(current_dose, spec.step_size)
    return float(np.round((cur + delta) / spec.step_size) * spec.step_size)


def encode_state_with_dose(features, current_dose: float, n_bins: int) -> np.ndarray:
    """Append a one-hot of the current dose bin to a state vector."""
    features = np.asarray(features, dtype=float)
    onehot = np.zeros(n_bins)
    onehot[dose_to_bin(current_dose, n_bins)] = 1.0
    return np.concatenate([features, onehot])


def joint_index(vp1: Sequence[int], sub: Sequence[int], n_sub: int) -> np.ndarray:
    return np.asarray(vp1, dtype=int) * n_sub + np.asarray(sub, dtype=int)
