"""Logged patient trajectories: data model, CSV ingestion, splits, scaling."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .actions import MAX_DOSE, DoseAction, bin_centers

log = logging.getLogger(__name__)

FEATURES = (
    "mbp",
    "lactate",
    "bun",
    "creatinine",
    "fluid_total",
    "urine_hr",
    "corticosteroid",
    "sofa",
    "mech_vent",
    "rrt",
)
FLAG_FEATURES = ("corticosteroid", "mech_vent", "rrt")
CONTINUOUS_FEATURES = tuple(f for f in FEATURES if f not in FLAG_FEATURES)
CSV_COLUMNS = ("patient_id", "t", *FEATURES, "vp1", "vp2", "mortality")
STATE_DIM = len(FEATURES)
SPLITS = ("train", "val", "test")

MIN_DOSE = float(bin_centers(10)[0])
STD_FLOOR = 1e-6


class CsvParseError(ValueError):
    """A row of a cohort CSV could not be parsed."""


class CohortValidationError(ValueError):
    """Cohort contents violate a trajectory invariant."""


def feature_index(name: str) -> int:
    return FEATURES.index(name)


def clamp_dose(vp2: float) -> float:
    """Clip a norepinephrine dose into (0, 0.5]; non-positive doses become 0.025."""
    if not math.isfinite(vp2) or vp2 <= 0.0:
        return MIN_DOSE
    return min(vp2, MAX_DOSE)


# -- domain types -------------------------------------------------------------


@dataclass(frozen=True)
class PatientState:
    features: np.ndarray
    dose_onehot: Optional[np.ndarray] = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        object.__setattr__(self, "features", feats)
        if self.dose_onehot is not None:
            onehot = np.asarray(self.dose_onehot, dtype=float)
            if onehot.sum() != 1.0 or not np.all((onehot == 0) | (onehot == 1)):
                raise ValueError("dose_onehot must be a one-hot vector")
            object.__setattr__(self, "dose_onehot", onehot)

    @property
    def vector(self) -> np.ndarray:
        if self.dose_onehot is None:
            return self.features
        return np.concatenate([self.features, self.dose_onehot])


@dataclass(frozen=True)
class Transition:
    patient_id: str
    t: int
    state: PatientState
    action: DoseAction
    reward: float
    next_state: PatientState
    terminal: bool
    mortality: bool


@dataclass(frozen=True, eq=False)
class Episode:
    """One patient's trajectory.

    ``features`` holds every observed row (``T + 1`` of them); row ``k`` is the
    state of transition ``k`` and the next state of transition ``k - 1``.
    ``vp1``/``vp2`` are logged per row; the final row's action is kept for
    round-tripping but belongs to no transition.
    """

    patient_id: str
    features: np.ndarray
    vp1: np.ndarray
    vp2: np.ndarray
    mortality: bool
    t0: int = 0
    rewards: Optional[np.ndarray] = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 2 or len(feats) < 2:
            raise CohortValidationError(f"episode {self.patient_id}: need >= 2 rows")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "vp1", np.asarray(self.vp1, dtype=int))
        object.__setattr__(self, "vp2", np.asarray(self.vp2, dtype=float))
        if len(self.vp1) != len(feats) or len(self.vp2) != len(feats):
            raise CohortValidationError(f"episode {self.patient_id}: action rows != state rows")
        if self.rewards is not None:
            rewards = np.asarray(self.rewards, dtype=float)
            if rewards.shape != (len(feats) - 1,) or not np.all(np.isfinite(rewards)):
                raise CohortValidationError(f"episode {self.patient_id}: bad reward vector")
            object.__setattr__(self, "rewards", rewards)

    @property
    def n_transitions(self) -> int:
        return len(self.features) - 1

    def __len__(self) -> int:
        return self.n_transitions

    @property
    def outcome(self) -> str:
        return "died" if self.mortality else "survived"

    @property
    def survived(self) -> bool:
        return not self.mortality

    def feature(self, name: str) -> np.ndarray:
        return self.features[:, feature_index(name)]

    def with_rewards(self, rewards) -> "Episode":
        return replace(self, rewards=np.asarray(rewards, dtype=float))

    def with_features(self, features) -> "Episode":
        return replace(self, features=np.asarray(features, dtype=float))

    def transitions(self) -> list[Transition]:
        out = []
        last = self.n_transitions - 1
        for k in range(self.n_transitions):
            out.append(
                Transition(
                    patient_id=self.patient_id,
                    t=self.t0 + k,
                    state=PatientState(self.features[k]),
                    action=DoseAction(int(self.vp1[k]), float(self.vp2[k])),
                    reward=float(self.rewards[k]) if self.rewards is not None else float("nan"),
                    next_state=PatientState(self.features[k + 1]),
                    terminal=k == last,
                    mortality=bool(self.mortality) if k == last else False,
                )
            )
        return out


@dataclass(frozen=True)
class NormStats:
    """Per-feature standardization fitted on the training split."""

    mean: Mapping[str, float]
    std: Mapping[str, float]

    def transform(self, features: np.ndarray) -> np.ndarray:
        out = np.array(features, dtype=float, copy=True)
        for name in self.mean:
            j = feature_index(name)
            out[..., j] = (out[..., j] - self.mean[name]) / self.std[name]
        return out

    def inverse(self, features: np.ndarray) -> np.ndarray:
        out = np.array(features, dtype=float, copy=True)
        for name in self.mean:
            j = feature_index(name)
            out[..., j] = out[..., j] * self.std[name] + self.mean[name]
        return out

    def to_dict(self) -> dict:
        return {name: {"mean": self.mean[name], "std": self.std[name]} for name in self.mean}

    @classmethod
    def from_dict(cls, payload: Mapping[str, Mapping[str, float]]) -> "NormStats":
        return cls(
            mean={k: float(v["mean"]) for k, v in payload.items()},
            std={k: float(v["std"]) for k, v in payload.items()},
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NormStats":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Cohort:
    episodes: tuple
    state_dim: int = STATE_DIM
    norm_stats: Optional[NormStats] = None
    split_assignment: Optional[Mapping[str, str]] = None

    def __post_init__(self):
        object.__setattr__(self, "episodes", tuple(self.episodes))

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def patient_ids(self) -> list[str]:
        return [ep.patient_id for ep in self.episodes]

    def split(self, name: str) -> list[Episode]:
        if self.split_assignment is None:
            raise CohortValidationError("cohort has no split assignment")
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [ep for ep in self.episodes if self.split_assignment[ep.patient_id] == name]

    def map(self, fn) -> "Cohort":
        return replace(self, episodes=tuple(fn(ep) for ep in self.episodes))

    @property
    def n_transitions(self) -> int:
        return sum(ep.n_transitions for ep in self.episodes)


# -- ingestion ----------------------------------------------------------------


def _parse_float(raw: str, column: str, row_no: int) -> float:
    raw = raw.strip()
    if raw == "":
        return float("nan")
    try:
        value = float(raw)
    except ValueError:
        raise CsvParseError(f"row {row_no}: column {column!r} is not numeric: {raw!r}") from None
    if math.isinf(value):
        raise CsvParseError(f"row {row_no}: column {column!r} is infinite")
    return value


def ingest_csv(path, schema: Optional[Mapping[str, str]] = None) -> Cohort:
    """Read a cohort CSV (one row per patient-hour) into episodes.

    ``schema`` maps canonical column names to the file's headers when they
    differ.  Missing values are forward filled within a patient; values
    missing before a patient's first observation take the cohort median.
    Doses are clipped into (0, 0.5].  Patients with fewer than two
    transitions are dropped and counted in a warning.
    """
    schema = dict(schema or {})
    colmap = {c: schema.get(c, c) for c in CSV_COLUMNS}
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        missing = [c for c, h in colmap.items() if h not in header]
        if missing:
            raise CsvParseError(f"{path}: missing columns {missing}")
        pos = {c: header.index(h) for c, h in colmap.items()}

        groups: dict[str, list] = {}
        order: list[str] = []
        last_pid = None
        for row_no, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if len(row) != len(header):
                raise CsvParseError(f"row {row_no}: expected {len(header)} fields, got {len(row)}")
            pid = row[pos["patient_id"]].strip()
            if pid == "":
                raise CsvParseError(f"row {row_no}: empty patient_id")
            t_raw = _parse_float(row[pos["t"]], "t", row_no)
            if math.isnan(t_raw) or t_raw != int(t_raw):
                raise CsvParseError(f"row {row_no}: t must be an integer")
            if pid != last_pid:
                if pid in groups:
                    raise CohortValidationError(f"row {row_no}: rows of patient {pid!r} are not contiguous")
                groups[pid] = []
                order.append(pid)
                last_pid = pid
            values = [_parse_float(row[pos[c]], c, row_no) for c in (*FEATURES, "vp1", "vp2", "mortality")]
            groups[pid].append((row_no, int(t_raw), values))

    all_rows = np.array([v for rows in groups.values() for _, _, v in rows], dtype=float)
    n_feat = len(FEATURES)
    if len(all_rows):
        with np.errstate(all="ignore"):
            medians = np.array([np.nanmedian(all_rows[:, j]) if np.any(~np.isnan(all_rows[:, j])) else 0.0
                                for j in range(n_feat)])
    else:
        medians = np.zeros(n_feat)

    episodes = []
    skipped = 0
    for pid in order:
        rows = groups[pid]
        ts = [t for _, t, _ in rows]
        for k in range(1, len(ts)):
            if ts[k] <= ts[k - 1]:
                raise CohortValidationError(
                    f"row {rows[k][0]}: non-monotonic time for patient {pid!r} ({ts[k - 1]} -> {ts[k]})"
                )
            if ts[k] != ts[k - 1] + 1:
                raise CohortValidationError(f"row {rows[k][0]}: time gap for patient {pid!r} ({ts[k - 1]} -> {ts[k]})")
        if len(rows) < 3:
            skipped += 1
            continue
        block = np.array([v for _, _, v in rows], dtype=float)
        feats = _forward_fill(block[:, :n_feat], medians)
        vp1 = _forward_fill(block[:, n_feat : n_feat + 1], np.zeros(1))[:, 0]
        vp2 = _forward_fill(block[:, n_feat + 1 : n_feat + 2], np.zeros(1))[:, 0]
        vp2 = np.array([clamp_dose(v) for v in vp2])
        mort = block[:, n_feat + 2]
        died = bool(np.nanmax(mort) > 0) if np.any(~np.isnan(mort)) else False
        if np.any((vp1 != 0) & (vp1 != 1)):
            raise CohortValidationError(f"patient {pid!r}: vp1 must be 0 or 1")
        episodes.append(Episode(pid, feats, vp1.astype(int), vp2, died, t0=ts[0]))
    if skipped:
        log.warning("skipped %d patient(s) with fewer than 2 transitions", skipped)
    return Cohort(tuple(episodes))


def _forward_fill(block: np.ndarray, leading: np.ndarray) -> np.ndarray:
    out = block.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        prev = leading[j]
        for k in range(len(col)):
            if np.isnan(col[k]):
                col[k] = prev
            else:
                prev = col[k]
    return out


def write_csv(cohort: Cohort | Iterable[Episode], path) -> None:
    """Write episodes in the cohort CSV contract (inverse of :func:`ingest_csv`)."""
    episodes = cohort.episodes if isinstance(cohort, Cohort) else list(cohort)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for ep in episodes:
            for k in range(len(ep.features)):
                feats = [_fmt(x) for x in ep.features[k]]
                writer.writerow([ep.patient_id, ep.t0 + k, *feats, int(ep.vp1[k]), _fmt(ep.vp2[k]), int(ep.mortality)])


def _fmt(x: float) -> str:
    return repr(float(x))


# -- splitting and scaling ----------------------------------------------------


def split_cohort(cohort: Cohort, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 42) -> Cohort:
    """Assign each patient to train/val/test.

    The assignment depends only on the set of patient ids and the seed.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive fractions summing to 1, got {ratios}")
    pids = sorted(set(cohort.patient_ids))
    n = len(pids)
    if n < len(SPLITS):
        raise CohortValidationError(f"cannot split {n} patient(s) into {len(SPLITS)} splits")
    n_val = max(1, int(round(ratios[1] * n)))
    n_test = max(1, int(round(ratios[2] * n)))
    n_train = n - n_val - n_test
    if n_train < 1:
        n_train, n_val = 1, n - 1 - n_test
    perm = np.random.default_rng(seed).permutation(n)
    assignment = {}
    for rank, i in enumerate(perm):
        name = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
        assignment[pids[i]] = name
    return replace(cohort, split_assignment=assignment)


def fit_norm_stats(episodes: Sequence[Episode]) -> NormStats:
    if not episodes:
        raise CohortValidationError("cannot fit normalization on an empty train split")
    rows = np.concatenate([ep.features[:-1] for ep in episodes], axis=0)
    mean, std = {}, {}
    for name in CONTINUOUS_FEATURES:
        col = rows[:, feature_index(name)]
        mean[name] = float(col.mean())
        std[name] = float(max(col.std(), STD_FLOOR))
    return NormStats(mean, std)


def normalize(cohort: Cohort) -> Cohort:
    """Standardize continuous features with statistics from train transitions only."""
    if cohort.norm_stats is not None:
        raise CohortValidationError("cohort is already normalized")
    stats = fit_norm_stats(cohort.split("train"))
    out = cohort.map(lambda ep: ep.with_features(stats.transform(ep.features)))
    return replace(out, norm_stats=stats)


def denormalize(cohort: Cohort) -> Cohort:
    if cohort.norm_stats is None:
        return cohort
    stats = cohort.norm_stats
    out = cohort.map(lambda ep: ep.with_features(stats.inverse(ep.features)))
    return replace(out, norm_stats=None)


def validate_episode(ep: Episode) -> None:
    """Check the value-range invariants of a raw (unnormalized) episode."""
    for name in FLAG_FEATURES:
        col = ep.feature(name)
        if np.any((col != 0) & (col != 1)):
            raise CohortValidationError(f"{ep.patient_id}: flag {name} not in {{0,1}}")
    sofa = ep.feature("sofa")
    if np.any((sofa < 0) | (sofa > 24)):
        raise CohortValidationError(f"{ep.patient_id}: SOFA outside [0, 24]")
    if np.any((ep.vp2 <= 0) | (ep.vp2 > MAX_DOSE)):
        raise CohortValidationError(f"{ep.patient_id}: vp2 outside (0, 0.5]")
