"""Episode-structured prioritized replay for recurrent Q-learning.

Episodes are cut into overlapping windows of ``burn_in + seq_len`` steps.
The burn-in prefix only warms the LSTM state; the loss covers the learn
window.  Windows are drawn in proportion to a TD-error priority, boosted
for episodes that end in death.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class SumTree:
    """Binary tree of partial sums over ``n_leaves`` priorities.

    Stored as a flat array: node ``i`` has children ``2i`` and ``2i + 1``,
    the root is node 1, and leaves occupy ``[capacity, 2 * capacity)``.
    """

    def __init__(self, n_leaves: int):
        if n_leaves < 1:
            raise ValueError("a sum-tree needs at least one leaf")
        self.n_leaves = n_leaves
        self.capacity = 1 << (n_leaves - 1).bit_length()
        self.nodes = np.zeros(2 * self.capacity)

    def total(self) -> float:
        return float(self.nodes[1])

    def __len__(self) -> int:
        return self.n_leaves

    def __getitem__(self, leaf: int) -> float:
        self._check(leaf)
        return float(self.nodes[self.capacity + leaf])

    @property
    def leaves(self) -> np.ndarray:
        return self.nodes[self.capacity : self.capacity + self.n_leaves]

    def _check(self, leaf: int) -> None:
        if not 0 <= leaf < self.n_leaves:
            raise IndexError(f"leaf {leaf} outside [0, {self.n_leaves})")

    def set(self, leaf: int, priority: float) -> None:
        self._check(leaf)
        if not priority > 0 or not np.isfinite(priority):
            raise ValueError(f"priority must be positive and finite, got {priority!r}")
        i = self.capacity + leaf
        self.nodes[i] = priority
        i //= 2
        while i >= 1:
            # recompute from children so every node is exactly the sum below it
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1]
            i //= 2

    def set_many(self, leaves: Sequence[int], priorities: Sequence[float]) -> None:
        for leaf, p in zip(leaves, priorities):
            self.set(int(leaf), float(p))

    def fill(self, priorities: np.ndarray) -> None:
        """Set all leaves at once and rebuild the internal sums bottom-up."""
        priorities = np.asarray(priorities, dtype=float)
        if priorities.shape != (self.n_leaves,):
            raise ValueError("need one priority per leaf")
        if np.any(priorities <= 0) or not np.all(np.isfinite(priorities)):
            raise ValueError("priorities must be positive and finite")
        self.nodes[:] = 0.0
        self.nodes[self.capacity : self.capacity + self.n_leaves] = priorities
        for i in range(self.capacity - 1, 0, -1):
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1]

    def sample(self, u: float) -> int:
        """Leaf whose left-closed cumulative interval contains ``u``."""
        total = self.total()
        if not total > 0:
            raise ValueError("cannot sample from an empty tree")
        if not 0.0 <= u < total:
            raise ValueError(f"u={u!r} outside [0, {total})")
        i = 1
        nodes = self.nodes
        while i < self.capacity:
            left = nodes[2 * i]
            if u < left or nodes[2 * i + 1] == 0.0:
                i = 2 * i
            else:
                u -= left
                i = 2 * i + 1
        leaf = i - self.capacity
        # rounding in the subtraction can step onto an empty padding leaf
        if leaf >= self.n_leaves:
            leaf = self.n_leaves - 1
        return leaf


# -- sequences ------------------------------------------------------------------


@dataclass(frozen=True)
class SequenceSample:
    """A window into one episode.

    ``start`` is the first transition covered; ``pad`` zero-state steps are
    prepended when the episode is shorter than the window.
    """

    episode: int
    start: int
    pad: int
    burn_in: int
    seq_len: int

    @property
    def length(self) -> int:
        return self.burn_in + self.seq_len

    def loss_mask(self) -> np.ndarray:
        pos = np.arange(self.length)
        return (pos >= self.burn_in) & (pos >= self.pad)


def build_sequences(episode_lengths: Sequence[int], seq_len: int = 5, burn_in: int = 2,
                    stride: int = 1) -> list[SequenceSample]:
    """Windows over episodes with the given numbers of transitions."""
    if len(episode_lengths) == 0:
        raise ValueError("no episodes to build sequences from")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    window = burn_in + seq_len
    out = []
    for e, T in enumerate(episode_lengths):
        if T < 1:
            continue
        if T < window:
            out.append(SequenceSample(e, 0, window - T, burn_in, seq_len))
            continue
        starts = list(range(0, T - window + 1, stride))
        if starts[-1] != T - window:
            starts.append(T - window)  # keep the terminal step inside a learn window
        out.extend(SequenceSample(e, s, 0, burn_in, seq_len) for s in starts)
    return out


@dataclass
class SequenceBatch:
    """Dense arrays for a batch of windows (positions 0..L-1; states carry L+1)."""

    states: np.ndarray      # (B, L + 1, state_dim)
    actions: np.ndarray     # (B, L) int
    rewards: np.ndarray     # (B, L)
    dones: np.ndarray       # (B, L)
    mask: np.ndarray        # (B, L) bool, loss positions
    leaves: np.ndarray      # (B,) int
    weights: np.ndarray     # (B,) importance weights (ones unless enabled)


class SequenceTable:
    """All windows of a split materialized as arrays for fast batching."""

    def __init__(self, samples: list[SequenceSample], episode_states: Sequence[np.ndarray],
                 episode_actions: Sequence[np.ndarray], episode_rewards: Sequence[np.ndarray],
                 episode_died: Sequence[bool]):
        if not samples:
            raise ValueError("empty sequence table")
        self.samples = samples
        n = len(samples)
        L = samples[0].length
        d = episode_states[0].shape[1]
        self.states = np.zeros((n, L + 1, d))
        self.actions = np.zeros((n, L), dtype=int)
        self.rewards = np.zeros((n, L))
        self.dones = np.zeros((n, L))
        self.mask = np.zeros((n, L), dtype=bool)
        self.died = np.zeros(n, dtype=bool)
        for j, s in enumerate(samples):
            S, a, r = episode_states[s.episode], episode_actions[s.episode], episode_rewards[s.episode]
            T = len(a)
            n_real = L - s.pad
            self.states[j, s.pad :] = S[s.start : s.start + n_real + 1]
            self.actions[j, s.pad :] = a[s.start : s.start + n_real]
            self.rewards[j, s.pad :] = r[s.start : s.start + n_real]
            if s.start + n_real == T:
                self.dones[j, L - 1] = 1.0
            self.mask[j] = s.loss_mask()
            self.died[j] = bool(episode_died[s.episode])

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class PriorityConfig:
    exponent: float = 0.6
    eps: float = 1e-3
    mortality_weight: float = 2.0
    initial: float = 1.0
    importance_weights: bool = False
    beta: float = 0.4


def priority(td_abs, died, cfg: PriorityConfig = PriorityConfig()) -> np.ndarray:
    td_abs = np.asarray(td_abs, dtype=float)
    mult = np.where(np.asarray(died, dtype=bool), cfg.mortality_weight, 1.0)
    return (np.abs(td_abs) + cfg.eps) ** cfg.exponent * mult


class PrioritizedSequenceReplay:
    """Sum-tree sampler over a :class:`SequenceTable`.

    Every leaf starts at ``initial`` priority, so the first draws are
    uniform; the mortality weight enters with the first TD update.
    """

    def __init__(self, table: SequenceTable, cfg: PriorityConfig = PriorityConfig()):
        self.table = table
        self.cfg = cfg
        self.tree = SumTree(len(table))
        self.tree.fill(np.full(len(table), cfg.initial))

    def __len__(self) -> int:
        return len(self.table)

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        total = self.tree.total()
        u = rng.uniform(0.0, total, size=batch)
        return np.array([self.tree.sample(min(x, np.nextafter(total, 0.0))) for x in u], dtype=int)

    def sample(self, batch: int, rng: np.random.Generator) -> SequenceBatch:
        idx = self.sample_indices(batch, rng)
        t = self.table
        weights = np.ones(batch)
        if self.cfg.importance_weights:
            probs = self.tree.leaves[idx] / self.tree.total()
            weights = (len(t) * probs) ** (-self.cfg.beta)
            weights /= weights.max()
        return SequenceBatch(t.states[idx], t.actions[idx], t.rewards[idx], t.dones[idx], t.mask[idx], idx, weights)

    def update_priorities(self, leaves: Sequence[int], td_abs: Sequence[float]) -> None:
        leaves = np.asarray(leaves, dtype=int)
        p = priority(td_abs, self.table.died[leaves], self.cfg)
        self.tree.set_many(leaves, p)

    def stats(self) -> dict:
        leaves = self.tree.leaves
        return {
            "leaf_count": int(len(leaves)),
            "total_priority": float(self.tree.total()),
            "max_priority": float(leaves.max()),
            "death_weighted_fraction": float(self.table.died.mean()),
        }
