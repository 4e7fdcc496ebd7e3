"""Small hand-checkable problems shared by the Q-learning and acceptance tests."""

import numpy as np

from vasorl.actions import ActionKind, ActionSpaceSpec
from vasorl.qlearning import TransitionTable

BINARY = ActionSpaceSpec(ActionKind.BINARY)

# deterministic 3-state, 2-action MDP: (s, a) -> (s', r, done)
MDP = {(0, 0): (1, 0.0, 0), (0, 1): (2, 1.0, 0), (1, 0): (0, 2.0, 1),
       (1, 1): (0, 0.0, 0), (2, 0): (0, 0.0, 1), (2, 1): (1, 0.5, 0)}


def value_iteration(gamma=0.95, iters=5000):
    Q = np.zeros((3, 2))
    for _ in range(iters):
        Qn = np.zeros_like(Q)
        for (s, a), (s2, r, d) in MDP.items():
            Qn[s, a] = r + (0.0 if d else gamma * Q[s2].max())
        Q = Qn
    return Q


def tabular_table():
    """One transition per (s, a) pair with one-hot states."""
    E = np.eye(3)
    keys = sorted(MDP)
    A = np.array([a for _, a in keys])
    return TransitionTable(
        np.array([E[s] for s, _ in keys]), A, BINARY.action_features()[A],
        np.array([MDP[k][1] for k in keys]), np.array([E[MDP[k][0]] for k in keys]),
        np.array([MDP[k][2] for k in keys], dtype=float))


def cloning_toy(n=400, seed=0):
    """Logged action follows a linear rule, but rewards favor the other action."""
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(n, 4))
    A = (S[:, 0] + 0.5 * S[:, 1] > 0).astype(int)
    R = rng.normal(size=n) + (1 - A) * 1.0
    return TransitionTable(S, A, BINARY.action_features()[A], R, rng.normal(size=(n, 4)), np.zeros(n))
