import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from vasorl.replay import (
    PrioritizedSequenceReplay, PriorityConfig, SequenceTable, SumTree, build_sequences, priority,
)


def linear_scan(leaves, u):
    return int(np.searchsorted(np.cumsum(leaves), u, side="right"))


def tree_of(values):
    t = SumTree(len(values))
    t.fill(np.asarray(values, dtype=float))
    return t


def check_internal(t):
    for i in range(1, t.capacity):
        assert t.nodes[i] == pytest.approx(t.nodes[2 * i] + t.nodes[2 * i + 1], abs=1e-9)


# -- sum-tree ------------------------------------------------------------------------------


def test_total_and_delta_propagation():
    t = tree_of([1, 2, 3, 4])
    assert t.total() == 10
    t.set(2, 0.001)
    assert t.total() == pytest.approx(7.001, abs=1e-12)
    check_internal(t)


def test_sample_intervals():
    t = tree_of([1, 2, 3, 4])
    assert t.sample(5.5) == 2
    assert t.sample(0.0) == 0
    assert [t.sample(u) for u in (0.999, 1.0, 2.999, 3.0, 6.0, 9.999)] == [0, 1, 1, 2, 3, 3]


def test_sumtree_errors():
    t = tree_of([1, 2, 3])
    with pytest.raises(IndexError):
        t.set(3, 1.0)
    with pytest.raises(ValueError):
        t.set(0, 0.0)
    with pytest.raises(ValueError):
        t.sample(6.0)
    with pytest.raises(ValueError):
        t.sample(-1e-12)
    with pytest.raises(ValueError):
        SumTree(0)
    with pytest.raises(ValueError):
        SumTree(2).sample(0.0)


def test_frequencies_within_three_sigma():
    t = tree_of([1, 2, 3, 4])
    rng = np.random.default_rng(0)
    n = 100_000
    draws = np.array([t.sample(u) for u in rng.uniform(0, 10, n)])
    p = np.array([0.1, 0.2, 0.3, 0.4])
    freq = np.bincount(draws, minlength=4) / n
    assert np.all(np.abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / n))


@given(st.integers(1, 33), st.lists(st.tuples(st.integers(0, 10_000), st.floats(1e-3, 1e3)), max_size=60),
       st.floats(0, 1, exclude_max=True))
def test_matches_flat_array(n, updates, frac):
    t, flat = tree_of(np.ones(n)), np.ones(n)
    for leaf, p in updates:
        t.set(leaf % n, p)
        flat[leaf % n] = p
        assert t.total() == pytest.approx(flat.sum(), abs=1e-9)
    check_internal(t)
    assert np.array_equal(t.leaves, flat)
    u = frac * t.total()
    assert t.sample(u) == linear_scan(flat, u)


# -- sequences --------------------------------------------------------------------------------


def test_sequence_counts():
    assert [s.start for s in build_sequences([10])] == [0, 1, 2, 3]
    assert len(build_sequences([7])) == 1
    (short,) = build_sequences([4])
    assert short.pad == 3
    assert short.loss_mask().sum() == 4 and not short.loss_mask()[:3].any()
    with pytest.raises(ValueError):
        build_sequences([])


@given(st.lists(st.integers(1, 30), min_size=1, max_size=8), st.integers(1, 4))
def test_every_terminal_step_is_learned(lengths, stride):
    samples = build_sequences(lengths, stride=stride)
    for e, T in enumerate(lengths):
        covering = [s for s in samples if s.episode == e
                    and s.loss_mask()[-1] and s.start + s.length - s.pad == T]
        assert covering
    for s in samples:
        assert s.start + s.length - s.pad <= lengths[s.episode]
        assert s.loss_mask()[: s.burn_in].sum() == 0


def _table(lengths, died=None):
    rng = np.random.default_rng(0)
    died = died or [False] * len(lengths)
    return SequenceTable(build_sequences(lengths), [rng.normal(size=(T + 1, 3)) for T in lengths],
                         [rng.integers(0, 4, T) for T in lengths], [rng.normal(size=T) for T in lengths], died)


def test_table_padding_and_dones():
    t = _table([4, 9])
    assert np.all(t.states[0, :3] == 0)
    assert t.dones[0, -1] == 1 and t.dones[:, :-1].sum() == 0
    assert t.dones[1:].sum() == 1  # only the last window of the long episode ends it


# -- prioritized sampling ------------------------------------------------------------------------


def test_new_buffer_has_unit_priorities():
    buf = PrioritizedSequenceReplay(_table([8, 12, 3], died=[True, False, True]))
    assert np.all(buf.tree.leaves == 1.0)


def test_uniform_priorities_sample_uniformly():
    buf = PrioritizedSequenceReplay(_table([10] * 5))
    idx = buf.sample_indices(50_000, np.random.default_rng(1))
    counts = np.bincount(idx, minlength=len(buf))
    assert stats.chisquare(counts).pvalue > 0.01


def test_heavy_leaf_dominates():
    buf = PrioritizedSequenceReplay(_table([10] * 5))
    buf.tree.set(7, 1e9)
    idx = buf.sample_indices(10_000, np.random.default_rng(2))
    assert np.mean(idx == 7) >= 0.99


def test_priority_formula_and_updates():
    cfg = PriorityConfig()
    assert priority(0.5, False)[()] == pytest.approx((0.5 + 1e-3) ** 0.6)
    assert priority(0.5, True)[()] == pytest.approx(2 * (0.5 + 1e-3) ** 0.6)
    assert priority(0.0, False, cfg)[()] > 0
    buf = PrioritizedSequenceReplay(_table([8, 8], died=[True, False]))
    buf.update_priorities([0, len(buf) - 1], [0.5, 0.5])
    assert buf.tree[0] == pytest.approx(2 * buf.tree[len(buf) - 1])
    s = buf.stats()
    assert s["leaf_count"] == len(buf) and s["death_weighted_fraction"] == 0.5


def test_importance_weights_normalized():
    buf = PrioritizedSequenceReplay(_table([10] * 3), PriorityConfig(importance_weights=True))
    buf.tree.set(0, 50.0)
    b = buf.sample(64, np.random.default_rng(3))
    assert b.weights.max() == 1.0 and np.all(b.weights > 0)
    assert np.all(b.weights[b.leaves == 0] == b.weights.min())
