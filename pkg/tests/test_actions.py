import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vasorl.actions import (
    ActionKind, ActionSpaceSpec, DoseAction, DoseDelta, apply_delta, bin_centers, dose_to_bin, doses_to_bins,
    encode_state_with_dose, enumerate_actions, stepwise_valid_mask,
)

ENUMERABLE = [
    ActionSpaceSpec(ActionKind.BINARY),
    ActionSpaceSpec(ActionKind.BLOCK_DISCRETE, n_bins=5),
    ActionSpaceSpec(ActionKind.BLOCK_DISCRETE, n_bins=10),
    ActionSpaceSpec(ActionKind.STEPWISE, max_step=0.1),
    ActionSpaceSpec(ActionKind.STEPWISE, max_step=0.2),
    ActionSpaceSpec(ActionKind.LSTM_BLOCK_DISCRETE, n_bins=10),
]
grid_doses = st.integers(1, 10).map(lambda k: round(0.05 * k, 10))


def test_block_discrete_centers():
    spec = ActionSpaceSpec(ActionKind.BLOCK_DISCRETE, n_bins=10)
    np.testing.assert_allclose(spec.bin_centers, np.arange(0.025, 0.5, 0.05), atol=1e-15)
    acts = enumerate_actions(spec)
    assert len(acts) == 20
    assert {a.vp1 for _, a in acts} == {0, 1}


def test_stepwise_deltas():
    spec = ActionSpaceSpec(ActionKind.STEPWISE, step_size=0.05, max_step=0.1)
    np.testing.assert_allclose(spec.deltas, [-0.1, -0.05, 0.0, 0.05, 0.1], atol=1e-15)
    assert len(ActionSpaceSpec(ActionKind.STEPWISE, max_step=0.2).deltas) == 9


def test_binary_has_two_actions():
    assert len(enumerate_actions(ActionSpaceSpec(ActionKind.BINARY))) == 2


def test_stepwise_needs_current_dose_and_mixed_samples():
    with pytest.raises(ValueError):
        enumerate_actions(ActionSpaceSpec(ActionKind.STEPWISE))
    spec = ActionSpaceSpec(ActionKind.DUAL_MIXED, num_candidate_samples=50)
    acts = enumerate_actions(spec, rng=np.random.default_rng(0))
    assert len(acts) == 100
    assert all(0 < a.vp2 <= 0.5 for _, a in acts)


def test_stepwise_masks():
    spec = ActionSpaceSpec(ActionKind.STEPWISE, max_step=0.1)
    assert list(stepwise_valid_mask(spec, 0.05)[:5]) == [False, False, True, True, True]
    assert stepwise_valid_mask(spec, 0.25).all()
    assert list(stepwise_valid_mask(spec, 0.5)[:5]) == [True, True, True, False, False]
    # both vp1 halves share the dose mask
    m = stepwise_valid_mask(spec, 0.05)
    assert np.array_equal(m[:5], m[5:])


def test_dose_to_bin_examples():
    assert dose_to_bin(0.025, 10) == 0
    assert dose_to_bin(0.05, 10) == 0
    assert dose_to_bin(0.5, 10) == 9
    for bad in (0.0, -0.1, 0.51):
        with pytest.raises(ValueError):
            dose_to_bin(bad, 10)


@given(st.floats(1e-9, 0.5), st.integers(2, 20))
def test_dose_to_bin_matches_edge_scan(dose, n_bins):
    w = 0.5 / n_bins
    scanned = [k for k in range(n_bins) if k * w < dose <= (k + 1) * w]
    k = dose_to_bin(dose, n_bins)
    if scanned:  # floating edges can disagree only within 1e-12 of a boundary
        assert k == scanned[0] or abs(dose - round(dose / w) * w) < 1e-12
    assert doses_to_bins([dose], n_bins)[0] == k


def test_encode_state_with_dose():
    s = encode_state_with_dose(np.arange(10.0), 0.025, 10)
    assert s.shape == (20,)
    assert np.array_equal(s[:10], np.arange(10.0))
    assert list(s[10:]) == [1] + [0] * 9
    assert encode_state_with_dose(np.zeros(10), 0.475, 10)[-1] == 1


@given(st.floats(1e-6, 0.5), st.integers(2, 12))
def test_onehot_sums_to_one(dose, n_bins):
    assert encode_state_with_dose(np.zeros(3), dose, n_bins)[3:].sum() == 1.0


@pytest.mark.parametrize("spec", ENUMERABLE, ids=lambda s: f"{s.kind.value}-{s.n_bins}-{s.max_step}")
def test_encode_decode_round_trip(spec):
    for i in range(spec.n_actions):
        assert spec.encode(spec.decode(i)) == i
    feats = spec.action_features()
    assert feats.shape == (spec.n_actions, spec.action_dim if not spec.is_recurrent else spec.n_bins)
    assert len(np.unique(feats, axis=0)) == spec.n_actions


@given(st.integers(2, 40))
def test_centers_inside_range_and_evenly_spaced(n_bins):
    c = bin_centers(n_bins)
    assert np.all(c > 0) and np.all(c <= 0.5)
    np.testing.assert_allclose(np.diff(c), 0.5 / n_bins, rtol=1e-12)


@given(grid_doses, st.sampled_from([0.05, 0.1, 0.2]))
def test_masked_deltas_keep_dose_in_range(dose, max_step):
    spec = ActionSpaceSpec(ActionKind.STEPWISE, max_step=max_step)
    mask = stepwise_valid_mask(spec, dose)
    for j, ok in enumerate(mask[: spec.n_sub]):
        landed = apply_delta(spec, dose, spec.deltas[j])
        assert ok == (1e-9 < landed <= 0.5 + 1e-9)
    assert mask[spec.n_sub // 2]
    # masking already-masked Q values changes nothing
    q = np.where(mask, np.arange(len(mask), dtype=float), -np.inf)
    assert np.array_equal(np.where(mask, q, -np.inf), q)


def test_mixed_candidates_reproducible():
    spec = ActionSpaceSpec(ActionKind.DUAL_MIXED)
    a = enumerate_actions(spec, rng=np.random.default_rng(3))
    b = enumerate_actions(spec, rng=np.random.default_rng(3))
    assert a == b


def test_spec_validation():
    with pytest.raises(ValueError):
        ActionSpaceSpec(ActionKind.STEPWISE, step_size=0.05, max_step=0.12)
    with pytest.raises(ValueError):
        ActionSpaceSpec(n_bins=1)
    assert ActionKind.parse("Dual BD") is ActionKind.BLOCK_DISCRETE
    assert ActionSpaceSpec(ActionKind.STEPWISE).encode(DoseDelta(1, 0.05)) == 8
    with pytest.raises(ValueError):
        DoseAction(1, 0.0)


def test_lstm_space_keeps_vp1_on():
    spec = ActionSpaceSpec(ActionKind.LSTM_BLOCK_DISCRETE)
    assert spec.n_actions == 10
    assert all(spec.decode(i).vp1 == 1 for i in range(10))
    assert np.all(spec.vp1_of(np.arange(10)) == 1)
