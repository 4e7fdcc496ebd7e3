import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_episode
from vasorl.data import Cohort
from vasorl.reward import (
    RewardConfig, RewardKind, annotate_rewards, comprehensive_step_reward, episode_rewards, simple_step_reward,
)


# -- simple reward ------------------------------------------------------------------


def test_simple_examples():
    assert simple_step_reward(1, 0.5, False, True) == pytest.approx(-0.1, abs=1e-15)
    assert simple_step_reward(0, 0.5, False, True) == 0.0
    assert simple_step_reward(0, 0.25, True, True) == pytest.approx(10.05, abs=1e-12)
    assert simple_step_reward(0, 0.25, True, False) == pytest.approx(-9.95, abs=1e-12)


@given(st.integers(0, 1), st.floats(1e-3, 0.5), st.floats(0.01, 5.0))
def test_simple_is_affine_and_scales_with_coeff(vp1, vp2, coeff):
    cfg = RewardConfig(vaso_coeff=coeff)
    double = RewardConfig(vaso_coeff=2 * coeff)
    r = simple_step_reward(vp1, vp2, False, True, cfg)
    assert r == pytest.approx(-coeff * (vp1 + 2 * vp2 - 1))
    assert simple_step_reward(vp1, vp2, False, True, double) == pytest.approx(2 * r, rel=1e-12, abs=1e-15)


def test_simple_bonus_on_last_transition_only():
    ep = make_episode(4, vp1=1, vp2=0.5, mortality=True)
    r = episode_rewards(ep, RewardConfig(kind=RewardKind.SIMPLE))
    np.testing.assert_allclose(r, [-0.1, -0.1, -0.1, -0.1 - 10])


# -- comprehensive reward --------------------------------------------------------------


def test_lactate_and_sofa_drop():
    ep = make_episode(8, lactate=[3, 3, 3, 2.5, 3, 3, 3, 3, 3], sofa=[8, 8, 8, 8, 8, 7, 8, 8, 8], mbp=70)
    assert comprehensive_step_reward(ep, 0) == 5.0


def test_terminal_death():
    ep = make_episode(3, mortality=True)
    assert comprehensive_step_reward(ep, 2) == -19.0


def test_final_survivor_step_is_base_only():
    ep = make_episode(3, lactate=[4, 3, 2, 1])
    assert comprehensive_step_reward(ep, 2) == 1.0


def test_mbp_bonus_only_from_below_threshold():
    rising = make_episode(6, mbp=[60, 62, 63, 64, 66, 70, 70])
    assert comprehensive_step_reward(rising, 0) == 2.0  # reaches 65 at t = 4, inside (0, 4]
    assert comprehensive_step_reward(rising, 5) == 1.0  # already above threshold
    late = make_episode(6, mbp=[60, 60, 60, 60, 60, 66, 70])
    assert comprehensive_step_reward(late, 0) == 1.0   # t = 5 is outside the 4-step window


def test_norepinephrine_reduction_bonus():
    ep = make_episode(6, vp2=[0.3, 0.3, 0.3, 0.3, 0.25, 0.25, 0.25])
    assert comprehensive_step_reward(ep, 0) == 2.0
    assert comprehensive_step_reward(ep, 4) == 1.0


def test_windows_stop_at_episode_end():
    # the drop in the last row belongs to no transition, so no step may see it
    ep = make_episode(3, lactate=[3, 3, 3, 1], sofa=[8, 8, 8, 2])
    np.testing.assert_array_equal(episode_rewards(ep), [1.0, 1.0, 1.0])
    truncated = make_episode(3, lactate=[3, 3, 2, 2])
    np.testing.assert_array_equal(episode_rewards(truncated), [2.0, 2.0, 1.0])


def test_step_index_validated():
    with pytest.raises(IndexError):
        comprehensive_step_reward(make_episode(3), 3)


@st.composite
def episodes(draw):
    T = draw(st.integers(1, 15))
    col = lambda lo, hi: draw(st.lists(st.floats(lo, hi), min_size=T + 1, max_size=T + 1))  # noqa: E731
    return make_episode(T, mortality=draw(st.booleans()), lactate=col(0.3, 10), mbp=col(40, 90),
                        sofa=col(0, 24), vp2=col(0.01, 0.5))


@given(episodes())
def test_comprehensive_bounds_and_purity(ep):
    r = episode_rewards(ep)
    assert np.all((r >= -19) & (r <= 7))
    assert np.all((r[:-1] >= 1) & (r[:-1] <= 7))
    assert np.array_equal(r, episode_rewards(ep))


def test_annotate_rejects_normalized_cohort(small_cohort):
    with pytest.raises(ValueError):
        annotate_rewards(small_cohort)
    raw = Cohort((make_episode(3),))
    out = annotate_rewards(raw, RewardConfig(kind="simple"))
    assert out.episodes[0].rewards.shape == (3,)


def test_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(lactate_window=0)
    with pytest.raises(ValueError):
        RewardConfig(death_penalty=float("nan"))
