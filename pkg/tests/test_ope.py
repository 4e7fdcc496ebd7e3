import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize, stats

from vasorl.actions import ActionKind, ActionSpaceSpec
from vasorl.ope import (
    SIGMA_FLOOR, GaussianFit, bootstrap_ci, cohens_d, delta_q_from_arrays, evaluate_model_ope, fit_gaussian,
    fit_softmax_policy, fqe_gaussian_report, fqe_histogram, pir, two_step_wis, wis_evaluate,
)
from vasorl.qlearning import TrainConfig, train

# -- delta-Q ---------------------------------------------------------------------------------


def test_self_comparison():
    q = np.array([1.0, 2.0, 3.0])
    out = delta_q_from_arrays(q, q, [1, 0, 1], [1, 0, 1], [3, 4, 5], [3, 4, 5])
    assert out["delta_q_per_step"] == 0.0
    assert out["vp1_concordance"] == out["vp2_concordance"] == 100.0


def test_hand_fixture():
    # Q table rows: state 0 -> (1.0, 4.0), state 1 -> (2.5, 0.5); greedy picks 1 then 0; clinician picks 0 then 0
    out = delta_q_from_arrays([4.0, 2.5], [1.0, 2.5], [1, 0], [0, 0], [2, 2], [2, 7])
    assert out["q_per_step"] == pytest.approx(3.25)
    assert out["delta_q_per_step"] == pytest.approx(1.5)
    assert out["vp1_usage"] == 50.0 and out["vp1_concordance"] == 50.0 and out["vp2_concordance"] == 50.0


def test_vp1_always_on_concordance():
    logged = np.zeros(1000, dtype=int)
    logged[:388] = 1
    out = delta_q_from_arrays(np.zeros(1000), np.zeros(1000), np.ones(1000), logged, np.zeros(1000), np.zeros(1000))
    assert out["vp1_concordance"] == pytest.approx(38.8)
    assert out["vp1_usage"] == 100.0
    assert delta_q_from_arrays([0, 0], [0, 0], [1, 1], [0, 1], [0, 0], [0, 0], vp1_fixed=True)["vp1_concordance"] is None


# -- Gaussian summaries -------------------------------------------------------------------------


def test_identical_samples():
    x = np.random.default_rng(0).normal(size=50)
    r = fqe_gaussian_report(x, x)
    assert r["delta_q_mean"] == 0.0 and r["pir"] == 0.0 and r["cohens_d"] == 0.0


def test_pir_one_sigma():
    assert pir(GaussianFit(3.0, 2.0, 10), GaussianFit(1.0, 5.0, 10)) == pytest.approx(0.3413, abs=1e-4)
    assert pir(GaussianFit(3.0, 2.0, 10), GaussianFit(1.0, 5.0, 10)) == pytest.approx(stats.norm.cdf(1) - 0.5, abs=1e-12)


def test_monte_carlo_fit():
    rng = np.random.default_rng(1)
    m, c = rng.normal(2, 1, 100_000), rng.normal(1, 1, 100_000)
    r = fqe_gaussian_report(m, c)
    assert r["model"]["mu"] == pytest.approx(2.0, rel=0.02)
    assert r["clinician"]["mu"] == pytest.approx(1.0, rel=0.02)
    assert r["cohens_d"] == pytest.approx(1.0, abs=0.05)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.1, 20))
def test_pir_antisymmetric_with_equal_sigma(mu_a, mu_b, sigma):
    a, b = GaussianFit(mu_a, sigma, 5), GaussianFit(mu_b, sigma, 5)
    assert pir(a, b) == pytest.approx(-pir(b, a), abs=1e-12)
    assert cohens_d(a, b) == pytest.approx(-cohens_d(b, a), abs=1e-12)


def test_degenerate_sigma_is_floored_and_flagged():
    fit = fit_gaussian([3.0, 3.0, 3.0])
    assert fit.sigma == SIGMA_FLOOR and fit.floored
    r = fqe_gaussian_report([3.0, 3.0], [1.0, 2.0])
    assert r["sigma_floored"] and np.isfinite(r["pir"]) and np.isfinite(r["cohens_d"])
    with pytest.raises(ValueError):
        fqe_gaussian_report([1.0], [1.0, 2.0])


def test_histogram_counts():
    rows = fqe_histogram([0.0, 1.0, 1.0], [0.5], bins=4)
    assert sum(r["model_count"] for r in rows) == 3 and sum(r["clinician_count"] for r in rows) == 1


# -- softmax behavior models ---------------------------------------------------------------------


def test_separable_classes_match_logistic_oracle():
    # 1-D, x = -5 labeled 0 and x = +5 labeled 1; by symmetry b = 0 and W = (-u/2, u/2)
    X = np.array([[-5.0]] * 20 + [[5.0]] * 20)
    y = np.array([0] * 20 + [1] * 20)
    l2 = 1e-3
    pol = fit_softmax_policy(X, y, 2, l2=l2, p_floor=1e-3)
    # stationarity of the mean loss in the logit gap u: -5 / (1 + e^{5u}) + l2 * u / 2 = 0
    u = optimize.brentq(lambda u: -5 / (1 + np.exp(5 * u)) + l2 * u / 2, 0.1, 100)
    assert pol.W[0, 1] - pol.W[0, 0] == pytest.approx(u, rel=1e-3)
    p = pol.probs(np.array([[-5.0], [5.0]]))
    assert p[0, 0] >= 1 - 1e-3 and p[1, 1] >= 1 - 1e-3


def test_uniform_labels_recover_frequencies():
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, size=(20_000, 3))
    y = rng.integers(0, 4, len(X))
    p = fit_softmax_policy(X, y, 4).probs(X)
    freq = np.bincount(y, minlength=4) / len(y)
    assert np.abs(p - freq).max() < 0.02


def test_single_class_dominates():
    X = np.random.default_rng(3).normal(size=(50, 2))
    p = fit_softmax_policy(X, np.full(50, 2), 5, p_floor=1e-3).probs(X)
    assert np.all(p[:, 2] >= 1 - 1e-3 * 4 - 1e-9)


@given(st.integers(0, 1000))
def test_probabilities_positive_and_normalized(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 3))
    pol = fit_softmax_policy(X, rng.integers(0, 3, 30), 4, max_iter=200)
    p = pol.probs(rng.normal(size=(10, 3)) * 100)
    assert np.all(p > 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_softmax_input_validation():
    with pytest.raises(ValueError):
        fit_softmax_policy(np.zeros((3, 2)), [0, 1, 5], 3)
    with pytest.raises(ValueError):
        fit_softmax_policy(np.zeros((3, 2)), [0, 1], 3)


# -- importance sampling -----------------------------------------------------------------------------


def _random_trajs(rng, n=30):
    lens = rng.integers(1, 12, n)
    return [rng.normal(size=T) * 3 for T in lens], [rng.uniform(0.05, 1, T) for T in lens]


def test_identity_policy_gives_behavior_mean():
    rng = np.random.default_rng(4)
    R, p = _random_trajs(rng)
    rep = wis_evaluate(R, p, p)
    mean = np.mean([r.sum() for r in R])
    assert abs(rep.traj_wis - mean) < 1e-9
    assert abs(rep.traj_wis_product - mean) < 1e-9
    assert abs(rep.improvement) < 1e-9


def test_hand_two_step_case():
    rep = wis_evaluate([np.array([1.0, 3.0])], [np.array([2.0, 1.0]) * 0.25], [np.array([0.25, 0.25])])
    assert rep.traj_returns[0] == pytest.approx(10 / 3, abs=1e-15)
    assert rep.traj_weights[0] == 1.5
    assert rep.traj_wis == pytest.approx(10 / 3, abs=1e-15)


@given(st.integers(0, 1000), st.floats(0.1, 10))
def test_weight_scaling_invariances(seed, c):
    rng = np.random.default_rng(seed)
    R, pb = _random_trajs(rng, 8)
    pt = [rng.uniform(0.05, 1, len(r)) for r in R]
    base = wis_evaluate(R, pt, pb, clip=(1e-12, 1e12))
    # one trajectory's w_t all scaled: its R_traj is unchanged
    scaled = [p * (c if i == 0 else 1.0) for i, p in enumerate(pt)]
    other = wis_evaluate(R, scaled, pb, clip=(1e-12, 1e12))
    assert other.traj_returns[0] == pytest.approx(base.traj_returns[0], rel=1e-9)
    w = np.array(base.traj_weights)
    assert two_step_wis(c * w, base.traj_returns) == pytest.approx(base.traj_wis, rel=1e-9)


def test_upweighting_good_actions_raises_wis():
    rng = np.random.default_rng(5)
    R = [rng.normal(size=6) for _ in range(200)]
    pb = [np.full(6, 0.5) for _ in R]
    pt = [np.where(r > 0, 0.9, 0.1) for r in R]
    rep = wis_evaluate(R, pt, pb)
    assert rep.traj_wis > rep.traj_mean_return


def test_is_unbiased_on_a_bandit():
    # two arms with rewards 1 and 5; behavior (0.7, 0.3), target (0.2, 0.8); true value 4.2
    rng = np.random.default_rng(6)
    n = 20_000
    a = (rng.random(n) < 0.3).astype(int)
    r = np.where(a == 1, 5.0, 1.0)
    pt = np.where(a == 1, 0.8, 0.2)
    pb = np.where(a == 1, 0.3, 0.7)
    rep = wis_evaluate([np.array([x]) for x in r], [np.array([x]) for x in pt], [np.array([x]) for x in pb])
    se = np.std(pt / pb * r) / np.sqrt(n)
    assert abs(rep.trans_is - 4.2) < 3 * se
    assert abs(rep.traj_is - 4.2) < 3 * se


@given(st.integers(0, 1000))
def test_report_fields_finite(seed):
    rng = np.random.default_rng(seed)
    R, pb = _random_trajs(rng, 5)
    pt = [rng.uniform(1e-300, 1, len(r)) for r in R]
    d = wis_evaluate(R, pt, pb).to_dict()
    for k, v in d.items():
        if isinstance(v, float):
            assert np.isfinite(v), k


def test_wis_input_validation():
    with pytest.raises(ValueError):
        wis_evaluate([], [], [])
    with pytest.raises(ValueError):
        wis_evaluate([np.ones(2)], [np.ones(3)], [np.ones(2)])
    with pytest.raises(ValueError):
        wis_evaluate([np.ones(2)], [np.zeros(2)], [np.ones(2)])


# -- bootstrap ---------------------------------------------------------------------------------------


def test_identical_data_has_zero_width():
    assert bootstrap_ci(np.full(10, 3.0)) == (3.0, 3.0)


def test_bootstrap_is_deterministic_per_seed():
    x = np.random.default_rng(7).normal(size=40)
    assert bootstrap_ci(x, seed=3) == bootstrap_ci(x, seed=3)
    assert bootstrap_ci(x, seed=3) != bootstrap_ci(x, seed=4)
    with pytest.raises(ValueError):
        bootstrap_ci([1.0])


def test_outlier_interval_coverage():
    x = np.array([0.0] * 19 + [100.0])
    hits, excludes = 0, 0
    for seed in range(100):
        lo, hi = bootstrap_ci(x, B=1000, seed=seed)
        hits += lo <= 5.0 <= hi
        excludes += hi < 100.0
    assert excludes == 100
    assert hits >= 94


# -- model pipeline ----------------------------------------------------------------------------------


def test_evaluate_model_ope_smoke(small_cohort):
    spec = ActionSpaceSpec(ActionKind.BLOCK_DISCRETE, n_bins=5)
    m = train(small_cohort, TrainConfig(hidden=(8,), epochs=1, batch_size=32), spec)
    test = small_cohort.split("test")
    a = evaluate_model_ope(m, test, B=50, seed=1)
    b = evaluate_model_ope(m, test, B=50, seed=1)
    assert a.to_dict() == b.to_dict()
    assert a.n_trajectories == len(test)
    assert a.ci[0] <= a.ci[1]
    assert a.traj_mean_return == pytest.approx(np.mean([ep.rewards.sum() for ep in test]))
