"""Offline evaluation: Q-difference and concordance metrics, Gaussian summaries
of critic values, softmax behavior models, and importance-sampling estimators."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize, special, stats

from .actions import ActionKind, doses_to_bins
from .data import Episode

SIGMA_FLOOR = 1e-8


# -- delta-Q and concordance ---------------------------------------------------


def delta_q_from_arrays(q_model, q_clin, greedy_vp1, logged_vp1, greedy_bin, logged_bin,
                        vp1_fixed: bool = False) -> dict:
    """Per-transition summaries; percentages are in [0, 100]."""
    q_model, q_clin = np.asarray(q_model, float), np.asarray(q_clin, float)
    greedy_vp1, logged_vp1 = np.asarray(greedy_vp1), np.asarray(logged_vp1)
    return {
        "n_transitions": int(len(q_model)),
        "q_per_step": float(q_model.mean()),
        "delta_q_per_step": float(np.mean(q_model - q_clin)),
        "vp1_usage": float(100.0 * np.mean(greedy_vp1 == 1)),
        "vp1_concordance": None if vp1_fixed else float(100.0 * np.mean(greedy_vp1 == logged_vp1)),
        "vp2_concordance": float(100.0 * np.mean(np.asarray(greedy_bin) == np.asarray(logged_bin))),
    }


@dataclass
class CriticSamples:
    """Min-Q at greedy and at logged actions over a set of episodes."""

    q_model: np.ndarray
    q_clin: np.ndarray
    greedy_vp1: np.ndarray
    logged_vp1: np.ndarray
    greedy_bin: np.ndarray
    logged_bin: np.ndarray
    greedy_index: list = field(default_factory=list)   # per episode
    logged_index: list = field(default_factory=list)


def critic_samples(model, episodes: Sequence[Episode], seed: int = 0) -> CriticSamples:
    from .qlearning import decide_episodes

    dec = decide_episodes(model, episodes, np.random.default_rng(seed))
    n_bins = model.spec.n_bins
    lengths = [ep.n_transitions for ep in episodes]
    cuts = np.cumsum(lengths)[:-1]
    vp1 = np.concatenate([ep.vp1[:T] for ep, T in zip(episodes, lengths)])
    vp2 = np.concatenate([ep.vp2[:T] for ep, T in zip(episodes, lengths)])
    return CriticSamples(dec.q_greedy, dec.q_logged, dec.greedy_vp1, vp1,
                         doses_to_bins(dec.greedy_dose, n_bins), doses_to_bins(vp2, n_bins),
                         np.split(dec.greedy_index, cuts), np.split(dec.logged_index, cuts))


def delta_q_metrics(model, episodes: Sequence[Episode], seed: int = 0) -> dict:
    s = critic_samples(model, episodes, seed)
    fixed = model.spec.kind is ActionKind.LSTM_BLOCK_DISCRETE
    return delta_q_from_arrays(s.q_model, s.q_clin, s.greedy_vp1, s.logged_vp1, s.greedy_bin, s.logged_bin, fixed)


# -- Gaussian summaries of critic values ---------------------------------------------


@dataclass(frozen=True)
class GaussianFit:
    mu: float
    sigma: float
    n: int
    floored: bool = False


def fit_gaussian(samples) -> GaussianFit:
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 1:
        raise ValueError("need at least one sample")
    sigma = float(x.std())
    return GaussianFit(float(x.mean()), max(sigma, SIGMA_FLOOR), int(x.size), sigma < SIGMA_FLOOR)


def pir(model: GaussianFit, clin: GaussianFit) -> float:
    """P(model draw > clinician mean) - 0.5."""
    return float(stats.norm.cdf((model.mu - clin.mu) / model.sigma) - 0.5)


def cohens_d(model: GaussianFit, clin: GaussianFit) -> float:
    pooled = math.sqrt((model.sigma ** 2 + clin.sigma ** 2) / 2.0)
    return float((model.mu - clin.mu) / pooled)


def fqe_gaussian_report(q_model, q_clin) -> dict:
    q_model, q_clin = np.asarray(q_model, float), np.asarray(q_clin, float)
    if q_model.size < 2 or q_clin.size < 2:
        raise ValueError("need at least two Q samples per side")
    m, c = fit_gaussian(q_model), fit_gaussian(q_clin)
    return {
        "model": asdict(m),
        "clinician": asdict(c),
        "pir": pir(m, c),
        "delta_q_mean": m.mu - c.mu,
        "cohens_d": cohens_d(m, c),
        "sigma_floored": bool(m.floored or c.floored),
    }


def fqe_histogram(q_model, q_clin, bins: int = 40) -> list[dict]:
    q_model, q_clin = np.asarray(q_model, float), np.asarray(q_clin, float)
    lo = min(q_model.min(), q_clin.min())
    hi = max(q_model.max(), q_clin.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    hm, _ = np.histogram(q_model, edges)
    hc, _ = np.histogram(q_clin, edges)
    return [
        {"bin_lo": float(edges[i]), "bin_hi": float(edges[i + 1]), "model_count": int(hm[i]), "clinician_count": int(hc[i])}
        for i in range(bins)
    ]


# -- softmax behavior models -----------------------------------------------------


@dataclass
class SoftmaxPolicy:
    """Linear multinomial logit over an enumerated action set."""

    W: np.ndarray          # (d, A)
    b: np.ndarray          # (A,)
    p_floor: float = 1e-3
    role: str = "model"

    @property
    def n_actions(self) -> int:
        return len(self.b)

    def probs(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p = special.softmax(X @ self.W + self.b, axis=1)
        p = np.maximum(p, self.p_floor)
        return p / p.sum(axis=1, keepdims=True)

    def prob_of(self, X: np.ndarray, actions) -> np.ndarray:
        p = self.probs(X)
        return p[np.arange(len(p)), np.asarray(actions, dtype=int)]


def fit_softmax_policy(X, actions, n_actions: int, l2: float = 1e-3, p_floor: float = 1e-3,
                       max_iter: int = 5000, tol: float = 1e-5, role: str = "model") -> SoftmaxPolicy:
    """Mean cross-entropy plus (l2 / 2) * ||W||^2, minimized with L-BFGS.

    Intercepts are not penalized; a class that never occurs has its
    intercept pushed down until the probability floor takes over.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(actions, dtype=int)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise ValueError("need matching non-empty X (n, d) and actions (n,)")
    if y.min() < 0 or y.max() >= n_actions:
        raise ValueError("action index outside the enumeration")
    n, d = X.shape
    Y = np.zeros((n, n_actions))
    Y[np.arange(n), y] = 1.0

    def loss_grad(theta):
        W = theta[: d * n_actions].reshape(d, n_actions)
        b = theta[d * n_actions :]
        Z = X @ W + b
        lse = special.logsumexp(Z, axis=1)
        loss = float(np.mean(lse - np.sum(Z * Y, axis=1)) + 0.5 * l2 * np.sum(W * W))
        G = (np.exp(Z - lse[:, None]) - Y) / n
        gW = X.T @ G + l2 * W
        gb = G.sum(axis=0)
        return loss, np.concatenate([gW.ravel(), gb])

    theta0 = np.zeros(d * n_actions + n_actions)
    res = optimize.minimize(loss_grad, theta0, jac=True, method="L-BFGS-B",
                            options={"maxiter": max_iter, "gtol": tol, "ftol": 0.0})
    W = res.x[: d * n_actions].reshape(d, n_actions)
    b = res.x[d * n_actions :]
    return SoftmaxPolicy(W, b, p_floor, role)


# -- importance sampling ---------------------------------------------------------------


@dataclass
class OpeReport:
    trans_mean_reward: float
    trans_is: float
    trans_wis: float
    traj_mean_return: float
    traj_is: float
    traj_wis: float
    traj_wis_product: float
    improvement: float
    ess: float
    n_trajectories: int
    traj_weights: list
    traj_returns: list
    logged_returns: list
    ci: Optional[tuple] = None
    baseline: Optional[str] = None
    improvement_multiple: Optional[float] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci"] = None if self.ci is None else list(self.ci)
        return d


def two_step_wis(w_tilde, r_traj) -> float:
    w_tilde, r_traj = np.asarray(w_tilde, float), np.asarray(r_traj, float)
    denom = w_tilde.sum()
    assert denom > 0, "trajectory weights must be positive"
    return float(np.dot(w_tilde, r_traj) / denom)


def wis_evaluate(rewards: Sequence[np.ndarray], p_target: Sequence[np.ndarray], p_behavior: Sequence[np.ndarray],
                 clip: tuple = (1e-3, 1e3), product_clip: tuple = (1e-6, 1e6)) -> OpeReport:
    """Transition- and trajectory-level IS/WIS from per-step action probabilities.

    Each trajectory i contributes w_t = p_target/p_behavior (clipped), a
    weighted return R_i = T * sum(w_t r_t) / sum(w_t) and a weight
    w~_i = mean(w_t); the two-step estimate is sum(w~_i R_i) / sum(w~_i).
    """
    if not (len(rewards) == len(p_target) == len(p_behavior)) or len(rewards) == 0:
        raise ValueError("need the same, non-zero number of trajectories in every input")
    w_all, r_all = [], []
    w_tilde, r_traj, g, w_prod = [], [], [], []
    for r, pt, pb in zip(rewards, p_target, p_behavior):
        r, pt, pb = (np.asarray(a, dtype=np.float64) for a in (r, pt, pb))
        if not (r.shape == pt.shape == pb.shape) or r.size == 0:
            raise ValueError("per-trajectory arrays must share a non-empty shape")
        if np.any(pt <= 0) or np.any(pb <= 0):
            raise ValueError("action probabilities must be positive")
        w = np.clip(pt / pb, *clip)
        T = len(r)
        w_all.append(w)
        r_all.append(r)
        r_traj.append(T * float(np.dot(w, r)) / float(w.sum()))
        w_tilde.append(float(w.mean()))
        g.append(float(r.sum()))
        log_prod = float(np.sum(np.log(pt) - np.log(pb)))
        w_prod.append(float(np.clip(math.exp(min(log_prod, 700.0)), *product_clip)))
    w_cat, r_cat = np.concatenate(w_all), np.concatenate(r_all)
    w_tilde_a, r_traj_a, g_a, wp = map(np.asarray, (w_tilde, r_traj, g, w_prod))
    traj_wis = two_step_wis(w_tilde_a, r_traj_a)
    return OpeReport(
        trans_mean_reward=float(r_cat.mean()),
        trans_is=float(np.mean(w_cat * r_cat)),
        trans_wis=float(np.dot(w_cat, r_cat) / w_cat.sum()),
        traj_mean_return=float(g_a.mean()),
        traj_is=float(np.mean(wp * g_a)),
        traj_wis=traj_wis,
        traj_wis_product=float(np.dot(wp, g_a) / wp.sum()),
        improvement=traj_wis - float(g_a.mean()),
        ess=float(w_tilde_a.sum() ** 2 / np.sum(w_tilde_a ** 2)),
        n_trajectories=len(g),
        traj_weights=w_tilde,
        traj_returns=r_traj,
        logged_returns=g,
    )


def bootstrap_ci(data, statistic: Callable = np.mean, B: int = 1000, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile interval of ``statistic`` over resamples of the rows of ``data``."""
    data = np.asarray(data, dtype=np.float64)
    n = len(data)
    if n < 2:
        raise ValueError("need at least two trajectories to bootstrap")
    rng = np.random.default_rng(seed)
    reps = np.empty(B)
    for b in range(B):
        reps[b] = statistic(data[rng.integers(0, n, size=n)])
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(reps, [tail, 100.0 - tail])
    return float(lo), float(hi)


def wis_improvement_statistic(rows: np.ndarray) -> float:
    """Rows hold (w~_i, R_traj_i, logged return_i)."""
    return two_step_wis(rows[:, 0], rows[:, 1]) - float(rows[:, 2].mean())


def with_bootstrap(report: OpeReport, B: int = 1000, level: float = 0.95, seed: int = 0) -> OpeReport:
    rows = np.column_stack([report.traj_weights, report.traj_returns, report.logged_returns])
    report.ci = bootstrap_ci(rows, wis_improvement_statistic, B, level, seed)
    return report


# -- model-level pipeline --------------------------------------------------------------


def policy_inputs(model, episodes: Sequence[Episode]) -> list[np.ndarray]:
    from .qlearning import model_states

    return [model_states(ep, model.spec)[: ep.n_transitions] for ep in episodes]


def softmax_action_count(spec) -> int:
    return spec.n_actions


def evaluate_model_ope(model, episodes: Sequence[Episode], fit_episodes: Optional[Sequence[Episode]] = None,
                       l2: float = 1e-3, p_floor: float = 1e-3, clip: tuple = (1e-3, 1e3),
                       product_clip: tuple = (1e-6, 1e6), B: int = 1000, seed: int = 0) -> OpeReport:
    """Estimate the greedy policy's value on ``episodes``.

    Softmax models of the greedy (pi_m) and logged (pi_c) actions are fitted
    on ``fit_episodes`` (by default the evaluated episodes themselves), on
    the same states for both.
    """
    fit_episodes = episodes if fit_episodes is None else fit_episodes
    A = softmax_action_count(model.spec)
    fit = critic_samples(model, fit_episodes, seed)
    X_fit = np.concatenate(policy_inputs(model, fit_episodes))
    pi_c = fit_softmax_policy(X_fit, np.concatenate(fit.logged_index), A, l2, p_floor, role="clinician")
    pi_m = fit_softmax_policy(X_fit, np.concatenate(fit.greedy_index), A, l2, p_floor, role="model")
    test = fit if fit_episodes is episodes else critic_samples(model, episodes, seed)
    X_test = policy_inputs(model, episodes)
    p_t = [pi_m.prob_of(X, a) for X, a in zip(X_test, test.logged_index)]
    p_b = [pi_c.prob_of(X, a) for X, a in zip(X_test, test.logged_index)]
    report = wis_evaluate([ep.rewards for ep in episodes], p_t, p_b, clip, product_clip)
    return with_bootstrap(report, B, 0.95, seed)


# -- outputs ------------------------------------------------------------------------------


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x)}")


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def write_csv_rows(path, rows: Sequence[dict], header: Optional[Sequence[str]] = None) -> None:
    header = list(header or (rows[0].keys() if rows else []))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in header})
