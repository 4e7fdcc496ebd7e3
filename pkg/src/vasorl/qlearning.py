"""Offline double Q-learning with twin target networks and a CQL penalty.

Both online networks regress onto one target built from the minimum of the
two target networks; every value used for acting or evaluation is the
minimum of the two online networks.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

from .actions import (
    ActionKind,
    ActionSpaceSpec,
    DoseAction,
    apply_delta,
    doses_to_bins,
    mixed_candidate_features,
    sample_candidate_doses,
    snap_dose,
    stepwise_valid_mask,
)
from .data import Cohort, Episode, NormStats
from .nn import Adam, LstmQNet, MlpQNet, NonFiniteError, backward_and_step, load_tensors, save_tensors, soft_update
from .replay import PrioritizedSequenceReplay, PriorityConfig, SequenceTable, build_sequences

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.95
    tau: float = 0.8
    alpha: float = 0.0
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 100
    # None: one pass over the data per epoch
    batches_per_epoch: Optional[int] = None
    clip_norm: float = 1.0
    seed: int = 42
    target_update_every: int = 10
    hidden: tuple = (128, 128, 64)
    lstm_hidden: int = 32
    lstm_layers: int = 2
    dropout: float = 0.1
    dtype: str = "float64"
    priority_exponent: float = 0.6
    priority_eps: float = 1e-3
    mortality_weight: float = 2.0
    importance_weights: bool = False
    # rewards are multiplied by this before regression; reported Q-values are divided back
    reward_scale: float = 1.0
    # write an intermediate checkpoint every this many epochs (0: only the final one)
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not self.reward_scale > 0:
            raise ValueError("reward_scale must be positive")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if self.batch_size < 1 or self.epochs < 0 or self.target_update_every < 1:
            raise ValueError("batch_size, epochs and target_update_every must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def priority(self) -> PriorityConfig:
        return PriorityConfig(self.priority_exponent, self.priority_eps, self.mortality_weight,
                              importance_weights=self.importance_weights)


# -- model inputs -------------------------------------------------------------


def current_doses(episode: Episode, spec: ActionSpaceSpec) -> np.ndarray:
    """Dose in force before each row's decision, snapped to the step grid.

    Row 0 has no history, so its own dose is used (the logged change is 0).
    """
    prev = np.concatenate([episode.vp2[:1], episode.vp2[:-1]])
    return snap_dose(prev, spec.step_size)


def model_states(episode: Episode, spec: ActionSpaceSpec) -> np.ndarray:
    """Network input for every row of an episode, shape (T + 1, state_dim)."""
    feats = episode.features
    if spec.kind is ActionKind.BINARY:
        return np.concatenate([feats, episode.vp2[:, None]], axis=1)
    if spec.kind is ActionKind.STEPWISE:
        onehot = np.zeros((len(feats), spec.n_bins))
        onehot[np.arange(len(feats)), doses_to_bins(current_doses(episode, spec), spec.n_bins)] = 1.0
        return np.concatenate([feats, onehot], axis=1)
    return feats


def logged_action_indices(episode: Episode, spec: ActionSpaceSpec) -> np.ndarray:
    """Joint index of each logged clinician action (analysis grid for DualMixed)."""
    T = episode.n_transitions
    vp1 = episode.vp1[:T]
    if spec.kind is ActionKind.BINARY:
        return vp1.copy()
    if spec.kind is ActionKind.STEPWISE:
        cur = current_doses(episode, spec)[:T]
        target = snap_dose(episode.vp2[:T], spec.step_size)
        delta = np.clip(target - cur, -spec.max_step, spec.max_step)
        k = int(round(spec.max_step / spec.step_size))
        sub = np.rint(delta / spec.step_size).astype(int) + k
        return vp1 * spec.n_sub + sub
    bins = doses_to_bins(episode.vp2[:T], spec.n_bins)
    if spec.kind is ActionKind.LSTM_BLOCK_DISCRETE:
        return bins
    return vp1 * spec.n_bins + bins


def state_dim_for(spec: ActionSpaceSpec, feature_dim: int) -> int:
    return feature_dim + spec.state_extra_dim


@dataclass
class TransitionTable:
    states: np.ndarray
    actions: np.ndarray
    action_feats: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    masks: Optional[np.ndarray] = None
    next_masks: Optional[np.ndarray] = None
    episode: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.rewards)

    def take(self, idx) -> "TransitionTable":
        def pick(a):
            return None if a is None else a[idx]

        return TransitionTable(*(pick(getattr(self, f.name)) for f in fields(self)))


def build_transition_table(episodes: Sequence[Episode], spec: ActionSpaceSpec) -> TransitionTable:
    if not episodes:
        raise ValueError("no episodes")
    parts = {k: [] for k in ("s", "a", "af", "r", "s2", "d", "m", "m2", "e")}
    feats_table = None if spec.kind is ActionKind.DUAL_MIXED else spec.action_features()
    for e, ep in enumerate(episodes):
        if ep.rewards is None:
            raise ValueError(f"episode {ep.patient_id} has no rewards; annotate first")
        T = ep.n_transitions
        S = model_states(ep, spec)
        a = logged_action_indices(ep, spec)
        parts["s"].append(S[:-1])
        parts["s2"].append(S[1:])
        parts["a"].append(a)
        if spec.kind is ActionKind.DUAL_MIXED:
            parts["af"].append(np.stack([ep.vp1[:T].astype(float), ep.vp2[:T]], axis=1))
        else:
            parts["af"].append(feats_table[a])
        parts["r"].append(ep.rewards)
        done = np.zeros(T)
        done[-1] = 1.0
        parts["d"].append(done)
        parts["e"].append(np.full(T, e))
        if spec.kind is ActionKind.STEPWISE:
            cur = current_doses(ep, spec)
            parts["m"].append(stepwise_valid_mask(spec, cur[:-1]))
            parts["m2"].append(stepwise_valid_mask(spec, cur[1:]))
    cat = lambda k: np.concatenate(parts[k], axis=0) if parts[k] else None  # noqa: E731
    return TransitionTable(cat("s"), cat("a"), cat("af"), cat("r"), cat("s2"), cat("d"), cat("m"), cat("m2"), cat("e"))


# -- the model ------------------------------------------------------------------


def _np_dtype(name: str):
    return {"float64": np.float64, "float32": np.float32}[name]


class QModel:
    """Online pair (q1, q2), target pair, optimizers, and the training log."""

    def __init__(self, spec: ActionSpaceSpec, state_dim: int, config: TrainConfig = TrainConfig(),
                 norm_stats: Optional[NormStats] = None):
        self.spec, self.state_dim, self.config, self.norm_stats = spec, state_dim, config, norm_stats
        dt = _np_dtype(config.dtype)
        seeds = np.random.SeedSequence(config.seed).generate_state(2)
        if spec.is_recurrent:
            make = lambda s: LstmQNet(state_dim, spec.n_actions, hidden=config.lstm_hidden,  # noqa: E731
                                      feature_hidden=config.lstm_hidden, n_layers=config.lstm_layers,
                                      dropout=config.dropout, seed=int(s), dtype=dt)
        else:
            make = lambda s: MlpQNet(state_dim, spec.action_dim, config.hidden, seed=int(s), dtype=dt)  # noqa: E731
        self.q1, self.q2 = make(seeds[0]), make(seeds[1])
        self.target1, self.target2 = self.q1.copy(), self.q2.copy()
        self.opt1 = Adam(self.q1.params, lr=config.lr)
        self.opt2 = Adam(self.q2.params, lr=config.lr)
        self.log: list[dict] = []
        self.updates = 0
        self.candidate_rng = np.random.default_rng([config.seed, 0xC4])

    @property
    def online(self):
        return (self.q1, self.q2)

    @property
    def targets(self):
        return (self.target1, self.target2)

    def soft_update_targets(self, tau: Optional[float] = None) -> None:
        tau = self.config.tau if tau is None else tau
        soft_update(self.target1, self.q1, tau)
        soft_update(self.target2, self.q2, tau)

    # -- evaluation helpers ---------------------------------------------------

    def candidate_features(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        rng = self.candidate_rng if rng is None else rng
        return mixed_candidate_features(sample_candidate_doses(rng, self.spec.num_candidate_samples))

    def min_q(self, states: np.ndarray, actions: np.ndarray, nets=None, chunk: int = 1024) -> np.ndarray:
        """min(Q_a, Q_b)(s, a) over the (A, da) or per-state (B, A, da) action block, in state chunks."""
        nets = self.online if nets is None else nets
        out = []
        for i in range(0, len(states), chunk):
            s = states[i : i + chunk]
            a = actions if actions.ndim == 2 else actions[i : i + chunk]
            out.append(np.minimum(nets[0](s, a), nets[1](s, a)).astype(np.float64))
        return np.concatenate(out, axis=0) if out else np.zeros((0, actions.shape[-2]))

    def q_all(self, states: np.ndarray, nets=None, masks: Optional[np.ndarray] = None) -> np.ndarray:
        """min over ``nets`` of Q(s, a) for every enumerated action; invalid entries are -inf."""
        if not self.spec.is_enumerable or self.spec.is_recurrent:
            raise ValueError("q_all applies to enumerable feedforward spaces")
        q = self.min_q(states, self.spec.action_features(), nets)
        if masks is not None:
            q = np.where(masks, q, -np.inf)
        return q

    def q_sequence(self, states: np.ndarray, nets=None) -> np.ndarray:
        """min-Q over a batch of sequences (B, L, d) in eval mode, from a zero hidden state."""
        nets = self.online if nets is None else nets
        return np.minimum(nets[0](states), nets[1](states)).astype(np.float64)

    # -- persistence ----------------------------------------------------------

    def save(self, path, extra_meta: Optional[dict] = None) -> None:
        tensors = {}
        for name, net in (("q1", self.q1), ("q2", self.q2), ("target1", self.target1), ("target2", self.target2)):
            for k, v in net.params.items():
                tensors[f"{name}.{k}"] = v
        for name, opt in (("opt1", self.opt1), ("opt2", self.opt2)):
            for k, v in opt.state_dict().items():
                tensors[f"{name}.{k}"] = v
        tensors["candidate_rng_state"] = np.array(_rng_state_json(self.candidate_rng))
        meta = {
            "spec": spec_to_dict(self.spec),
            "config": asdict(self.config),
            "state_dim": self.state_dim,
            "norm_stats": self.norm_stats.to_dict() if self.norm_stats else None,
            "log": self.log,
            "updates": self.updates,
        }
        meta.update(extra_meta or {})
        save_tensors(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "QModel":
        tensors, meta = load_tensors(path)
        cfg = meta["config"]
        cfg["hidden"] = tuple(cfg["hidden"])
        config = TrainConfig(**cfg)
        stats = NormStats.from_dict(meta["norm_stats"]) if meta.get("norm_stats") else None
        model = cls(spec_from_dict(meta["spec"]), int(meta["state_dim"]), config, stats)
        for name, net in (("q1", model.q1), ("q2", model.q2), ("target1", model.target1), ("target2", model.target2)):
            net.load_state_dict({k: tensors[f"{name}.{k}"] for k in net.params})
        for name, opt in (("opt1", model.opt1), ("opt2", model.opt2)):
            prefix = f"{name}."
            opt.load_state_dict({k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)})
        model.candidate_rng.bit_generator.state = _rng_state_from_json(str(tensors["candidate_rng_state"]))
        model.log = list(meta.get("log", []))
        model.updates = int(meta.get("updates", 0))
        model.meta = meta
        return model


def _rng_state_json(rng: np.random.Generator) -> str:
    import json

    return json.dumps(rng.bit_generator.state)


def _rng_state_from_json(text: str) -> dict:
    import json

    return json.loads(text)


def spec_to_dict(spec: ActionSpaceSpec) -> dict:
    d = asdict(spec)
    d["kind"] = spec.kind.value
    return d


def spec_from_dict(d: dict) -> ActionSpaceSpec:
    return ActionSpaceSpec(**d)


# -- losses -----------------------------------------------------------------------


def _logsumexp(q: np.ndarray, axis=-1) -> np.ndarray:
    m = np.max(q, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.sum(np.exp(q - m), axis=axis, keepdims=True))).squeeze(axis)


def td_targets(batch: TransitionTable, model: QModel, gamma: Optional[float] = None,
               rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """r + gamma * max over valid a' of min(target1, target2)(s', a'); terminal rows get r."""
    gamma = model.config.gamma if gamma is None else gamma
    spec = model.spec
    if spec.kind is ActionKind.DUAL_MIXED:
        acts = model.candidate_features(rng)
        t1, t2 = model.targets
        q_next = np.minimum(t1(batch.next_states, acts), t2(batch.next_states, acts)).astype(np.float64)
    else:
        q_next = model.q_all(batch.next_states, nets=model.targets, masks=batch.next_masks)
    best = q_next.max(axis=1)
    assert np.all(np.isfinite(best[batch.dones < 1])), "no valid next action under the mask"
    best = np.where(batch.dones > 0, 0.0, best)
    return batch.rewards + gamma * best


def _cql_from_q(q: np.ndarray, data_col: np.ndarray, mask: Optional[np.ndarray], alpha: float,
                log_correction: float = 0.0):
    """Penalty alpha * mean(logsumexp_valid(q) + correction - q[data]) and its gradient w.r.t. q."""
    B = q.shape[0]
    qm = q if mask is None else np.where(mask, q, -np.inf)
    lse = _logsumexp(qm, axis=1)
    rows = np.arange(B)
    q_data = q[rows, data_col]
    penalty = alpha * float(np.mean(lse + log_correction - q_data))
    probs = np.exp(qm - lse[:, None])
    grad = probs
    grad[rows, data_col] -= 1.0
    return penalty, grad * (alpha / B)


def _net_q_for_update(model: QModel, net, batch: TransitionTable, cand: Optional[np.ndarray]):
    """Forward pass for one online net; returns (q block, data column per row, mask, cache, correction)."""
    spec = model.spec
    B = len(batch)
    if spec.kind is ActionKind.DUAL_MIXED:
        if cand is None:
            q, cache = net.forward(batch.states, batch.action_feats[:, None, :])
            return q, np.zeros(B, dtype=int), None, cache, 0.0
        K = len(cand)
        acts = np.concatenate([np.broadcast_to(cand, (B, K, 2)), batch.action_feats[:, None, :]], axis=1)
        q, cache = net.forward(batch.states, acts)
        return q, np.full(B, K), None, cache, math.log(1.0 / (K + 1))
    if cand is None:
        q, cache = net.forward(batch.states, batch.action_feats[:, None, :])
        return q, np.zeros(B, dtype=int), None, cache, 0.0
    q, cache = net.forward(batch.states, spec.action_features())
    return q, batch.actions, batch.masks, cache, 0.0


def cql_penalty(model: QModel, batch: TransitionTable, spec: Optional[ActionSpaceSpec] = None,
                alpha: Optional[float] = None, rng: Optional[np.random.Generator] = None) -> float:
    """Conservative penalty summed over the two online networks."""
    alpha = model.config.alpha if alpha is None else alpha
    if alpha == 0:
        return 0.0
    spec = model.spec if spec is None else spec
    cand = model.candidate_features(rng) if spec.kind is ActionKind.DUAL_MIXED else spec.action_features()
    total = 0.0
    for net in model.online:
        q, col, mask, _, corr = _net_q_for_update(model, net, batch, cand)
        total += _cql_from_q(q.astype(np.float64), col, mask, alpha, corr)[0]
    return total


def _feedforward_step(model: QModel, batch: TransitionTable, rng: np.random.Generator) -> dict:
    cfg = model.config
    y = td_targets(batch, model, rng=rng)
    need_all = cfg.alpha > 0
    cand = None
    if need_all:
        cand = model.candidate_features(rng) if model.spec.kind is ActionKind.DUAL_MIXED else model.spec.action_features()
    B = len(batch)
    out = {"td_loss": 0.0, "cql_penalty": 0.0, "q_mean": 0.0, "grad_norm": 0.0}
    for net, opt in ((model.q1, model.opt1), (model.q2, model.opt2)):
        q, col, mask, cache, corr = _net_q_for_update(model, net, batch, cand)
        q64 = q.astype(np.float64)
        rows = np.arange(B)
        q_data = q64[rows, col]
        err = q_data - y
        td = float(np.mean(err ** 2))
        dq = np.zeros_like(q64)
        dq[rows, col] = 2.0 * err / B
        pen = 0.0
        if need_all:
            pen, dpen = _cql_from_q(q64, col, mask, cfg.alpha, corr)
            dq += dpen
        grads = net.backward(cache, dq)
        out["grad_norm"] += backward_and_step(net, grads, opt, cfg.clip_norm, loss=td + pen) / 2
        out["td_loss"] += td / 2
        out["cql_penalty"] += pen
        out["q_mean"] += float(q_data.mean()) / 2
    return out


def _recurrent_step(model: QModel, batch, rng: np.random.Generator) -> tuple[dict, np.ndarray]:
    cfg, spec = model.config, model.spec
    bi, L = spec.burn_in, spec.burn_in + spec.seq_len
    S = batch.states
    q_next = model.q_sequence(S, nets=model.targets)[:, 1:]
    y = batch.rewards + cfg.gamma * (1.0 - batch.dones) * q_next.max(axis=2)
    y = y[:, bi:]
    a = batch.actions[:, bi:]
    m = batch.mask[:, bi:].astype(np.float64) * batch.weights[:, None]
    n = max(float(batch.mask[:, bi:].sum()), 1.0)
    out = {"td_loss": 0.0, "cql_penalty": 0.0, "q_mean": 0.0, "grad_norm": 0.0}
    td_abs = np.zeros(len(S))
    for net, opt in ((model.q1, model.opt1), (model.q2, model.opt2)):
        state = None
        if bi > 0:
            _, state, _ = net.forward(S[:, :bi], train=True, rng=rng)
        q, _, cache = net.forward(S[:, bi:L], state=state, train=True, rng=rng)
        q64 = q.astype(np.float64)
        q_data = np.take_along_axis(q64, a[..., None], axis=2)[..., 0]
        err = q_data - y
        td = float(np.sum(m * err ** 2) / n)
        dq = np.zeros_like(q64)
        np.put_along_axis(dq, a[..., None], (2.0 * m * err / n)[..., None], axis=2)
        pen = 0.0
        if cfg.alpha > 0:
            lse = _logsumexp(q64, axis=2)
            pen = cfg.alpha * float(np.sum(m * (lse - q_data)) / n)
            probs = np.exp(q64 - lse[..., None])
            onehot = np.zeros_like(q64)
            np.put_along_axis(onehot, a[..., None], 1.0, axis=2)
            dq += (cfg.alpha / n) * m[..., None] * (probs - onehot)
        grads = net.backward(cache, dq)
        out["grad_norm"] += backward_and_step(net, grads, opt, cfg.clip_norm, loss=td + pen) / 2
        out["td_loss"] += td / 2
        out["cql_penalty"] += pen
        real = batch.mask[:, bi:]
        out["q_mean"] += float(q_data[real].mean()) / 2 if real.any() else 0.0
        td_abs += (np.abs(err) * real).sum(axis=1) / np.maximum(real.sum(axis=1), 1) / 2
    return out, td_abs


# -- training --------------------------------------------------------------------


def _end_epoch(model: QModel, record: dict, callback, checkpoint) -> None:
    model.log.append(record)
    if callback is not None:
        callback(record)
    every = model.config.checkpoint_every
    if checkpoint is not None and every and (record["epoch"] + 1) % every == 0:
        checkpoint(model, record["epoch"])


def _index_stream(n: int, batch: int, rng: np.random.Generator):
    """Endless minibatches over shuffled passes through ``range(n)``."""
    perm, pos = rng.permutation(n), 0
    while True:
        if pos + batch <= n:
            yield perm[pos : pos + batch]
            pos += batch
        else:
            head = perm[pos:]
            perm, pos = rng.permutation(n), batch - len(head)
            yield np.concatenate([head, perm[:pos]]) if n >= batch else np.concatenate([head, perm])[:batch]


def train_on_table(table: TransitionTable, spec: ActionSpaceSpec, config: TrainConfig = TrainConfig(),
                   state_dim: Optional[int] = None, norm_stats: Optional[NormStats] = None,
                   model: Optional[QModel] = None, callback=None, checkpoint=None) -> QModel:
    """Train a feedforward model on an explicit transition table."""
    if spec.is_recurrent:
        raise ValueError("recurrent specs train on sequences; use train()")
    state_dim = table.states.shape[1] if state_dim is None else state_dim
    model = QModel(spec, state_dim, config, norm_stats) if model is None else model
    if config.reward_scale != 1.0:
        table = replace(table, rewards=table.rewards * config.reward_scale)
    rng = np.random.default_rng([config.seed, 1])
    n = len(table)
    per_epoch = config.batches_per_epoch or max(1, math.ceil(n / config.batch_size))
    stream = _index_stream(n, min(config.batch_size, n) if n < config.batch_size else config.batch_size, rng)
    for epoch in range(config.epochs):
        acc = {"td_loss": 0.0, "cql_penalty": 0.0, "q_mean": 0.0, "grad_norm": 0.0}
        for b in range(per_epoch):
            batch = table.take(next(stream))
            try:
                stats = _feedforward_step(model, batch, rng)
            except NonFiniteError as exc:
                raise TrainingError(f"epoch {epoch} batch {b}: {exc}") from exc
            for k in acc:
                acc[k] += stats[k] / per_epoch
            model.updates += 1
            if model.updates % config.target_update_every == 0:
                model.soft_update_targets()
        _end_epoch(model, {"epoch": epoch, **acc}, callback, checkpoint)
    return model


def build_sequence_table(episodes: Sequence[Episode], spec: ActionSpaceSpec) -> SequenceTable:
    samples = build_sequences([ep.n_transitions for ep in episodes], spec.seq_len, spec.burn_in)
    return SequenceTable(
        samples,
        [model_states(ep, spec) for ep in episodes],
        [logged_action_indices(ep, spec) for ep in episodes],
        [ep.rewards for ep in episodes],
        [ep.mortality for ep in episodes],
    )


def train_recurrent(table: SequenceTable, spec: ActionSpaceSpec, config: TrainConfig = TrainConfig(),
                    state_dim: Optional[int] = None, norm_stats: Optional[NormStats] = None,
                    model: Optional[QModel] = None, callback=None, checkpoint=None) -> QModel:
    state_dim = table.states.shape[2] if state_dim is None else state_dim
    model = QModel(spec, state_dim, config, norm_stats) if model is None else model
    if config.reward_scale != 1.0:
        table = copy.copy(table)
        table.rewards = table.rewards * config.reward_scale
    buffer = PrioritizedSequenceReplay(table, config.priority)
    rng = np.random.default_rng([config.seed, 2])
    per_epoch = config.batches_per_epoch or max(1, math.ceil(len(table) / config.batch_size))
    for epoch in range(config.epochs):
        acc = {"td_loss": 0.0, "cql_penalty": 0.0, "q_mean": 0.0, "grad_norm": 0.0}
        for b in range(per_epoch):
            batch = buffer.sample(config.batch_size, rng)
            try:
                stats, td_abs = _recurrent_step(model, batch, rng)
            except NonFiniteError as exc:
                raise TrainingError(f"epoch {epoch} batch {b}: {exc}") from exc
            buffer.update_priorities(batch.leaves, td_abs)
            for k in acc:
                acc[k] += stats[k] / per_epoch
            model.updates += 1
            if model.updates % config.target_update_every == 0:
                model.soft_update_targets()
        model.buffer_stats = buffer.stats()
        _end_epoch(model, {"epoch": epoch, **acc}, callback, checkpoint)
    return model


def train(dataset: "Cohort | Sequence[Episode]", config: TrainConfig = TrainConfig(),
          spec: ActionSpaceSpec = ActionSpaceSpec(), callback=None, checkpoint=None) -> QModel:
    """Train on annotated (and normalized) episodes; a Cohort contributes its train split.

    ``callback(record)`` sees every epoch's metrics; ``checkpoint(model, epoch)``
    runs every ``config.checkpoint_every`` epochs.
    """
    stats = None
    if isinstance(dataset, Cohort):
        stats = dataset.norm_stats
        episodes = dataset.split("train") if dataset.split_assignment is not None else list(dataset.episodes)
    else:
        episodes = list(dataset)
    if not episodes:
        raise ValueError("no training episodes")
    feature_dim = episodes[0].features.shape[1]
    state_dim = state_dim_for(spec, feature_dim)
    if spec.is_recurrent:
        return train_recurrent(build_sequence_table(episodes, spec), spec, config, state_dim, stats,
                               callback=callback, checkpoint=checkpoint)
    return train_on_table(build_transition_table(episodes, spec), spec, config, state_dim, stats,
                          callback=callback, checkpoint=checkpoint)


# -- acting ------------------------------------------------------------------------


@dataclass
class EpisodeDecisions:
    """Greedy decisions of a model along one logged episode (T transitions)."""

    greedy_index: np.ndarray   # joint index on the 5x5 analysis grid
    greedy_vp1: np.ndarray
    greedy_dose: np.ndarray
    q_greedy: np.ndarray       # min-Q at the greedy action, in reward units
    q_logged: np.ndarray       # min-Q at the logged clinician action
    logged_index: np.ndarray

    def __post_init__(self):
        self.q_greedy = np.asarray(self.q_greedy, dtype=np.float64)
        self.q_logged = np.asarray(self.q_logged, dtype=np.float64)


def recurrent_window_q(model: QModel, episode_states: Sequence[np.ndarray]) -> np.ndarray:
    """min-Q at every step, each computed from a zero state over the last
    ``burn_in + seq_len`` steps, which is the context seen in training.

    The network is causal, so one prefix pass covers the first W steps of
    every episode and later steps use one W-step window each.
    """
    W = model.spec.burn_in + model.spec.seq_len
    d = model.state_dim
    prefix = np.zeros((len(episode_states), W, d))
    windows, owners = [], []
    for i, S in enumerate(episode_states):
        n = min(len(S), W)
        prefix[i, :n] = S[:n]
        for t in range(W, len(S)):
            windows.append(S[t - W + 1 : t + 1])
            owners.append((i, t))
    q_prefix = model.q_sequence(prefix)
    q_win = model.q_sequence(np.stack(windows))[:, -1] if windows else None
    out = [q_prefix[i, : min(len(S), W)] for i, S in enumerate(episode_states)]
    out = [list(o) for o in out]
    for j, (i, t) in enumerate(owners):
        out[i].append(q_win[j])
    return np.concatenate([np.asarray(o).reshape(-1, model.spec.n_actions) for o in out])


def decide_episodes(model: QModel, episodes: Sequence[Episode],
                    rng: Optional[np.random.Generator] = None) -> EpisodeDecisions:
    """Greedy actions and Q-values on every state of (normalized) logged episodes.

    Arrays are concatenated over episodes in order.  One DualMixed candidate
    set is drawn per call and shared by all states.
    """
    spec = model.spec
    lengths = [ep.n_transitions for ep in episodes]
    logged = np.concatenate([logged_action_indices(ep, spec) for ep in episodes])
    vp1_log = np.concatenate([ep.vp1[:T] for ep, T in zip(episodes, lengths)])
    vp2_log = np.concatenate([ep.vp2[:T] for ep, T in zip(episodes, lengths)])
    rows = np.arange(len(logged))
    if spec.is_recurrent:
        q = recurrent_window_q(model, [model_states(ep, spec)[:T] for ep, T in zip(episodes, lengths)])
        g = np.argmax(q, axis=1)
        q = q / model.config.reward_scale
        return EpisodeDecisions(g, np.ones(len(g), dtype=int), spec.bin_centers[g], q[rows, g], q[rows, logged], logged)
    S = np.concatenate([model_states(ep, spec)[:T] for ep, T in zip(episodes, lengths)])
    if spec.kind is ActionKind.DUAL_MIXED:
        acts = model.candidate_features(rng)
        q = model.min_q(S, acts)
        g = np.argmax(q, axis=1)
        vp1 = acts[g, 0].astype(int)
        dose = acts[g, 1]
        logged_feats = np.stack([vp1_log.astype(float), vp2_log], axis=1)[:, None, :]
        q_log = model.min_q(S, logged_feats)[:, 0]
        idx = vp1 * spec.n_bins + doses_to_bins(dose, spec.n_bins)
        scale = model.config.reward_scale
        return EpisodeDecisions(idx, vp1, dose, q[rows, g] / scale, q_log / scale, logged)
    masks = cur = None
    if spec.kind is ActionKind.STEPWISE:
        cur = np.concatenate([current_doses(ep, spec)[:T] for ep, T in zip(episodes, lengths)])
        masks = stepwise_valid_mask(spec, cur)
    q = model.q_all(S, masks=masks)
    g = np.argmax(q, axis=1)
    vp1 = spec.vp1_of(g)
    if spec.kind is ActionKind.BINARY:
        dose = vp2_log.copy()
    elif spec.kind is ActionKind.STEPWISE:
        dose = np.round((cur + spec.deltas[g % spec.n_sub]) / spec.step_size) * spec.step_size
    else:
        dose = spec.bin_centers[g % spec.n_bins]
    q = q / model.config.reward_scale
    return EpisodeDecisions(g, vp1, dose, q[rows, g], q[rows, logged], logged)


def decide_episode(model: QModel, episode: Episode, rng: Optional[np.random.Generator] = None) -> EpisodeDecisions:
    return decide_episodes(model, [episode], rng)


def greedy_action(model: QModel, state: np.ndarray, spec: Optional[ActionSpaceSpec] = None,
                  current_dose: Optional[float] = None, rng: Optional[np.random.Generator] = None) -> DoseAction:
    """Best action at one model-input state (a (L, d) history for recurrent models).

    Ties go to the lowest joint index.  Stepwise models return the absolute
    dose after applying the chosen change.
    """
    spec = model.spec if spec is None else spec
    state = np.asarray(state, dtype=float)
    if spec.is_recurrent:
        seq = state[None] if state.ndim == 2 else state[None, None]
        q = model.q_sequence(seq)[0, -1]
        return DoseAction(1, float(spec.bin_centers[int(np.argmax(q))]))
    S = state[None]
    if spec.kind is ActionKind.DUAL_MIXED:
        acts = model.candidate_features(rng)
        q = np.minimum(model.q1(S, acts), model.q2(S, acts))[0]
        i = int(np.argmax(q))
        return DoseAction(int(acts[i, 0]), float(acts[i, 1]))
    if spec.kind is ActionKind.STEPWISE:
        if current_dose is None:
            raise ValueError("stepwise greedy action needs the current dose")
        q = model.q_all(S, masks=stepwise_valid_mask(spec, current_dose)[None])[0]
        i = int(np.argmax(q))
        vp1, sub = divmod(i, spec.n_sub)
        return DoseAction(int(vp1), apply_delta(spec, current_dose, float(spec.deltas[sub])))
    q = model.q_all(S)[0]
    i = int(np.argmax(q))
    if spec.kind is ActionKind.BINARY:
        dose = float(current_dose) if current_dose is not None else float(state[-1])
        return DoseAction(i, dose)
    return spec.decode(i)
